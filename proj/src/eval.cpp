#include "mvstta/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mvstta::eval {

namespace {

void check_metric_args(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
    if (!pred.same_shape(gt) || !pred.same_shape(valid))
        throw std::invalid_argument("metrics: shape mismatch " + pred.shape_str() + " vs " +
                                    gt.shape_str() + " vs " + valid.shape_str());
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

double rel_error(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
    check_metric_args(pred, gt, valid);
    double sum = 0;
    long long cnt = 0;
    for (int i = 0; i < pred.numel(); ++i) {
        if (valid[i] == 0.0) continue;
        if (gt[i] <= 0.0) throw std::invalid_argument("rel_error: nonpositive gt on valid pixel");
        sum += std::abs(pred[i] - gt[i]) / gt[i];
        ++cnt;
    }
    if (cnt == 0) throw std::invalid_argument("rel_error: empty valid mask");
    return 100.0 * sum / static_cast<double>(cnt);
}

double inlier_ratio(const Tensor& pred, const Tensor& gt, const Tensor& valid, double t) {
    check_metric_args(pred, gt, valid);
    if (!(t > 1.0)) throw std::invalid_argument("inlier_ratio: threshold must be > 1");
    long long in = 0, cnt = 0;
    for (int i = 0; i < pred.numel(); ++i) {
        if (valid[i] == 0.0) continue;
        if (gt[i] <= 0.0)
            throw std::invalid_argument("inlier_ratio: nonpositive gt on valid pixel");
        ++cnt;
        if (pred[i] <= 0.0) continue;
        double r = std::max(pred[i] / gt[i], gt[i] / pred[i]);
        if (r < t) ++in;
    }
    if (cnt == 0) throw std::invalid_argument("inlier_ratio: empty valid mask");
    return 100.0 * static_cast<double>(in) / static_cast<double>(cnt);
}

MetricsReport evaluate(const net::ModelParams& params,
                       const std::vector<scene::SceneSample>& test_set,
                       const meta::MetaConfig& cfg, bool adapt) {
    if (test_set.empty()) throw std::invalid_argument("evaluate: empty test set");
    cfg.validate();
    double rel_sum = 0;
    long long cnt = 0, in103 = 0, in110 = 0;
    for (const scene::SceneSample& s : test_set) {
        net::ModelParams use = adapt ? meta::test_time_adapt(params, s, cfg) : params;
        std::vector<geo::PosedImage> views(s.views.begin(), s.views.begin() + cfg.n_views);
        Tensor pred = net::forward_depth(use, views, s.hyps);
        for (int i = 0; i < pred.numel(); ++i) {
            if (s.valid[i] == 0.0) continue;
            double g = s.gt_depth[i];
            if (g <= 0.0) throw std::invalid_argument("evaluate: nonpositive gt on valid pixel");
            rel_sum += std::abs(pred[i] - g) / g;
            ++cnt;
            if (pred[i] <= 0.0) continue;
            double r = std::max(pred[i] / g, g / pred[i]);
            if (r < 1.03) ++in103;
            if (r < 1.10) ++in110;
        }
    }
    if (cnt == 0) throw std::invalid_argument("evaluate: no valid pixels in test set");
    MetricsReport rep;
    rep.rel = 100.0 * rel_sum / static_cast<double>(cnt);
    rep.tau_103 = 100.0 * static_cast<double>(in103) / static_cast<double>(cnt);
    rep.tau_110 = 100.0 * static_cast<double>(in110) / static_cast<double>(cnt);
    rep.pixel_count = cnt;
    rep.config_echo = meta::config_to_string(cfg);
    return rep;
}

void ExperimentConfig::validate() const {
    meta.validate();
    if (train_count < 1 || test_count < 1)
        throw std::invalid_argument("config: train_count and test_count must be >= 1");
    if (pretrain_epochs < 0) throw std::invalid_argument("config: pretrain_epochs must be >= 0");
    if (pretrain_lr < 0) throw std::invalid_argument("config: pretrain_lr must be >= 0");
    if (feat_channels < 1) throw std::invalid_argument("config: feat_channels must be >= 1");
    if (spec.height < 4 || spec.width < 4)
        throw std::invalid_argument("config: scene size too small");
    if (spec.hypothesis_count < 2)
        throw std::invalid_argument("config: hypothesis_count must be >= 2");
    if (spec.d_min <= 0 || spec.d_max <= spec.d_min)
        throw std::invalid_argument("config: need 0 < d_min < d_max");
}

namespace {

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for '" + key + "': " + v);
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: bad boolean for '" + key + "': " + v);
}

}  // namespace

bool apply_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    if (meta::apply_kv(cfg.meta, key, value)) {
        if (key == "n_views") cfg.spec.n_views = cfg.meta.n_views;
        if (key == "m_views") cfg.spec.m_views = cfg.meta.m_views;
        return true;
    }
    if (key == "layout") cfg.spec.layout = scene::layout_from_name(value);
    else if (key == "height") cfg.spec.height = to_int(key, value);
    else if (key == "width") cfg.spec.width = to_int(key, value);
    else if (key == "d_min") cfg.spec.d_min = to_double(key, value);
    else if (key == "d_max") cfg.spec.d_max = to_double(key, value);
    else if (key == "hypothesis_count") cfg.spec.hypothesis_count = to_int(key, value);
    else if (key == "ring_radius") cfg.spec.ring_radius = to_double(key, value);
    else if (key == "lookat_jitter") cfg.spec.lookat_jitter = to_double(key, value);
    else if (key == "brightness_jitter") cfg.spec.brightness_jitter = to_double(key, value);
    else if (key == "checker_overlay") cfg.spec.checker_overlay = to_bool(key, value);
    else if (key == "noise_octaves") cfg.spec.noise_octaves = to_int(key, value);
    else if (key == "train_count") cfg.train_count = to_int(key, value);
    else if (key == "test_count") cfg.test_count = to_int(key, value);
    else if (key == "pretrain_epochs") cfg.pretrain_epochs = to_int(key, value);
    else if (key == "pretrain_lr") cfg.pretrain_lr = to_double(key, value);
    else if (key == "feat_channels") cfg.feat_channels = to_int(key, value);
    else return false;
    return true;
}

std::string config_to_string(const ExperimentConfig& cfg) {
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    std::string s = meta::config_to_string(cfg.meta);
    s += "layout = " + std::string(scene::layout_name(cfg.spec.layout)) + "\n";
    s += "height = " + std::to_string(cfg.spec.height) + "\n";
    s += "width = " + std::to_string(cfg.spec.width) + "\n";
    s += "d_min = " + num(cfg.spec.d_min) + "\n";
    s += "d_max = " + num(cfg.spec.d_max) + "\n";
    s += "hypothesis_count = " + std::to_string(cfg.spec.hypothesis_count) + "\n";
    s += "ring_radius = " + num(cfg.spec.ring_radius) + "\n";
    s += "lookat_jitter = " + num(cfg.spec.lookat_jitter) + "\n";
    s += "brightness_jitter = " + num(cfg.spec.brightness_jitter) + "\n";
    s += "checker_overlay = " + std::string(cfg.spec.checker_overlay ? "true" : "false") + "\n";
    s += "noise_octaves = " + std::to_string(cfg.spec.noise_octaves) + "\n";
    s += "train_count = " + std::to_string(cfg.train_count) + "\n";
    s += "test_count = " + std::to_string(cfg.test_count) + "\n";
    s += "pretrain_epochs = " + std::to_string(cfg.pretrain_epochs) + "\n";
    s += "pretrain_lr = " + num(cfg.pretrain_lr) + "\n";
    s += "feat_channels = " + std::to_string(cfg.feat_channels) + "\n";
    return s;
}

void write_config(const std::string& path, const ExperimentConfig& cfg) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("config: cannot open for writing: " + path);
    f << config_to_string(cfg);
    if (!f) throw std::runtime_error("config: write failed: " + path);
}

ExperimentConfig read_config(const std::string& path) {
    ExperimentConfig cfg;
    for (const auto& [key, value] : meta::read_kv_file(path))
        if (!apply_kv(cfg, key, value))
            throw std::invalid_argument("config: unknown key '" + key + "' in " + path);
    cfg.validate();
    return cfg;
}

RunArtifacts prepare_run(const ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    scene::SceneSpec sp = cfg.spec;
    sp.seed = seed;
    sp.n_views = cfg.meta.n_views;
    sp.m_views = cfg.meta.m_views;
    std::vector<scene::SceneSample> train = scene::generate_dataset(sp, cfg.train_count,
                                                                    scene::Split::Train);
    RunArtifacts run;
    run.test_set = scene::generate_dataset(sp, cfg.test_count, scene::Split::Test);
    net::Arch arch;
    arch.feat_channels = cfg.feat_channels;
    net::ModelParams init = net::init_params(arch, seed);
    run.baseline = meta::pretrain(init, train, cfg.pretrain_epochs, cfg.pretrain_lr, seed,
                                  cfg.meta.n_views)
                       .params;
    meta::MetaConfig mc = cfg.meta;
    mc.seed = seed;
    run.meta_trained = meta::meta_train(run.baseline, train, mc).params;
    return run;
}

namespace {

std::vector<RunArtifacts> prepare_all(const std::vector<std::uint64_t>& seeds,
                                      const ExperimentConfig& cfg) {
    if (seeds.empty()) throw std::invalid_argument("harness: need at least one seed");
    std::vector<RunArtifacts> runs;
    runs.reserve(seeds.size());
    for (std::uint64_t s : seeds) runs.push_back(prepare_run(cfg, s));
    return runs;
}

struct MeanStd {
    double mean = 0, std = 0;
};

MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd r;
    for (double x : xs) r.mean += x;
    r.mean /= static_cast<double>(xs.size());
    double ss = 0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size()));
    return r;
}

const char kPoolingNote[] = "# metrics pooled over all valid pixels of all test samples\n";

}  // namespace

std::vector<AblationRow> run_ablation(const std::vector<RunArtifacts>& runs,
                                      const ExperimentConfig& cfg) {
    if (runs.empty()) throw std::invalid_argument("run_ablation: need at least one run");
    struct Cell {
        std::vector<double> rel, t103, t110;
    };
    const char* labels[4] = {"baseline", "tta_no_meta", "meta_no_tta", "full"};
    Cell cells[4];
    for (const RunArtifacts& run : runs) {
        MetricsReport reps[4] = {
            evaluate(run.baseline, run.test_set, cfg.meta, false),
            evaluate(run.baseline, run.test_set, cfg.meta, true),
            evaluate(run.meta_trained, run.test_set, cfg.meta, false),
            evaluate(run.meta_trained, run.test_set, cfg.meta, true),
        };
        for (int i = 0; i < 4; ++i) {
            cells[i].rel.push_back(reps[i].rel);
            cells[i].t103.push_back(reps[i].tau_103);
            cells[i].t110.push_back(reps[i].tau_110);
        }
    }
    std::vector<AblationRow> rows(4);
    for (int i = 0; i < 4; ++i) {
        rows[i].label = labels[i];
        MeanStd r = mean_std(cells[i].rel);
        MeanStd a = mean_std(cells[i].t103);
        MeanStd b = mean_std(cells[i].t110);
        rows[i].rel_mean = r.mean;
        rows[i].rel_std = r.std;
        rows[i].tau103_mean = a.mean;
        rows[i].tau103_std = a.std;
        rows[i].tau110_mean = b.mean;
        rows[i].tau110_std = b.std;
    }
    return rows;
}

std::vector<AblationRow> run_ablation(const std::vector<std::uint64_t>& seeds,
                                      const ExperimentConfig& cfg) {
    return run_ablation(prepare_all(seeds, cfg), cfg);
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string s = kPoolingNote;
    s += "variant,rel_mean,rel_std,tau103_mean,tau103_std,tau110_mean,tau110_std\n";
    for (const AblationRow& r : rows)
        s += r.label + "," + fmt(r.rel_mean) + "," + fmt(r.rel_std) + "," + fmt(r.tau103_mean) +
             "," + fmt(r.tau103_std) + "," + fmt(r.tau110_mean) + "," + fmt(r.tau110_std) + "\n";
    return s;
}

std::vector<SweepRow> step_sweep(const std::vector<RunArtifacts>& runs,
                                 const ExperimentConfig& cfg, std::vector<int> steps) {
    if (runs.empty()) throw std::invalid_argument("step_sweep: need at least one run");
    if (steps.empty()) throw std::invalid_argument("step_sweep: need at least one step count");
    for (int s : steps)
        if (s < 0) throw std::invalid_argument("step_sweep: step counts must be >= 0");
    std::sort(steps.begin(), steps.end());
    std::vector<SweepRow> rows;
    for (int s : steps) {
        meta::MetaConfig mc = cfg.meta;
        mc.tta_steps = s;
        std::vector<double> rel, t103, t110;
        for (const RunArtifacts& run : runs) {
            MetricsReport rep = evaluate(run.meta_trained, run.test_set, mc, true);
            rel.push_back(rep.rel);
            t103.push_back(rep.tau_103);
            t110.push_back(rep.tau_110);
        }
        SweepRow row;
        row.steps = s;
        row.rel = mean_std(rel).mean;
        row.tau_103 = mean_std(t103).mean;
        row.tau_110 = mean_std(t110).mean;
        rows.push_back(row);
    }
    return rows;
}

std::vector<SweepRow> step_sweep(const std::vector<std::uint64_t>& seeds,
                                 const ExperimentConfig& cfg, std::vector<int> steps) {
    return step_sweep(prepare_all(seeds, cfg), cfg, std::move(steps));
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string s = kPoolingNote;
    s += "tta_steps,rel,tau103,tau110\n";
    for (const SweepRow& r : rows)
        s += std::to_string(r.steps) + "," + fmt(r.rel) + "," + fmt(r.tau_103) + "," +
             fmt(r.tau_110) + "\n";
    return s;
}

std::vector<KRow> k_sweep(const std::vector<RunArtifacts>& runs, const ExperimentConfig& cfg,
                          std::vector<int> ks) {
    if (runs.empty()) throw std::invalid_argument("k_sweep: need at least one run");
    if (ks.empty()) throw std::invalid_argument("k_sweep: need at least one K");
    for (int k : ks)
        if (k < 1 || k > cfg.meta.m_views)
            throw std::invalid_argument("k_sweep: need 1 <= K <= m_views");
    std::vector<KRow> rows;
    for (int k : ks) {
        meta::MetaConfig mc = cfg.meta;
        mc.photo.top_k = k;
        std::vector<double> rel, t103, t110;
        for (const RunArtifacts& run : runs) {
            MetricsReport rep = evaluate(run.meta_trained, run.test_set, mc, true);
            rel.push_back(rep.rel);
            t103.push_back(rep.tau_103);
            t110.push_back(rep.tau_110);
        }
        KRow row;
        row.k = k;
        row.tau_103 = mean_std(t103).mean;
        row.rel = mean_std(rel).mean;
        row.tau_110 = mean_std(t110).mean;
        rows.push_back(row);
    }
    return rows;
}

std::vector<KRow> k_sweep(const std::vector<std::uint64_t>& seeds, const ExperimentConfig& cfg,
                          std::vector<int> ks) {
    return k_sweep(prepare_all(seeds, cfg), cfg, std::move(ks));
}

std::string k_csv(const std::vector<KRow>& rows) {
    std::string s = kPoolingNote;
    s += "top_k,tau103,rel,tau110\n";
    for (const KRow& r : rows)
        s += std::to_string(r.k) + "," + fmt(r.tau_103) + "," + fmt(r.rel) + "," +
             fmt(r.tau_110) + "\n";
    return s;
}

}  // namespace mvstta::eval
