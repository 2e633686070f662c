#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mvstta/eval.hpp"
#include "mvstta/gradsuite.hpp"
#include "mvstta/metatta.hpp"
#include "mvstta/mvsnet.hpp"
#include "mvstta/scenegen.hpp"

namespace fs = std::filesystem;
using namespace mvstta;

namespace {

struct GlobalOpts {
    std::uint64_t seed = 0;
    std::string config_path;
    std::string out_dir = "out";
};

void add_global(CLI::App* cmd, GlobalOpts& g) {
    cmd->add_option("--seed", g.seed, "run seed");
    cmd->add_option("--config", g.config_path, "key = value config file");
    cmd->add_option("--out", g.out_dir, "output directory");
}

eval::ExperimentConfig load_config(const GlobalOpts& g) {
    eval::ExperimentConfig cfg;
    if (!g.config_path.empty()) cfg = eval::read_config(g.config_path);
    cfg.meta.seed = g.seed;
    return cfg;
}

void prepare_out(const GlobalOpts& g, const eval::ExperimentConfig& cfg) {
    fs::create_directories(g.out_dir);
    eval::write_config((fs::path(g.out_dir) / "config.txt").string(), cfg);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string metrics_csv(const eval::MetricsReport& rep) {
    std::string s = "# metrics pooled over all valid pixels of all test samples\n";
    s += "rel,tau103,tau110,pixel_count\n";
    s += fmt(rep.rel) + "," + fmt(rep.tau_103) + "," + fmt(rep.tau_110) + "," +
         std::to_string(rep.pixel_count) + "\n";
    return s;
}

// Grayscale visualization, depth mapped linearly over [d_min, d_max].
Tensor depth_vis(const Tensor& depth, double d_min, double d_max) {
    Tensor img({depth.shape[0], depth.shape[1], 3});
    for (int i = 0; i < depth.numel(); ++i) {
        double v = std::clamp((depth[i] - d_min) / (d_max - d_min), 0.0, 1.0);
        img[3 * i] = img[3 * i + 1] = img[3 * i + 2] = v;
    }
    return img;
}

void write_depth_maps(const std::string& out_dir, const std::vector<scene::SceneSample>& samples,
                      const net::ModelParams& params, const meta::MetaConfig& cfg, bool adapt) {
    char name[64];
    for (size_t i = 0; i < samples.size(); ++i) {
        const scene::SceneSample& s = samples[i];
        net::ModelParams use = adapt ? meta::test_time_adapt(params, s, cfg) : params;
        std::vector<geo::PosedImage> views(s.views.begin(), s.views.begin() + cfg.n_views);
        Tensor pred = net::forward_depth(use, views, s.hyps);
        std::snprintf(name, sizeof name, "sample_%03zu", i);
        fs::path base = fs::path(out_dir) / name;
        scene::write_pfm(base.string() + "_gt.pfm", s.gt_depth);
        scene::write_pfm(base.string() + "_pred.pfm", pred);
        scene::write_ppm(base.string() + "_gt.ppm", depth_vis(s.gt_depth, s.hyps.d_min, s.hyps.d_max));
        scene::write_ppm(base.string() + "_pred.ppm", depth_vis(pred, s.hyps.d_min, s.hyps.d_max));
    }
}

std::vector<scene::SceneSample> load_scenes(const std::string& dir) {
    if (!fs::is_directory(dir))
        throw std::runtime_error("scene directory does not exist: " + dir);
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) names.push_back(e.path().string());
    std::sort(names.begin(), names.end());
    std::vector<scene::SceneSample> out;
    for (const std::string& n : names) out.push_back(scene::read_scene(n));
    if (out.empty()) throw std::runtime_error("no scenes found in: " + dir);
    return out;
}

std::vector<scene::SceneSample> train_scenes(const eval::ExperimentConfig& cfg,
                                             std::uint64_t seed, const std::string& scenes_dir) {
    if (!scenes_dir.empty()) return load_scenes(scenes_dir);
    scene::SceneSpec sp = cfg.spec;
    sp.seed = seed;
    sp.n_views = cfg.meta.n_views;
    sp.m_views = cfg.meta.m_views;
    return scene::generate_dataset(sp, cfg.train_count, scene::Split::Train);
}

std::vector<scene::SceneSample> test_scenes(const eval::ExperimentConfig& cfg,
                                            std::uint64_t seed, const std::string& scenes_dir) {
    if (!scenes_dir.empty()) return load_scenes(scenes_dir);
    scene::SceneSpec sp = cfg.spec;
    sp.seed = seed;
    sp.n_views = cfg.meta.n_views;
    sp.m_views = cfg.meta.m_views;
    return scene::generate_dataset(sp, cfg.test_count, scene::Split::Test);
}

std::string trace_csv(const char* col, const std::vector<double>& xs) {
    std::string s = std::string("epoch,") + col + "\n";
    for (size_t i = 0; i < xs.size(); ++i) s += std::to_string(i) + "," + fmt(xs[i]) + "\n";
    return s;
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, int count) {
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < count; ++i) seeds.push_back(first + static_cast<std::uint64_t>(i));
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale multi-view stereo with meta-learned test-time adaptation"};
    app.require_subcommand(1);

    GlobalOpts g;

    auto* gen = app.add_subcommand("gen-scenes", "generate synthetic scene directories");
    int gen_count = 4;
    std::string gen_split = "train";
    add_global(gen, g);
    gen->add_option("--count", gen_count, "number of scenes");
    gen->add_option("--split", gen_split, "train or test")
        ->check(CLI::IsMember({"train", "test"}));

    auto* pre = app.add_subcommand("pretrain", "supervised pretraining on the primary loss");
    std::string pre_scenes;
    add_global(pre, g);
    pre->add_option("--scenes", pre_scenes, "read scenes from this directory");

    auto* mt = app.add_subcommand("meta-train", "meta-train for test-time adaptation");
    std::string mt_scenes, mt_init;
    add_global(mt, g);
    mt->add_option("--scenes", mt_scenes, "read scenes from this directory");
    mt->add_option("--init", mt_init, "starting checkpoint (default: pretrain first)");

    auto* ae = app.add_subcommand("adapt-eval", "evaluate with or without test-time adaptation");
    std::string ae_scenes, ae_ckpt;
    int ae_steps = -1;
    bool ae_no_adapt = false;
    add_global(ae, g);
    ae->add_option("--scenes", ae_scenes, "read test scenes from this directory");
    ae->add_option("--ckpt", ae_ckpt, "checkpoint to evaluate (default: train from scratch)");
    ae->add_option("--tta-steps", ae_steps, "override adaptation step count");
    ae->add_flag("--no-adapt", ae_no_adapt, "skip test-time adaptation");

    auto* ab = app.add_subcommand("ablation", "baseline / TTA / meta-trained / full table");
    int ab_seeds = 3;
    add_global(ab, g);
    ab->add_option("--seeds", ab_seeds, "number of dataset seeds");

    auto* ss = app.add_subcommand("step-sweep", "rel vs TTA step count");
    int ss_seeds = 3;
    std::vector<int> ss_steps = {0, 1, 2, 4, 8, 16};
    add_global(ss, g);
    ss->add_option("--seeds", ss_seeds, "number of dataset seeds");
    ss->add_option("--steps", ss_steps, "TTA step counts");

    auto* ks = app.add_subcommand("k-sweep", "tau(1.03) vs top-K view selection");
    int ks_seeds = 3;
    std::vector<int> ks_ks = {1, 2, 3, 4};
    add_global(ks, g);
    ks->add_option("--seeds", ks_seeds, "number of dataset seeds");
    ks->add_option("--ks", ks_ks, "K values");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every operation");
    add_global(gc, g);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            eval::ExperimentConfig cfg = load_config(g);
            prepare_out(g, cfg);
            scene::SceneSpec sp = cfg.spec;
            sp.seed = g.seed;
            sp.n_views = cfg.meta.n_views;
            sp.m_views = cfg.meta.m_views;
            scene::Split split = gen_split == "train" ? scene::Split::Train : scene::Split::Test;
            std::vector<scene::SceneSample> scenes = scene::generate_dataset(sp, gen_count, split);
            char name[64];
            for (size_t i = 0; i < scenes.size(); ++i) {
                std::snprintf(name, sizeof name, "scene_%04zu", i);
                scene::write_scene((fs::path(g.out_dir) / name).string(), scenes[i]);
            }
            std::printf("wrote %zu %s scenes to %s\n", scenes.size(), gen_split.c_str(),
                        g.out_dir.c_str());
        } else if (pre->parsed()) {
            eval::ExperimentConfig cfg = load_config(g);
            prepare_out(g, cfg);
            std::vector<scene::SceneSample> train = train_scenes(cfg, g.seed, pre_scenes);
            net::Arch arch;
            arch.feat_channels = cfg.feat_channels;
            meta::PretrainResult res = meta::pretrain(net::init_params(arch, g.seed), train,
                                                      cfg.pretrain_epochs, cfg.pretrain_lr,
                                                      g.seed, cfg.meta.n_views);
            fs::path out(g.out_dir);
            net::save_checkpoint((out / "pretrained.ckpt").string(), res.params);
            write_text((out / "pretrain_trace.csv").string(),
                       trace_csv("primary_loss", res.loss_trace));
            eval::MetricsReport rep = eval::evaluate(res.params, train, cfg.meta, false);
            write_text((out / "metrics.csv").string(), metrics_csv(rep));
            write_depth_maps(g.out_dir, train, res.params, cfg.meta, false);
            std::printf("pretrained %d epochs, train rel %.4f%%\n", cfg.pretrain_epochs, rep.rel);
        } else if (mt->parsed()) {
            eval::ExperimentConfig cfg = load_config(g);
            prepare_out(g, cfg);
            std::vector<scene::SceneSample> train = train_scenes(cfg, g.seed, mt_scenes);
            net::Arch arch;
            arch.feat_channels = cfg.feat_channels;
            net::ModelParams start =
                mt_init.empty()
                    ? meta::pretrain(net::init_params(arch, g.seed), train, cfg.pretrain_epochs,
                                     cfg.pretrain_lr, g.seed, cfg.meta.n_views)
                          .params
                    : net::load_checkpoint(mt_init);
            meta::MetaTrainResult res = meta::meta_train(start, train, cfg.meta);
            fs::path out(g.out_dir);
            net::save_checkpoint((out / "meta.ckpt").string(), res.params);
            std::string tr = "iteration,inner_photo,outer_primary\n";
            for (size_t i = 0; i < res.trace.outer_primary.size(); ++i)
                tr += std::to_string(i) + "," + fmt(res.trace.inner_photo[i]) + "," +
                      fmt(res.trace.outer_primary[i]) + "\n";
            write_text((out / "meta_trace.csv").string(), tr);
            eval::MetricsReport rep = eval::evaluate(res.params, train, cfg.meta, false);
            write_text((out / "metrics.csv").string(), metrics_csv(rep));
            write_depth_maps(g.out_dir, train, res.params, cfg.meta, false);
            std::printf("meta-trained %d iterations, train rel %.4f%%\n", cfg.meta.meta_iterations,
                        rep.rel);
        } else if (ae->parsed()) {
            eval::ExperimentConfig cfg = load_config(g);
            if (ae_steps >= 0) cfg.meta.tta_steps = ae_steps;
            prepare_out(g, cfg);
            std::vector<scene::SceneSample> test = test_scenes(cfg, g.seed, ae_scenes);
            net::ModelParams params = ae_ckpt.empty()
                                          ? eval::prepare_run(cfg, g.seed).meta_trained
                                          : net::load_checkpoint(ae_ckpt);
            bool adapt = !ae_no_adapt;
            eval::MetricsReport rep = eval::evaluate(params, test, cfg.meta, adapt);
            write_text((fs::path(g.out_dir) / "metrics.csv").string(), metrics_csv(rep));
            write_depth_maps(g.out_dir, test, params, cfg.meta, adapt);
            std::printf("rel %.4f%%  tau(1.03) %.4f%%  tau(1.10) %.4f%%  (%lld px, adapt=%s)\n",
                        rep.rel, rep.tau_103, rep.tau_110, rep.pixel_count,
                        adapt ? "yes" : "no");
        } else if (ab->parsed()) {
            eval::ExperimentConfig cfg = load_config(g);
            prepare_out(g, cfg);
            std::vector<eval::RunArtifacts> runs;
            for (std::uint64_t s : seed_range(g.seed, ab_seeds))
                runs.push_back(eval::prepare_run(cfg, s));
            std::string csv = eval::ablation_csv(eval::run_ablation(runs, cfg));
            write_text((fs::path(g.out_dir) / "ablation.csv").string(), csv);
            write_depth_maps(g.out_dir, runs[0].test_set, runs[0].meta_trained, cfg.meta, true);
            std::fputs(csv.c_str(), stdout);
        } else if (ss->parsed()) {
            eval::ExperimentConfig cfg = load_config(g);
            prepare_out(g, cfg);
            std::vector<eval::RunArtifacts> runs;
            for (std::uint64_t s : seed_range(g.seed, ss_seeds))
                runs.push_back(eval::prepare_run(cfg, s));
            std::string csv = eval::sweep_csv(eval::step_sweep(runs, cfg, ss_steps));
            write_text((fs::path(g.out_dir) / "step_sweep.csv").string(), csv);
            write_depth_maps(g.out_dir, runs[0].test_set, runs[0].meta_trained, cfg.meta, true);
            std::fputs(csv.c_str(), stdout);
        } else if (ks->parsed()) {
            eval::ExperimentConfig cfg = load_config(g);
            prepare_out(g, cfg);
            std::vector<eval::RunArtifacts> runs;
            for (std::uint64_t s : seed_range(g.seed, ks_seeds))
                runs.push_back(eval::prepare_run(cfg, s));
            std::string csv = eval::k_csv(eval::k_sweep(runs, cfg, ks_ks));
            write_text((fs::path(g.out_dir) / "k_sweep.csv").string(), csv);
            write_depth_maps(g.out_dir, runs[0].test_set, runs[0].meta_trained, cfg.meta, true);
            std::fputs(csv.c_str(), stdout);
        } else if (gc->parsed()) {
            std::vector<gradsuite::CaseResult> results = gradsuite::run(g.seed);
            std::string csv = "case,max_rel_error\n";
            int failures = 0;
            for (const gradsuite::CaseResult& r : results) {
                char line[128];
                std::snprintf(line, sizeof line, "%s,%.3e\n", r.name.c_str(), r.err);
                csv += line;
                if (r.err >= 1e-5) {
                    ++failures;
                    std::printf("FAIL %-24s %.3e\n", r.name.c_str(), r.err);
                }
            }
            if (!g.out_dir.empty()) {
                fs::create_directories(g.out_dir);
                write_text((fs::path(g.out_dir) / "gradcheck.csv").string(), csv);
            }
            std::printf("%zu checks, max error %.3e, %d failures\n", results.size(),
                        gradsuite::max_error(results), failures);
            return failures == 0 ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
