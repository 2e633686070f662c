#include "mvstta/metatta.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mvstta::meta {

using ad::Tape;
using ad::Var;

void MetaConfig::validate() const {
    if (alpha < 0 || beta < 0)
        throw std::invalid_argument("MetaConfig: alpha, beta must not be negative");
    if (inner_steps < 0 || tta_steps < 0)
        throw std::invalid_argument("MetaConfig: negative step counts");
    if (meta_batch < 1) throw std::invalid_argument("MetaConfig: meta_batch < 1");
    if (meta_iterations < 0) throw std::invalid_argument("MetaConfig: negative meta_iterations");
    if (n_views < 2) throw std::invalid_argument("MetaConfig: n_views < 2");
    if (m_views <= n_views - 1) throw std::invalid_argument("MetaConfig: need M > N - 1");
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_kv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) +
                                     ": expected key = value");
        out.emplace_back(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    return out;
}

bool apply_kv(MetaConfig& cfg, const std::string& key, const std::string& value) {
    auto d = [&value] { return std::stod(value); };
    auto i = [&value] { return std::stoi(value); };
    if (key == "alpha") cfg.alpha = d();
    else if (key == "beta") cfg.beta = d();
    else if (key == "inner_steps") cfg.inner_steps = i();
    else if (key == "tta_steps") cfg.tta_steps = i();
    else if (key == "meta_batch") cfg.meta_batch = i();
    else if (key == "n_views") cfg.n_views = i();
    else if (key == "m_views") cfg.m_views = i();
    else if (key == "second_order") cfg.second_order = (value == "true" || value == "1");
    else if (key == "meta_iterations") cfg.meta_iterations = i();
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "huber_delta") cfg.photo.huber_delta = d();
    else if (key == "top_k") cfg.photo.top_k = i();
    else if (key == "ssim_window") cfg.photo.ssim_window = i();
    else if (key == "ssim_c1") cfg.photo.ssim_c1 = d();
    else if (key == "ssim_c2") cfg.photo.ssim_c2 = d();
    else if (key == "ssim_weight") cfg.photo.ssim_weight = d();
    else return false;
    return true;
}

std::string config_to_string(const MetaConfig& cfg) {
    std::ostringstream s;
    s << "alpha = " << fmt(cfg.alpha) << "\n";
    s << "beta = " << fmt(cfg.beta) << "\n";
    s << "inner_steps = " << cfg.inner_steps << "\n";
    s << "tta_steps = " << cfg.tta_steps << "\n";
    s << "meta_batch = " << cfg.meta_batch << "\n";
    s << "n_views = " << cfg.n_views << "\n";
    s << "m_views = " << cfg.m_views << "\n";
    s << "second_order = " << (cfg.second_order ? "true" : "false") << "\n";
    s << "meta_iterations = " << cfg.meta_iterations << "\n";
    s << "seed = " << cfg.seed << "\n";
    s << "huber_delta = " << fmt(cfg.photo.huber_delta) << "\n";
    s << "top_k = " << cfg.photo.top_k << "\n";
    s << "ssim_window = " << cfg.photo.ssim_window << "\n";
    s << "ssim_c1 = " << fmt(cfg.photo.ssim_c1) << "\n";
    s << "ssim_c2 = " << fmt(cfg.photo.ssim_c2) << "\n";
    s << "ssim_weight = " << fmt(cfg.photo.ssim_weight) << "\n";
    return s.str();
}

void write_config(const std::string& path, const MetaConfig& cfg) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("config: cannot write " + path);
    f << config_to_string(cfg);
}

MetaConfig read_config(const std::string& path) {
    MetaConfig cfg;
    for (const auto& [k, v] : read_kv_file(path))
        if (!apply_kv(cfg, k, v)) throw std::runtime_error("config: unknown key " + k);
    return cfg;
}

namespace {

Tensor theta_tensor(const net::ModelParams& p) {
    return Tensor({p.arch.param_count()}, p.theta);
}

std::vector<geo::PosedImage> primary_views(const scene::SceneSample& s, int n_views) {
    if (static_cast<int>(s.views.size()) < n_views)
        throw std::invalid_argument("sample has fewer views than n_views");
    return {s.views.begin(), s.views.begin() + n_views};
}

}  // namespace

PretrainResult pretrain(const net::ModelParams& params,
                        const std::vector<scene::SceneSample>& dataset, int epochs, double lr,
                        std::uint64_t seed, int n_views) {
    params.validate();
    if (dataset.empty()) throw std::invalid_argument("pretrain: empty dataset");
    PretrainResult r{params, {}};
    std::mt19937_64 rng(seed);
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        for (size_t i : order) {
            Tape t;
            Var theta = t.leaf(theta_tensor(r.params));
            Var pred = net::forward(t, theta, r.params.arch,
                                    primary_views(dataset[i], n_views), dataset[i].hyps);
            Var loss = net::primary_loss(t, pred, dataset[i].gt_depth, dataset[i].valid);
            double lv = loss.value().data[0];
            if (!std::isfinite(lv))
                throw std::runtime_error("pretrain: non-finite loss at epoch " +
                                         std::to_string(e) + ", sample " + std::to_string(i));
            epoch_loss += lv;
            const Tensor& g = t.backward(loss, {theta})[0].value();
            for (int j = 0; j < g.numel(); ++j) {
                double step = lr * g.data[static_cast<size_t>(j)];
                r.params.theta[static_cast<size_t>(j)] -= step;
            }
        }
        r.loss_trace.push_back(epoch_loss / static_cast<double>(dataset.size()));
    }
    return r;
}

Var adapt_on_tape(Tape& t, Var theta, const LossFn& inner, double alpha, int steps) {
    Var phi = theta;
    for (int s = 0; s < steps; ++s) {
        Var loss = inner(t, phi);
        Var g = t.backward(loss, {phi})[0];
        if (!g.value().all_finite())
            throw std::runtime_error("inner_adapt: non-finite gradient at step " +
                                     std::to_string(s));
        phi = t.sub(phi, t.scale(g, alpha));
    }
    return phi;
}

MetaGrad meta_gradient(const Tensor& theta, const LossFn& inner, const LossFn& outer,
                       double alpha, int steps, bool second_order) {
    MetaGrad r;
    if (second_order) {
        Tape t;
        Var th = t.leaf(theta);
        r.inner_loss = inner(t, th).value().data[0];
        Var phi = adapt_on_tape(t, th, inner, alpha, steps);
        Var loss = outer(t, phi);
        r.outer_loss = loss.value().data[0];
        r.grad = t.backward(loss, {th})[0].value();
    } else {
        Tensor phi = theta;
        for (int s = 0; s < steps; ++s) {
            Tape t;
            Var th = t.leaf(phi);
            Var loss = inner(t, th);
            if (s == 0) r.inner_loss = loss.value().data[0];
            Var g = t.backward(loss, {th})[0];
            if (!g.value().all_finite())
                throw std::runtime_error("inner_adapt: non-finite gradient at step " +
                                         std::to_string(s));
            for (int j = 0; j < phi.numel(); ++j) {
                double step = g.value().data[static_cast<size_t>(j)] * alpha;
                phi.data[static_cast<size_t>(j)] = phi.data[static_cast<size_t>(j)] - step;
            }
        }
        if (steps == 0) {
            Tape t;
            r.inner_loss = inner(t, t.leaf(phi)).value().data[0];
        }
        Tape t;
        Var phiv = t.leaf(phi);
        Var loss = outer(t, phiv);
        r.outer_loss = loss.value().data[0];
        r.grad = t.backward(loss, {phiv})[0].value();
    }
    return r;
}

net::ModelParams inner_adapt(const net::ModelParams& params, const scene::SceneSample& sample,
                             double alpha, int steps, const photo::PhotoLossConfig& photo_cfg,
                             int n_views) {
    params.validate();
    if (steps < 0) throw std::invalid_argument("inner_adapt: negative step count");
    net::ModelParams phi = params;
    for (int s = 0; s < steps; ++s) {
        Tape t;
        Var theta = t.leaf(theta_tensor(phi));
        Var loss = photo::photometric_loss(t, theta, params.arch, sample.views, n_views,
                                           sample.hyps, photo_cfg);
        Var g = t.backward(loss, {theta})[0];
        if (!g.value().all_finite())
            throw std::runtime_error("inner_adapt: non-finite gradient at step " +
                                     std::to_string(s));
        for (int j = 0; j < g.value().numel(); ++j) {
            double step = g.value().data[static_cast<size_t>(j)] * alpha;
            phi.theta[static_cast<size_t>(j)] = phi.theta[static_cast<size_t>(j)] - step;
        }
    }
    return phi;
}

namespace {

struct MetaStepStats {
    double mean_inner_photo = 0;
    double mean_outer_primary = 0;
};

net::ModelParams meta_step_impl(const net::ModelParams& params,
                                const std::vector<scene::SceneSample>& batch,
                                const MetaConfig& cfg, MetaStepStats* stats) {
    params.validate();
    cfg.validate();
    if (batch.empty()) throw std::invalid_argument("meta_step: empty batch");

    const int n = params.arch.param_count();
    Tensor g_acc({n});
    double inner_sum = 0, outer_sum = 0;

    for (const scene::SceneSample& sample : batch) {
        LossFn inner = [&](Tape& t, Var th) {
            return photo::photometric_loss(t, th, params.arch, sample.views, cfg.n_views,
                                           sample.hyps, cfg.photo);
        };
        LossFn outer = [&](Tape& t, Var th) {
            Var pred = net::forward(t, th, params.arch, primary_views(sample, cfg.n_views),
                                    sample.hyps);
            return net::primary_loss(t, pred, sample.gt_depth, sample.valid);
        };
        MetaGrad mg = meta_gradient(theta_tensor(params), inner, outer, cfg.alpha,
                                    cfg.inner_steps, cfg.second_order);
        if (!mg.grad.all_finite()) throw std::runtime_error("meta_step: non-finite meta-gradient");
        inner_sum += mg.inner_loss;
        outer_sum += mg.outer_loss;
        for (int j = 0; j < n; ++j)
            g_acc.data[static_cast<size_t>(j)] += mg.grad.data[static_cast<size_t>(j)];
    }

    if (stats) {
        stats->mean_inner_photo = inner_sum / static_cast<double>(batch.size());
        stats->mean_outer_primary = outer_sum / static_cast<double>(batch.size());
    }

    net::ModelParams out = params;
    for (int j = 0; j < n; ++j) {
        double step = cfg.beta * g_acc.data[static_cast<size_t>(j)];
        out.theta[static_cast<size_t>(j)] -= step;
    }
    return out;
}

}  // namespace

net::ModelParams meta_step(const net::ModelParams& params,
                           const std::vector<scene::SceneSample>& batch, const MetaConfig& cfg) {
    return meta_step_impl(params, batch, cfg, nullptr);
}

MetaTrainResult meta_train(const net::ModelParams& params,
                           const std::vector<scene::SceneSample>& dataset,
                           const MetaConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("meta_train: empty dataset");
    MetaTrainResult r{params, {}};
    std::mt19937_64 rng(cfg.seed);
    for (int it = 0; it < cfg.meta_iterations; ++it) {
        std::vector<scene::SceneSample> batch;
        batch.reserve(static_cast<size_t>(cfg.meta_batch));
        for (int b = 0; b < cfg.meta_batch; ++b)
            batch.push_back(dataset[static_cast<size_t>(rng() % dataset.size())]);
        MetaStepStats stats;
        r.params = meta_step_impl(r.params, batch, cfg, &stats);
        r.trace.inner_photo.push_back(stats.mean_inner_photo);
        r.trace.outer_primary.push_back(stats.mean_outer_primary);
    }
    return r;
}

net::ModelParams test_time_adapt(const net::ModelParams& params,
                                 const scene::SceneSample& sample, const MetaConfig& cfg) {
    return inner_adapt(params, sample, cfg.alpha, cfg.tta_steps, cfg.photo, cfg.n_views);
}

}  // namespace mvstta::meta
