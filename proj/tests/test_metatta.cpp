#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "mvstta/metatta.hpp"

using namespace mvstta;
using ad::Tape;
using ad::Var;

namespace {

// L(th) = 0.5 th^T A th
meta::LossFn quad_inner(const Tensor& a) {
    return [a](Tape& t, Var th) {
        const int n = th.value().numel();
        Var row = t.reshape(th, {1, n});
        Var col = t.reshape(th, {n, 1});
        Var q = t.matmul(t.matmul(row, t.constant(a)), col);
        return t.scale(t.sum_all(q), 0.5);
    };
}

// L(th) = 0.5 ||th - c||^2
meta::LossFn quad_outer(const Tensor& c) {
    return [c](Tape& t, Var th) {
        Var d = t.sub(th, t.constant(c));
        return t.scale(t.sum_all(ad::square(d)), 0.5);
    };
}

std::vector<double> mat_vec(const Tensor& a, const std::vector<double>& x) {
    const int n = static_cast<int>(x.size());
    std::vector<double> y(x.size(), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            y[static_cast<size_t>(i)] +=
                a.data[static_cast<size_t>(i * n + j)] * x[static_cast<size_t>(j)];
    return y;
}

scene::SceneSample tiny_sample(std::uint64_t seed, int m_views = 2) {
    scene::SceneSpec spec;
    spec.height = 8;
    spec.width = 8;
    spec.hypothesis_count = 4;
    spec.m_views = m_views;
    spec.layout = scene::Layout::TwoPlaneStep;
    return scene::generate_scene(spec, seed);
}

net::Arch small_arch() {
    net::Arch a;
    a.feat_channels = 4;
    return a;
}

photo::PhotoLossConfig small_photo() {
    photo::PhotoLossConfig cfg;
    cfg.ssim_window = 5;
    return cfg;
}

}  // namespace

TEST_CASE("config file round trip and error paths") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "mvstta_cfg_test";
    fs::create_directories(dir);
    std::string path = (dir / "run.cfg").string();

    meta::MetaConfig cfg;
    cfg.alpha = 3e-3;
    cfg.beta = 0.125;
    cfg.inner_steps = 2;
    cfg.tta_steps = 5;
    cfg.meta_batch = 3;
    cfg.second_order = false;
    cfg.meta_iterations = 42;
    cfg.seed = 1234567;
    cfg.photo.huber_delta = 0.2;
    cfg.photo.top_k = 3;
    cfg.photo.ssim_weight = 0.5;
    meta::write_config(path, cfg);
    meta::MetaConfig back = meta::read_config(path);
    CHECK(back.alpha == cfg.alpha);
    CHECK(back.beta == cfg.beta);
    CHECK(back.inner_steps == cfg.inner_steps);
    CHECK(back.tta_steps == cfg.tta_steps);
    CHECK(back.meta_batch == cfg.meta_batch);
    CHECK(back.second_order == cfg.second_order);
    CHECK(back.meta_iterations == cfg.meta_iterations);
    CHECK(back.seed == cfg.seed);
    CHECK(back.photo.huber_delta == cfg.photo.huber_delta);
    CHECK(back.photo.top_k == cfg.photo.top_k);
    CHECK(back.photo.ssim_weight == cfg.photo.ssim_weight);
    CHECK(meta::config_to_string(back) == meta::config_to_string(cfg));

    {
        std::ofstream f(path);
        f << "# comment\n\nalpha = 0.5\nbogus_key = 1\n";
    }
    CHECK_THROWS(meta::read_config(path));
    {
        std::ofstream f(path);
        f << "no equals sign here\n";
    }
    CHECK_THROWS(meta::read_config(path));
    CHECK_THROWS(meta::read_config((dir / "missing.cfg").string()));
    fs::remove_all(dir);
}

TEST_CASE("adapt_on_tape and meta_gradient match quadratic closed forms") {
    const int n = 6;
    std::mt19937_64 rng(3);
    auto u = [&rng] { return static_cast<double>(rng() >> 11) * 0x1p-53 - 0.5; };

    Tensor a({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            double v = u();
            a.data[static_cast<size_t>(i * n + j)] = v;
            a.data[static_cast<size_t>(j * n + i)] = v;
        }
    Tensor theta({n}), c({n});
    for (int i = 0; i < n; ++i) {
        theta.data[static_cast<size_t>(i)] = u();
        c.data[static_cast<size_t>(i)] = u();
    }
    const double alpha = 0.07;

    SUBCASE("one adaptation step") {
        Tape t;
        Var th = t.leaf(theta);
        Var phi = meta::adapt_on_tape(t, th, quad_inner(a), alpha, 1);
        std::vector<double> atheta = mat_vec(a, theta.data);
        for (int i = 0; i < n; ++i)
            CHECK(phi.value().data[static_cast<size_t>(i)] ==
                  doctest::Approx(theta.data[static_cast<size_t>(i)] -
                                  alpha * atheta[static_cast<size_t>(i)])
                      .epsilon(1e-12));
    }

    SUBCASE("second-order meta-gradient, one and two steps") {
        for (int steps : {1, 2}) {
            meta::MetaGrad mg =
                meta::meta_gradient(theta, quad_inner(a), quad_outer(c), alpha, steps, true);
            // phi_s = (I - aA)^s theta; grad = (I - aA)^s (phi_s - c)
            std::vector<double> phi = theta.data;
            for (int s = 0; s < steps; ++s) {
                std::vector<double> ap = mat_vec(a, phi);
                for (int i = 0; i < n; ++i) phi[static_cast<size_t>(i)] -= alpha * ap[static_cast<size_t>(i)];
            }
            std::vector<double> g(phi);
            for (int i = 0; i < n; ++i) g[static_cast<size_t>(i)] -= c.data[static_cast<size_t>(i)];
            for (int s = 0; s < steps; ++s) {
                std::vector<double> ag = mat_vec(a, g);
                for (int i = 0; i < n; ++i) g[static_cast<size_t>(i)] -= alpha * ag[static_cast<size_t>(i)];
            }
            for (int i = 0; i < n; ++i)
                CHECK(std::abs(mg.grad.data[static_cast<size_t>(i)] - g[static_cast<size_t>(i)]) <
                      1e-10);
        }
    }

    SUBCASE("first-order approximation drops the chain term") {
        meta::MetaGrad mg =
            meta::meta_gradient(theta, quad_inner(a), quad_outer(c), alpha, 1, false);
        std::vector<double> atheta = mat_vec(a, theta.data);
        for (int i = 0; i < n; ++i) {
            double phi = theta.data[static_cast<size_t>(i)] - alpha * atheta[static_cast<size_t>(i)];
            CHECK(mg.grad.data[static_cast<size_t>(i)] ==
                  doctest::Approx(phi - c.data[static_cast<size_t>(i)]).epsilon(1e-12));
        }
    }

    SUBCASE("linear inner loss: second order equals first order") {
        Tensor b({n});
        for (int i = 0; i < n; ++i) b.data[static_cast<size_t>(i)] = u();
        meta::LossFn linear = [b](Tape& t, Var th) { return t.sum_all(ad::mul_const(th, b)); };
        meta::MetaGrad g2 = meta::meta_gradient(theta, linear, quad_outer(c), alpha, 1, true);
        meta::MetaGrad g1 = meta::meta_gradient(theta, linear, quad_outer(c), alpha, 1, false);
        for (int i = 0; i < n; ++i)
            CHECK(g2.grad.data[static_cast<size_t>(i)] ==
                  doctest::Approx(g1.grad.data[static_cast<size_t>(i)]).epsilon(1e-12));
    }
}

TEST_CASE("meta-gradient matches finite differences on a small MVS model") {
    net::Arch a = small_arch();
    REQUIRE(a.param_count() <= 500);
    scene::SceneSample s = tiny_sample(5);
    net::ModelParams p = net::init_params(a, 7);
    photo::PhotoLossConfig pcfg = small_photo();
    const double alpha = 1e-3;

    meta::LossFn inner = [&](Tape& t, Var th) {
        return photo::photometric_loss(t, th, a, s.views, 2, s.hyps, pcfg);
    };
    meta::LossFn outer = [&](Tape& t, Var th) {
        std::vector<geo::PosedImage> v{s.views[0], s.views[1]};
        Var pred = net::forward(t, th, a, v, s.hyps);
        return net::primary_loss(t, pred, s.gt_depth, s.valid);
    };

    Tensor theta({a.param_count()}, p.theta);
    meta::MetaGrad mg = meta::meta_gradient(theta, inner, outer, alpha, 1, true);

    auto composed = [&](const Tensor& th) {
        Tape t;
        Var leaf = t.leaf(th);
        Var phi = meta::adapt_on_tape(t, leaf, inner, alpha, 1);
        return outer(t, phi).value().data[0];
    };

    std::mt19937_64 rng(31);
    double worst = 0;
    const double h = 1e-5;
    for (int trial = 0; trial < 25; ++trial) {
        int j = static_cast<int>(rng() % static_cast<std::uint64_t>(a.param_count()));
        Tensor up = theta, dn = theta;
        up.data[static_cast<size_t>(j)] += h;
        dn.data[static_cast<size_t>(j)] -= h;
        double fd = (composed(up) - composed(dn)) / (2 * h);
        double err = std::abs(mg.grad.data[static_cast<size_t>(j)] - fd) / std::max(1.0, std::abs(fd));
        worst = std::max(worst, err);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("inner_adapt basics and agreement with test_time_adapt") {
    net::Arch a = small_arch();
    scene::SceneSample s = tiny_sample(9);
    net::ModelParams p = net::init_params(a, 11);
    photo::PhotoLossConfig pcfg = small_photo();

    net::ModelParams zero_alpha = meta::inner_adapt(p, s, 0.0, 3, pcfg, 2);
    CHECK(zero_alpha.theta == p.theta);
    net::ModelParams zero_steps = meta::inner_adapt(p, s, 0.5, 0, pcfg, 2);
    CHECK(zero_steps.theta == p.theta);

    meta::MetaConfig cfg;
    cfg.alpha = 1e-2;
    cfg.tta_steps = 2;
    cfg.n_views = 2;
    cfg.m_views = 2;
    cfg.photo = pcfg;
    net::ModelParams via_inner = meta::inner_adapt(p, s, cfg.alpha, cfg.tta_steps, pcfg, 2);
    net::ModelParams via_tta = meta::test_time_adapt(p, s, cfg);
    CHECK(via_inner.theta == via_tta.theta);  // bit-identical
    CHECK(via_inner.theta != p.theta);

    // adaptation is stateless across samples
    scene::SceneSample other = tiny_sample(10);
    net::ModelParams before = meta::test_time_adapt(p, other, cfg);
    (void)meta::test_time_adapt(p, s, cfg);
    net::ModelParams after = meta::test_time_adapt(p, other, cfg);
    CHECK(before.theta == after.theta);
}

TEST_CASE("pretrain: lr zero, error paths, single-scene overfit") {
    net::Arch a = small_arch();
    scene::SceneSpec spec;
    spec.height = 16;
    spec.width = 16;
    spec.hypothesis_count = 8;
    spec.m_views = 3;
    spec.layout = scene::Layout::SlantedPlane;
    std::vector<scene::SceneSample> one{scene::generate_scene(spec, 15)};
    net::ModelParams p = net::init_params(a, 13);

    meta::PretrainResult frozen = meta::pretrain(p, one, 3, 0.0, 1, 3);
    CHECK(frozen.params.theta == p.theta);
    CHECK(frozen.loss_trace.size() == 3);

    CHECK_THROWS(meta::pretrain(p, {}, 1, 0.1, 1, 3));
    net::ModelParams broken = p;
    broken.theta[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS(meta::pretrain(broken, one, 1, 0.1, 1, 3));

    meta::PretrainResult fit = meta::pretrain(p, one, 2500, 0.5, 1, 3);
    // fixed-step descent on this landscape is non-increasing up to small
    // oscillation near convergence
    for (size_t e = 1; e < fit.loss_trace.size(); ++e)
        CHECK(fit.loss_trace[e] <= fit.loss_trace[e - 1] + 5e-3);
    CHECK(fit.loss_trace.back() < 0.6 * fit.loss_trace.front());

    Tensor pred = net::forward_depth(
        fit.params, {one[0].views[0], one[0].views[1], one[0].views[2]}, one[0].hyps);
    double rel = 0, cnt = 0;
    for (int i = 0; i < pred.numel(); ++i)
        if (one[0].valid.data[static_cast<size_t>(i)] > 0) {
            rel += std::abs(pred.data[static_cast<size_t>(i)] -
                            one[0].gt_depth.data[static_cast<size_t>(i)]) /
                   one[0].gt_depth.data[static_cast<size_t>(i)];
            cnt += 1;
        }
    CHECK(100.0 * rel / cnt < 5.0);
}

TEST_CASE("meta_step: beta zero, determinism, arch preserved") {
    net::Arch a = small_arch();
    scene::SceneSample s = tiny_sample(17);
    net::ModelParams p = net::init_params(a, 19);
    meta::MetaConfig cfg;
    cfg.n_views = 2;
    cfg.m_views = 2;
    cfg.photo = small_photo();
    cfg.alpha = 1e-3;
    cfg.beta = 0.0;
    net::ModelParams same = meta::meta_step(p, {s}, cfg);
    CHECK(same.theta == p.theta);

    cfg.beta = 1e-2;
    net::ModelParams s1 = meta::meta_step(p, {s, tiny_sample(18)}, cfg);
    net::ModelParams s2 = meta::meta_step(p, {s, tiny_sample(18)}, cfg);
    CHECK(s1.theta == s2.theta);
    CHECK(s1.arch == p.arch);
    CHECK(s1.theta != p.theta);

    CHECK_THROWS(meta::meta_step(p, {}, cfg));
}

TEST_CASE("meta_train: determinism, zero iterations, decreasing outer loss") {
    net::Arch a = small_arch();
    scene::SceneSpec spec;
    spec.height = 16;
    spec.width = 16;
    spec.hypothesis_count = 8;
    spec.m_views = 3;
    spec.layout = scene::Layout::SlantedPlane;
    std::vector<scene::SceneSample> train{scene::generate_scene(spec, 15)};

    net::ModelParams p = net::init_params(a, 23);
    meta::MetaConfig cfg;
    cfg.n_views = 3;
    cfg.m_views = 3;
    cfg.photo = small_photo();
    cfg.alpha = 1e-3;
    cfg.beta = 5.0;
    cfg.meta_batch = 1;
    cfg.meta_iterations = 3;
    cfg.seed = 4;

    meta::MetaTrainResult r1 = meta::meta_train(p, train, cfg);
    meta::MetaTrainResult r2 = meta::meta_train(p, train, cfg);
    CHECK(r1.params.theta == r2.params.theta);
    CHECK(r1.trace.outer_primary.size() == 3);
    CHECK(r1.params.theta != p.theta);

    meta::MetaConfig longer = cfg;
    longer.meta_iterations = 150;
    meta::MetaTrainResult run = meta::meta_train(p, train, longer);
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
        first += run.trace.outer_primary[static_cast<size_t>(i)];
        last += run.trace.outer_primary[run.trace.outer_primary.size() - 1 - static_cast<size_t>(i)];
    }
    CHECK(last / 10 < first / 10);

    meta::MetaConfig zero = cfg;
    zero.meta_iterations = 0;
    meta::MetaTrainResult r0 = meta::meta_train(p, train, zero);
    CHECK(r0.params.theta == p.theta);
}
