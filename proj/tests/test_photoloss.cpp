#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "mvstta/photoloss.hpp"
#include "mvstta/scenegen.hpp"

using namespace mvstta;
using ad::Tape;
using ad::Var;

namespace {

Tensor random_image(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor img({h, w, 3});
    for (double& v : img.data) v = static_cast<double>(rng() >> 11) * 0x1p-53;
    return img;
}

Tensor full_mask(int h, int w) {
    Tensor m({h, w});
    std::fill(m.data.begin(), m.data.end(), 1.0);
    return m;
}

// straight-loop windowed-statistics reimplementation of the SSIM objective
double ssim_oracle(const Tensor& ref, const Tensor& warped, const Tensor& mask,
                   const photo::PhotoLossConfig& cfg) {
    const int h = ref.shape[0], w = ref.shape[1], c = ref.shape[2];
    const int r = cfg.ssim_window / 2;
    double acc = 0, weight = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (mask.data[static_cast<size_t>(y * w + x)] <= 0) continue;
                double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0, n = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                        if (mask.data[static_cast<size_t>(yy * w + xx)] <= 0) continue;
                        double a = ref.data[static_cast<size_t>((yy * w + xx) * c + ch)];
                        double b = warped.data[static_cast<size_t>((yy * w + xx) * c + ch)];
                        sx += a;
                        sy += b;
                        sxx += a * a;
                        syy += b * b;
                        sxy += a * b;
                        n += 1;
                    }
                if (n == 0) continue;
                double mx = sx / n, my = sy / n;
                double vx = sxx / n - mx * mx, vy = syy / n - my * my;
                double cov = sxy / n - mx * my;
                double ssim = ((2 * mx * my + cfg.ssim_c1) * (2 * cov + cfg.ssim_c2)) /
                              ((mx * mx + my * my + cfg.ssim_c1) * (vx + vy + cfg.ssim_c2));
                acc += std::clamp((1.0 - ssim) / 2.0, 0.0, 1.0);
                weight += 1;
            }
    return weight > 0 ? acc / weight : 0.0;
}

}  // namespace

TEST_CASE("image_gradient: constants, ramps, checkerboard, zero padding") {
    const int h = 5, w = 6;
    Tape t;

    Tensor flat({h, w, 1});
    std::fill(flat.data.begin(), flat.data.end(), 0.4);
    photo::GradientPair g0 = photo::image_gradient(t, t.constant(flat), h, w, 1);
    for (double v : g0.gx.value().data) CHECK(v == 0.0);
    for (double v : g0.gy.value().data) CHECK(v == 0.0);

    Tensor ramp({h, w, 1});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) ramp.data[static_cast<size_t>(y * w + x)] = 0.1 * x;
    auto [gx, gy] = photo::image_gradient(ramp);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double e = x < w - 1 ? 0.1 : 0.0;
            CHECK(gx.data[static_cast<size_t>(y * w + x)] == doctest::Approx(e).epsilon(1e-12));
            CHECK(gy.data[static_cast<size_t>(y * w + x)] == 0.0);
        }

    Tensor board({h, w, 1});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) board.data[static_cast<size_t>(y * w + x)] = (x + y) % 2;
    auto [bx, by] = photo::image_gradient(board);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w - 1; ++x)
            CHECK(std::abs(bx.data[static_cast<size_t>(y * w + x)]) == 1.0);
    for (int x = 0; x < w; ++x)
        CHECK(by.data[static_cast<size_t>((h - 1) * w + x)] == 0.0);
}

TEST_CASE("reproj_error_per_view: identity, masking, constant offset") {
    const int h = 6, w = 7;
    photo::PhotoLossConfig cfg;
    cfg.huber_delta = 1.0;
    Tensor ref = random_image(h, w, 5);
    Tape t;

    Var same = photo::reproj_error_per_view(t, ref, t.constant(ref), full_mask(h, w), cfg);
    for (double v : same.value().data) CHECK(v == 0.0);

    Tensor offset = ref;
    for (double& v : offset.data) v += 0.1;
    Var off = photo::reproj_error_per_view(t, ref, t.constant(offset), full_mask(h, w), cfg);
    for (double v : off.value().data)
        CHECK(v == doctest::Approx(3 * 0.5 * 0.1 * 0.1).epsilon(1e-12));

    Tensor shifted_ref = ref;
    for (double& v : shifted_ref.data) v += 0.07;
    Var off2 = photo::reproj_error_per_view(t, shifted_ref, t.constant([&] {
                                                Tensor o = offset;
                                                for (double& v : o.data) v += 0.07;
                                                return o;
                                            }()),
                                            full_mask(h, w), cfg);
    for (int i = 0; i < h * w; ++i)
        CHECK(off2.value().data[static_cast<size_t>(i)] ==
              doctest::Approx(off.value().data[static_cast<size_t>(i)]).epsilon(1e-12));

    Var none = photo::reproj_error_per_view(t, ref, t.constant(offset), Tensor({h, w}), cfg);
    for (double v : none.value().data) CHECK(v == 0.0);
}

TEST_CASE("topk_reproj: hand selection, masking, gradient routing, monotone K") {
    const int h = 1, w = 2, np = h * w;
    Tape t;
    Tensor m0({h, w}, {0.3, 0.3});
    Tensor m1({h, w}, {0.1, 0.1});
    Tensor m2({h, w}, {0.2, 0.2});
    Var v0 = t.leaf(m0), v1 = t.leaf(m1), v2 = t.leaf(m2);
    std::vector<Tensor> full{full_mask(h, w), full_mask(h, w), full_mask(h, w)};

    Var k2 = photo::topk_reproj(t, {v0, v1, v2}, full, 2);
    CHECK(k2.value().data[0] == doctest::Approx(0.3).epsilon(1e-12));

    Var k3 = photo::topk_reproj(t, {v0, v1, v2}, full, 3);
    CHECK(k3.value().data[0] == doctest::Approx(0.6 * np / np).epsilon(1e-12));
    CHECK(k3.value().data[0] >= k2.value().data[0]);

    // gradient reaches only the selected views
    std::vector<Var> grads = t.backward(k2, {v0, v1, v2});
    for (double g : grads[0].value().data) CHECK(g == 0.0);
    for (double g : grads[1].value().data) CHECK(g == doctest::Approx(1.0 / np));
    for (double g : grads[2].value().data) CHECK(g == doctest::Approx(1.0 / np));

    // highest-loss view becomes eligible when the cheapest is masked out
    std::vector<Tensor> masked{full_mask(h, w), Tensor({h, w}), full_mask(h, w)};
    Var km = photo::topk_reproj(t, {v0, v1, v2}, masked, 2);
    CHECK(km.value().data[0] == doctest::Approx(0.5).epsilon(1e-12));

    // ties select the lowest view index
    Tensor tie({h, w}, {0.1, 0.1});
    Var ta = t.leaf(tie), tb = t.leaf(tie);
    Var kt = photo::topk_reproj(t, {ta, tb}, {full_mask(h, w), full_mask(h, w)}, 1);
    std::vector<Var> tg = t.backward(kt, {ta, tb});
    for (double g : tg[0].value().data) CHECK(g > 0.0);
    for (double g : tg[1].value().data) CHECK(g == 0.0);

    CHECK_THROWS(photo::topk_reproj(t, {v0}, {full_mask(h, w)}, 2));
}

TEST_CASE("topk monotonicity on random maps with random masks") {
    const int h = 4, w = 5;
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        Tape t;
        std::vector<Var> maps;
        std::vector<Tensor> masks;
        for (int i = 0; i < 4; ++i) {
            Tensor m({h, w});
            Tensor mask({h, w});
            for (int p = 0; p < h * w; ++p) {
                m.data[static_cast<size_t>(p)] = static_cast<double>(rng() >> 11) * 0x1p-53;
                mask.data[static_cast<size_t>(p)] = (rng() & 3) ? 1.0 : 0.0;
            }
            maps.push_back(t.constant(m));
            masks.push_back(mask);
        }
        double prev = 0;
        for (int k = 1; k <= 4; ++k) {
            double cur = photo::topk_reproj(t, maps, masks, k).value().data[0];
            CHECK(cur >= prev - 1e-15);
            prev = cur;
        }
    }
}

TEST_CASE("ssim_loss matches the direct-statistics oracle") {
    const int h = 10, w = 12;
    photo::PhotoLossConfig cfg;
    Tensor ref = random_image(h, w, 11);

    SUBCASE("identical images give zero") {
        Tape t;
        Var l = photo::ssim_loss(t, ref, {t.constant(ref)}, {full_mask(h, w)}, cfg);
        CHECK(std::abs(l.value().data[0]) < 1e-12);
    }

    SUBCASE("inverted high-variance image gives loss near 1") {
        Tensor inv = ref;
        for (double& v : inv.data) v = 1.0 - v;
        Tape t;
        Var l = photo::ssim_loss(t, ref, {t.constant(inv)}, {full_mask(h, w)}, cfg);
        double oracle = ssim_oracle(ref, inv, full_mask(h, w), cfg);
        CHECK(l.value().data[0] == doctest::Approx(oracle).epsilon(1e-9));
        CHECK(l.value().data[0] > 0.6);
    }

    SUBCASE("constant images reduce to the luminance term") {
        Tensor a({h, w, 3}), b({h, w, 3});
        std::fill(a.data.begin(), a.data.end(), 0.3);
        std::fill(b.data.begin(), b.data.end(), 0.8);
        Tape t;
        Var l = photo::ssim_loss(t, a, {t.constant(b)}, {full_mask(h, w)}, cfg);
        double lum = (2 * 0.3 * 0.8 + cfg.ssim_c1) / (0.3 * 0.3 + 0.8 * 0.8 + cfg.ssim_c1);
        CHECK(l.value().data[0] == doctest::Approx((1.0 - lum) / 2.0).epsilon(1e-9));
    }

    SUBCASE("random images and partial masks, two views") {
        std::mt19937_64 rng(13);
        Tensor w1 = random_image(h, w, 17), w2 = random_image(h, w, 19);
        Tensor mask1({h, w}), mask2({h, w});
        for (int p = 0; p < h * w; ++p) {
            mask1.data[static_cast<size_t>(p)] = (rng() & 3) ? 1.0 : 0.0;
            mask2.data[static_cast<size_t>(p)] = (rng() & 3) ? 1.0 : 0.0;
        }
        Tape t;
        Var l = photo::ssim_loss(t, ref, {t.constant(w1), t.constant(w2)}, {mask1, mask2}, cfg);
        // oracle averages per view weighted by visible pixel count
        double o1 = ssim_oracle(ref, w1, mask1, cfg);
        double o2 = ssim_oracle(ref, w2, mask2, cfg);
        double n1 = 0, n2 = 0;
        for (double v : mask1.data) n1 += v;
        for (double v : mask2.data) n2 += v;
        double oracle = (o1 * n1 + o2 * n2) / (n1 + n2);
        CHECK(l.value().data[0] == doctest::Approx(oracle).epsilon(1e-9));
    }
}

TEST_CASE("photometric_loss: degenerate black scene gives zero") {
    scene::SceneSpec spec;
    spec.height = 8;
    spec.width = 8;
    spec.hypothesis_count = 4;
    scene::SceneSample s = scene::generate_scene(spec, 3);
    for (geo::PosedImage& v : s.views) std::fill(v.image.data.begin(), v.image.data.end(), 0.0);

    net::Arch a;
    a.feat_channels = 4;
    net::ModelParams p = net::init_params(a, 1);
    photo::PhotoLossConfig cfg;
    cfg.ssim_window = 5;
    Tape t;
    Var theta = t.leaf(Tensor({a.param_count()}, p.theta));
    Var l = photo::photometric_loss(t, theta, a, s.views, 3, s.hyps, cfg);
    CHECK(std::abs(l.value().data[0]) < 1e-12);
}

TEST_CASE("photometric_loss: nonnegative and finite on generated scenes") {
    net::Arch a;
    a.feat_channels = 4;
    net::ModelParams p = net::init_params(a, 2);
    photo::PhotoLossConfig cfg;
    cfg.ssim_window = 5;
    for (std::uint64_t seed : {1, 2, 3, 4}) {
        scene::SceneSpec spec;
        spec.height = 8;
        spec.width = 8;
        spec.hypothesis_count = 4;
        spec.layout = static_cast<scene::Layout>(seed % 4);
        scene::SceneSample s = scene::generate_scene(spec, seed);
        Tape t;
        Var theta = t.leaf(Tensor({a.param_count()}, p.theta));
        Var l = photo::photometric_loss(t, theta, a, s.views, 3, s.hyps, cfg);
        CHECK(l.value().data[0] >= 0.0);
        CHECK(l.value().all_finite());
    }
}

TEST_CASE("photometric_loss gradient matches finite differences") {
    net::Arch a;
    a.feat_channels = 4;
    scene::SceneSpec spec;
    spec.height = 8;
    spec.width = 8;
    spec.hypothesis_count = 4;
    spec.m_views = 2;
    spec.layout = scene::Layout::SlantedPlane;
    scene::SceneSample s = scene::generate_scene(spec, 9);
    net::ModelParams p = net::init_params(a, 6);
    photo::PhotoLossConfig cfg;
    cfg.ssim_window = 5;

    auto fn = [&](Tape& t, Var theta) {
        return photo::photometric_loss(t, theta, a, s.views, 2, s.hyps, cfg);
    };
    double err = ad::check_gradient(fn, Tensor({a.param_count()}, p.theta), 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("depth-scaling discrimination at the photometric objective") {
    // loss of warping at the true depth vs a 1.05x scaled depth, bypassing the
    // network: the objective itself must prefer the true geometry
    photo::PhotoLossConfig cfg;
    int wins = 0, trials = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        scene::SceneSpec spec;
        spec.layout = static_cast<scene::Layout>(seed % 4);
        scene::SceneSample s = scene::generate_scene(spec, seed);
        const int h = s.gt_depth.shape[0], w = s.gt_depth.shape[1];
        const geo::Camera ref_cam{s.views[0].intrinsics, s.views[0].pose};

        auto loss_at = [&](const Tensor& depth) {
            Tape t;
            Var d = t.constant(depth);
            std::vector<Var> maps, warped;
            std::vector<Tensor> masks;
            for (size_t i = 1; i < s.views.size(); ++i) {
                geo::WarpResult wr = geo::inverse_warp(t, s.views[i], ref_cam, d);
                maps.push_back(photo::reproj_error_per_view(t, s.views[0].image, wr.image,
                                                            wr.mask, cfg));
                warped.push_back(wr.image);
                masks.push_back(wr.mask);
            }
            Var l = t.add(photo::topk_reproj(t, maps, masks, cfg.top_k),
                          photo::ssim_loss(t, s.views[0].image, warped, masks, cfg));
            return l.value().data[0];
        };

        Tensor gt = s.gt_depth;
        for (double& v : gt.data) v = std::max(v, s.hyps.d_min);  // background pixels
        Tensor scaled = gt;
        for (double& v : scaled.data) v *= 1.05;
        ++trials;
        if (loss_at(gt) < loss_at(scaled)) ++wins;
    }
    CHECK(trials == 100);
    CHECK(wins >= 95);
}
