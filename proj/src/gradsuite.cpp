#include "mvstta/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include "mvstta/autodiff.hpp"
#include "mvstta/mvsnet.hpp"
#include "mvstta/photoloss.hpp"
#include "mvstta/scenegen.hpp"

namespace mvstta::gradsuite {

using ad::Tape;
using ad::Var;

namespace {

constexpr double kStep = 1e-6;

double unit(std::mt19937_64& rng) { return 2.0 * ((rng() >> 11) * 0x1p-53) - 1.0; }

// Uniform in [-1, 1]; with away > 0 the magnitude stays >= away so kinked
// ops (abs, elu, huber) are checked off their nondifferentiable points.
Tensor rand_tensor(std::mt19937_64& rng, std::vector<int> shape, double away = 0.0) {
    Tensor t(std::move(shape));
    for (int i = 0; i < t.numel(); ++i) {
        double u = unit(rng);
        if (away > 0.0) {
            double s = u < 0 ? -1.0 : 1.0;
            u = s * (away + (1.0 - away) * std::abs(u));
        }
        t[i] = u;
    }
    return t;
}

// Weighted sum closes any tensor to a scalar without symmetries that could
// hide gradient errors (softmax rows summing to one, for instance).
Var wsum(Tape& t, Var v, std::mt19937_64& rng) {
    Tensor w(v.value().shape);
    for (int i = 0; i < w.numel(); ++i) w[i] = unit(rng);
    return t.sum_all(t.mul(v, t.constant(std::move(w))));
}

}  // namespace

std::vector<CaseResult> run(std::uint64_t seed, int per_op) {
    std::vector<CaseResult> out;
    std::mt19937_64 rng(seed);

    auto check = [&](const std::string& name, const std::function<Var(Tape&, Var)>& fn,
                     const Tensor& point, double step = kStep) {
        out.push_back({name, ad::check_gradient(fn, point, step)});
    };

    for (int rep = 0; rep < per_op; ++rep) {
        const int m = 2 + static_cast<int>(rng() % 4);
        const int n = 2 + static_cast<int>(rng() % 4);
        const int mn = m * n;

        auto binary = [&](const char* name, auto op, double bshift) {
            check(name,
                  [=](Tape& t, Var x) {
                      Var a = t.slice(x, 0, {m, n});
                      Var b = t.add_scalar(t.slice(x, mn, {m, n}), bshift);
                      Tape* tp = &t;
                      std::mt19937_64 wrng(seed + 101 + static_cast<std::uint64_t>(rep));
                      return wsum(*tp, (t.*op)(a, b), wrng);
                  },
                  rand_tensor(rng, {2 * mn}));
        };
        binary("add", &Tape::add, 0.0);
        binary("sub", &Tape::sub, 0.0);
        binary("mul", &Tape::mul, 0.0);
        binary("div", &Tape::div, 2.0);

        auto unary = [&](const char* name, const std::function<Var(Tape&, Var)>& op,
                         double away) {
            check(name,
                  [=](Tape& t, Var x) {
                      std::mt19937_64 wrng(seed + 202 + static_cast<std::uint64_t>(rep));
                      return wsum(t, op(t, t.reshape(x, {m, n})), wrng);
                  },
                  rand_tensor(rng, {mn}, away));
        };
        const double s = unit(rng) * 3.0;
        unary("neg", [](Tape& t, Var x) { return t.neg(x); }, 0.0);
        unary("exp", [](Tape& t, Var x) { return t.exp(x); }, 0.0);
        unary("abs", [](Tape& t, Var x) { return t.abs(x); }, 0.01);
        unary("scale", [=](Tape& t, Var x) { return t.scale(x, s); }, 0.0);
        unary("add_scalar", [=](Tape& t, Var x) { return t.add_scalar(x, s); }, 0.0);
        unary("square", [](Tape& t, Var x) { return ad::square(x); }, 0.0);
        unary("elu", [](Tape& t, Var x) { return ad::elu(x); }, 0.01);
        unary("huber", [](Tape& t, Var x) { return ad::huber(x, 0.37); }, 0.0);
        unary("transpose", [](Tape& t, Var x) { return t.transpose(x); }, 0.0);
        unary("reshape", [=](Tape& t, Var x) { return t.reshape(x, {n, m}); }, 0.0);
        unary("softmax_axis", [](Tape& t, Var x) { return ad::softmax_axis(x, 1); }, 0.0);

        check("sum_all", [](Tape& t, Var x) { return t.sum_all(x); }, rand_tensor(rng, {mn}));
        check("mean_all", [](Tape& t, Var x) { return ad::mean_all(x); }, rand_tensor(rng, {mn}));
        check("broadcast_all",
              [=](Tape& t, Var x) {
                  std::mt19937_64 wrng(seed + 303 + static_cast<std::uint64_t>(rep));
                  return wsum(t, t.broadcast_all(x, {m, n}), wrng);
              },
              rand_tensor(rng, {1}));
        const int axis = static_cast<int>(rng() % 2);
        check("sum_axis",
              [=](Tape& t, Var x) {
                  std::mt19937_64 wrng(seed + 404 + static_cast<std::uint64_t>(rep));
                  return wsum(t, t.sum_axis(t.reshape(x, {m, n}), axis), wrng);
              },
              rand_tensor(rng, {mn}));
        check("broadcast_axis",
              [=](Tape& t, Var x) {
                  std::mt19937_64 wrng(seed + 505 + static_cast<std::uint64_t>(rep));
                  return wsum(t, t.broadcast_axis(t.reshape(x, {m, 1}), 1, n), wrng);
              },
              rand_tensor(rng, {m}));

        const int k = 2 + static_cast<int>(rng() % 3);
        check("matmul",
              [=](Tape& t, Var x) {
                  Var a = t.slice(x, 0, {m, k});
                  Var b = t.slice(x, m * k, {k, n});
                  std::mt19937_64 wrng(seed + 606 + static_cast<std::uint64_t>(rep));
                  return wsum(t, t.matmul(a, b), wrng);
              },
              rand_tensor(rng, {m * k + k * n}));

        {
            const int no = mn + 3;
            auto idx = std::make_shared<std::vector<int>>();
            for (int i = 0; i < no; ++i)
                idx->push_back(rng() % 5 == 0 ? -1 : static_cast<int>(rng() % mn));
            check("gather",
                  [=](Tape& t, Var x) {
                      std::mt19937_64 wrng(seed + 707 + static_cast<std::uint64_t>(rep));
                      return wsum(t, t.gather(x, idx, {no}), wrng);
                  },
                  rand_tensor(rng, {mn}));
        }
        {
            const int no = std::max(2, mn / 2);
            auto idx = std::make_shared<std::vector<int>>();
            for (int i = 0; i < mn; ++i)
                idx->push_back(rng() % 5 == 0 ? -1 : static_cast<int>(rng() % no));
            check("scatter_add",
                  [=](Tape& t, Var x) {
                      std::mt19937_64 wrng(seed + 808 + static_cast<std::uint64_t>(rep));
                      return wsum(t, t.scatter_add(x, idx, {no}), wrng);
                  },
                  rand_tensor(rng, {mn}));
        }
        {
            Tensor mask({m, n});
            for (int i = 0; i < mn; ++i) mask[i] = rng() % 2 ? 1.0 : 0.0;
            check("relu_mask_apply",
                  [=](Tape& t, Var x) {
                      std::mt19937_64 wrng(seed + 909 + static_cast<std::uint64_t>(rep));
                      return wsum(t, ad::relu_mask_apply(t.reshape(x, {m, n}), mask), wrng);
                  },
                  rand_tensor(rng, {mn}));
            Tensor c = rand_tensor(rng, {m, n});
            check("mul_const",
                  [=](Tape& t, Var x) {
                      std::mt19937_64 wrng(seed + 910 + static_cast<std::uint64_t>(rep));
                      return wsum(t, ad::mul_const(t.reshape(x, {m, n}), c), wrng);
                  },
                  rand_tensor(rng, {mn}));
            check("slice",
                  [=](Tape& t, Var x) {
                      std::mt19937_64 wrng(seed + 911 + static_cast<std::uint64_t>(rep));
                      return wsum(t, t.slice(x, n, {m}), wrng);
                  },
                  rand_tensor(rng, {mn}));
        }
        {
            const int h = 5, w = 5, cin = 2, cout = 2, kk = 3;
            const int ni = h * w * cin, nw = cin * kk * kk * cout;
            check("conv2d",
                  [=](Tape& t, Var x) {
                      Var in = t.slice(x, 0, {h * w, cin});
                      Var wt = t.slice(x, ni, {cin * kk * kk, cout});
                      Var bs = t.slice(x, ni + nw, {1, cout});
                      std::mt19937_64 wrng(seed + 912 + static_cast<std::uint64_t>(rep));
                      return wsum(t, ad::conv2d(in, wt, bs, h, w, cin, cout, kk), wrng);
                  },
                  rand_tensor(rng, {ni + nw + cout}));
        }
        {
            const int h = 4, w = 4, d = 3, kk = 3;
            const int ni = h * w * d, nw = kk * kk * kk;
            check("conv3d",
                  [=](Tape& t, Var x) {
                      Var in = t.slice(x, 0, {h * w * d});
                      Var wt = t.slice(x, ni, {nw, 1});
                      Var bs = t.slice(x, ni + nw, {1});
                      std::mt19937_64 wrng(seed + 913 + static_cast<std::uint64_t>(rep));
                      return wsum(t, ad::conv3d(in, wt, bs, h, w, d, kk), wrng);
                  },
                  rand_tensor(rng, {ni + nw + 1}));
        }
        {
            const int h = 4, w = 5, c = 2, np = 6;
            // fractions kept in [0.1, 0.9] of a cell so central differences
            // never straddle the bilinear lattice
            Tensor cx({np}), cy({np});
            for (int i = 0; i < np; ++i) {
                cx[i] = static_cast<double>(rng() % (w - 1)) + 0.1 + 0.8 * ((rng() >> 11) * 0x1p-53);
                cy[i] = static_cast<double>(rng() % (h - 1)) + 0.1 + 0.8 * ((rng() >> 11) * 0x1p-53);
            }
            check("bilinear_sample_grid",
                  [=](Tape& t, Var x) {
                      Var xs = t.constant(cx);
                      Var ys = t.constant(cy);
                      ad::SampleResult r = ad::bilinear_sample(t.reshape(x, {h * w, c}), xs, ys,
                                                               h, w, c);
                      std::mt19937_64 wrng(seed + 914 + static_cast<std::uint64_t>(rep));
                      return wsum(t, r.values, wrng);
                  },
                  rand_tensor(rng, {h * w * c}));
            Tensor grid = rand_tensor(rng, {h * w, c});
            check("bilinear_sample_coords",
                  [=](Tape& t, Var x) {
                      // leaf in [-1, 1] mapped affinely into the cells above
                      Var u = t.scale(t.slice(x, 0, {np}), 0.35);
                      Var v = t.scale(t.slice(x, np, {np}), 0.35);
                      Var xs = t.add(u, t.constant(cx));
                      Var ys = t.add(v, t.constant(cy));
                      ad::SampleResult r = ad::bilinear_sample(t.constant(grid), xs, ys, h, w, c);
                      std::mt19937_64 wrng(seed + 915 + static_cast<std::uint64_t>(rep));
                      return wsum(t, r.values, wrng);
                  },
                  rand_tensor(rng, {2 * np}));
        }
    }

    // the two end-to-end loss compositions, on a small model and scene
    for (int rep = 0; rep < 2; ++rep) {
        net::Arch arch;
        arch.feat_channels = 4;
        scene::SceneSpec sp;
        sp.height = 8;
        sp.width = 8;
        sp.hypothesis_count = 4;
        sp.n_views = 2;
        sp.m_views = 2;
        sp.layout = rep == 0 ? scene::Layout::SlantedPlane : scene::Layout::TwoPlaneStep;
        scene::SceneSample sample = scene::generate_scene(sp, seed + 17 + static_cast<std::uint64_t>(rep));
        Tensor theta(std::vector<int>{arch.param_count()},
                     net::init_params(arch, seed + 29 + static_cast<std::uint64_t>(rep)).theta);
        std::vector<geo::PosedImage> views(sample.views.begin(), sample.views.begin() + 2);

        check("forward_primary",
              [=](Tape& t, Var x) {
                  Var pred = net::forward(t, x, arch, views, sample.hyps);
                  return net::primary_loss(t, pred, sample.gt_depth, sample.valid);
              },
              theta, 1e-5);

        photo::PhotoLossConfig pcfg;
        pcfg.top_k = 2;
        check("photometric",
              [=](Tape& t, Var x) {
                  return photo::photometric_loss(t, x, arch, sample.views, 2, sample.hyps, pcfg);
              },
              theta, 1e-6);
    }

    return out;
}

double max_error(const std::vector<CaseResult>& results) {
    double m = 0;
    for (const CaseResult& r : results) m = std::max(m, r.err);
    return m;
}

}  // namespace mvstta::gradsuite
