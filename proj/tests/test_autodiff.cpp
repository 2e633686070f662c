#include <cmath>
#include <random>

#include "doctest.h"
#include "mvstta/autodiff.hpp"

using namespace mvstta;
using namespace mvstta::ad;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
    return t;
}

}  // namespace

TEST_CASE("elementwise basics") {
    Tape t;
    Var a = t.leaf(Tensor({2}, {1.0, 2.0}));
    Var b = t.leaf(Tensor({2}, {3.0, 4.0}));
    Var s = t.add(a, b);
    CHECK(s.value()[0] == 4.0);
    CHECK(s.value()[1] == 6.0);
    CHECK_THROWS_AS(t.add(a, t.leaf(Tensor({3}, 1.0))), std::invalid_argument);
}

TEST_CASE("softmax of constants is uniform and normalized") {
    Tape t;
    Var z = t.leaf(Tensor({3}, 0.0));
    Var sm = softmax_axis(z, 0);
    for (int i = 0; i < 3; ++i) CHECK(sm.value()[i] == doctest::Approx(1.0 / 3).epsilon(1e-14));

    std::mt19937_64 rng(7);
    Var x = t.leaf(random_tensor({4, 5}, rng, -3, 3));
    Var p = softmax_axis(x, 1);
    for (int r = 0; r < 4; ++r) {
        double s = 0;
        for (int c = 0; c < 5; ++c) {
            CHECK(p.value()[r * 5 + c] >= 0.0);
            s += p.value()[r * 5 + c];
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("matmul identity") {
    Tape t;
    std::mt19937_64 rng(3);
    Tensor k = random_tensor({3, 3}, rng);
    Tensor eye({3, 3}, 0.0);
    for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
    Var out = t.matmul(t.leaf(eye), t.leaf(k));
    for (int i = 0; i < 9; ++i) CHECK(out.value()[i] == doctest::Approx(k[i]).epsilon(1e-15));
}

TEST_CASE("backward of x squared") {
    Tape t;
    Var x = t.leaf(Tensor::scalar(3.0));
    Var loss = square(x);
    Var g = t.backward(loss, {x})[0];
    CHECK(g.value()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward of sum of softmax is zero") {
    Tape t;
    std::mt19937_64 rng(11);
    Var z = t.leaf(random_tensor({5}, rng));
    Var loss = t.sum_all(softmax_axis(z, 0));
    Var g = t.backward(loss, {z})[0];
    for (int i = 0; i < 5; ++i) CHECK(std::abs(g.value()[i]) < 1e-12);
}

TEST_CASE("backward errors and edge cases") {
    Tape t;
    Var x = t.leaf(Tensor({2}, 1.0));
    CHECK_THROWS_AS(t.backward(x, {x}), std::invalid_argument);
    // unreachable leaf gets a zero gradient, not an error
    Var y = t.leaf(Tensor::scalar(2.0));
    Var loss = square(y);
    Var gx = t.backward(loss, {x})[0];
    CHECK(gx.value()[0] == 0.0);
    CHECK(gx.value()[1] == 0.0);
}

TEST_CASE("backward never mutates forward values") {
    Tape t;
    std::mt19937_64 rng(5);
    Var x = t.leaf(random_tensor({4}, rng));
    Var loss = mean_all(square(t.exp(x)));
    std::vector<double> before = loss.value().data;
    std::vector<double> xbefore = x.value().data;
    t.backward(loss, {x});
    t.backward(loss, {x});
    CHECK(loss.value().data == before);
    CHECK(x.value().data == xbefore);
}

TEST_CASE("huber value and gradient at branch points") {
    Tape t;
    Var z = t.leaf(Tensor::scalar(0.0));
    CHECK(huber(z, 1.0).value()[0] == 0.0);
    Var d = t.leaf(Tensor::scalar(1.0));
    CHECK(huber(d, 1.0).value()[0] == doctest::Approx(0.5));
    Var v = t.leaf(Tensor::scalar(3.0));
    CHECK(huber(v, 1.0).value()[0] == doctest::Approx(2.5));

    // gradient at x = 2 delta against central differences
    double delta = 0.25;
    double err = check_gradient(
        [&](Tape& tp, Var x) { return tp.sum_all(huber(x, delta)); },
        Tensor::scalar(2 * delta), 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("check_gradient on sum of squares is near exact") {
    std::mt19937_64 rng(17);
    Tensor p = random_tensor({6}, rng);
    double err = check_gradient([](Tape& t, Var x) { return t.sum_all(square(x)); }, p, 1e-6);
    CHECK(err < 1e-8);
}

TEST_CASE("randomized gradient checks for every op kind") {
    std::mt19937_64 rng(123);
    int seeds = 0;
    std::vector<std::function<Var(Tape&, Var)>> fns = {
        [](Tape& t, Var x) { return t.sum_all(t.mul(x, t.add_scalar(x, 0.5))); },
        [](Tape& t, Var x) {
            return t.sum_all(t.div(x, t.add_scalar(square(x), 2.0)));
        },
        [](Tape& t, Var x) { return t.sum_all(t.exp(t.scale(x, 0.7))); },
        [](Tape& t, Var x) { return t.sum_all(t.abs(t.add_scalar(x, 0.05))); },
        [](Tape& t, Var x) { return mean_all(square(t.neg(x))); },
        [](Tape& t, Var x) {
            Var m = t.reshape(x, {3, 4});
            return t.sum_all(square(t.matmul(m, t.transpose(m))));
        },
        [](Tape& t, Var x) {
            Var m = t.reshape(x, {3, 4});
            return t.sum_all(square(t.sum_axis(m, 1)));
        },
        [](Tape& t, Var x) {
            Var m = t.reshape(x, {12, 1});
            return t.sum_all(square(t.broadcast_axis(m, 1, 3)));
        },
        [](Tape& t, Var x) { return t.sum_all(square(softmax_axis(t.reshape(x, {3, 4}), 1))); },
        [](Tape& t, Var x) { return t.sum_all(square(elu(t.scale(x, 2.0)))); },
        [](Tape& t, Var x) { return t.sum_all(huber(x, 0.3)); },
    };
    for (int trial = 0; trial < 12; ++trial) {
        Tensor p = random_tensor({12}, rng);
        for (auto& fn : fns) {
            CHECK(check_gradient(fn, p, 1e-6) < 1e-5);
            ++seeds;
        }
    }
    CHECK(seeds >= 100);
}

TEST_CASE("gather and scatter gradient routing") {
    std::mt19937_64 rng(31);
    auto idx = std::make_shared<std::vector<int>>(std::vector<int>{2, 0, -1, 5, 2});
    Tensor p = random_tensor({6}, rng);
    double err = check_gradient(
        [&](Tape& t, Var x) { return t.sum_all(square(t.gather(x, idx, {5}))); }, p, 1e-6);
    CHECK(err < 1e-8);

    auto sidx = std::make_shared<std::vector<int>>(std::vector<int>{1, 1, -1, 0, 3, 2});
    err = check_gradient(
        [&](Tape& t, Var x) { return t.sum_all(square(t.scatter_add(x, sidx, {4}))); }, p, 1e-6);
    CHECK(err < 1e-8);
}

TEST_CASE("conv2d matches a naive convolution oracle") {
    std::mt19937_64 rng(41);
    const int h = 5, w = 6, cin = 2, cout = 3, k = 3;
    Tensor img = random_tensor({h, w, cin}, rng);
    Tensor wt = random_tensor({cin * k * k, cout}, rng);
    Tensor bs = random_tensor({1, cout}, rng);

    Tape t;
    Var out = conv2d(t.leaf(img), t.leaf(wt), t.leaf(bs), h, w, cin, cout, k);

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int co = 0; co < cout; ++co) {
                double acc = bs[co];
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx)
                        for (int ci = 0; ci < cin; ++ci) {
                            int yy = y + dy - 1, xx = x + dx - 1;
                            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                            acc += img[(yy * w + xx) * cin + ci] *
                                   wt[((dy * k + dx) * cin + ci) * cout + co];
                        }
                CHECK(out.value()[(y * w + x) * cout + co] == doctest::Approx(acc).epsilon(1e-12));
            }

    double err = check_gradient(
        [&](Tape& tp, Var wv) {
            Var o = conv2d(tp.leaf(img), tp.reshape(wv, {cin * k * k, cout}),
                           tp.leaf(bs), h, w, cin, cout, k);
            return mean_all(square(o));
        },
        Tensor({cin * k * k * cout}, wt.data), 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("conv3d gradient check") {
    std::mt19937_64 rng(43);
    const int h = 4, w = 4, d = 3, k = 3;
    Tensor vol = random_tensor({h, w, d}, rng);
    double err = check_gradient(
        [&](Tape& tp, Var p) {
            Var wv = tp.slice(p, 0, {k * k * k, 1});
            Var bv = tp.slice(p, k * k * k, {1});
            return mean_all(square(conv3d(tp.leaf(vol), wv, bv, h, w, d, k)));
        },
        random_tensor({k * k * k + 1}, rng), 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("bilinear sample values") {
    Tape t;
    const int h = 4, w = 5, c = 2;
    std::mt19937_64 rng(53);
    Tensor grid = random_tensor({h, w, c}, rng);

    Var xs = t.leaf(Tensor({3}, {2.0, 1.5, -0.5}));
    Var ys = t.leaf(Tensor({3}, {3.0, 1.5, 0.0}));
    auto r = bilinear_sample(t.leaf(grid), xs, ys, h, w, c);
    // lattice point
    CHECK(r.values.value()[0] == doctest::Approx(grid[(3 * w + 2) * c]).epsilon(1e-14));
    CHECK(r.mask[0] == 1.0);
    // midpoint of four pixels
    double mean4 = (grid[(1 * w + 1) * c] + grid[(1 * w + 2) * c] + grid[(2 * w + 1) * c] +
                    grid[(2 * w + 2) * c]) /
                   4.0;
    CHECK(r.values.value()[1 * c] == doctest::Approx(mean4).epsilon(1e-13));
    // out of bounds
    CHECK(r.values.value()[2 * c] == 0.0);
    CHECK(r.mask[2] == 0.0);
}

TEST_CASE("bilinear sample gradients flow to grid and coordinates") {
    std::mt19937_64 rng(59);
    const int h = 4, w = 4, c = 1;
    Tensor grid = random_tensor({h, w, c}, rng);
    Tensor coords({4}, {1.3, 2.6, 0.7, 1.9});  // xs then ys

    double err = check_gradient(
        [&](Tape& t, Var p) {
            Var xs = t.slice(p, 0, {2});
            Var ys = t.slice(p, 2, {2});
            auto r = bilinear_sample(t.leaf(grid), xs, ys, h, w, c);
            return t.sum_all(square(r.values));
        },
        coords, 1e-6);
    CHECK(err < 1e-5);

    err = check_gradient(
        [&](Tape& t, Var g) {
            Var xs = t.constant(Tensor({2}, {1.3, 2.6}));
            Var ys = t.constant(Tensor({2}, {0.7, 1.9}));
            auto r = bilinear_sample(t.reshape(g, {h, w, c}), xs, ys, h, w, c);
            return t.sum_all(square(r.values));
        },
        Tensor({h * w * c}, grid.data), 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("second order meta-gradient matches closed form on quadratics") {
    std::mt19937_64 rng(61);
    const int n = 6;
    const double alpha = 0.05;
    // symmetric A
    Tensor a = random_tensor({n, n}, rng);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j) a[i * n + j] = a[j * n + i];
    Tensor theta = random_tensor({n, 1}, rng);
    Tensor c = random_tensor({n, 1}, rng);

    Tape t;
    Var th = t.leaf(theta);
    Var av = t.constant(a);
    Var inner = t.scale(t.sum_all(t.mul(th, t.matmul(av, th))), 0.5);
    Var g = t.backward(inner, {th})[0];
    Var phi = t.sub(th, t.scale(g, alpha));
    Var outer = t.scale(t.sum_all(square(t.sub(phi, t.constant(c)))), 0.5);
    Tensor meta = t.backward(outer, {th})[0].value();

    // closed form: (I - alpha A) (phi - c), phi = theta - alpha A theta
    std::vector<double> phiv(n), r(n), expect(n);
    for (int i = 0; i < n; ++i) {
        double s = 0;
        for (int j = 0; j < n; ++j) s += a[i * n + j] * theta[j];
        phiv[i] = theta[i] - alpha * s;
    }
    for (int i = 0; i < n; ++i) r[i] = phiv[i] - c[i];
    for (int i = 0; i < n; ++i) {
        double s = r[i];
        for (int j = 0; j < n; ++j) s -= alpha * a[j * n + i] * r[j];
        expect[i] = s;
    }
    for (int i = 0; i < n; ++i) {
        double denom = std::max(1.0, std::abs(expect[i]));
        CHECK(std::abs(meta[i] - expect[i]) / denom < 1e-8);
    }
}

TEST_CASE("second-order check of a composed adaptation map by finite differences") {
    std::mt19937_64 rng(67);
    const int n = 5;
    const double alpha = 0.1;
    Tensor theta = random_tensor({n}, rng);
    auto fn = [&](Tape& t, Var x) {
        Var xm = t.reshape(x, {n, 1});
        Var inner = mean_all(square(t.exp(t.scale(xm, 0.5))));
        Var g = t.backward(inner, {xm})[0];
        Var phi = t.sub(xm, t.scale(g, alpha));
        return t.sum_all(square(t.add_scalar(phi, -0.3)));
    };
    CHECK(check_gradient(fn, theta, 1e-5) < 1e-5);
}
