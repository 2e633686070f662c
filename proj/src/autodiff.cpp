#include "mvstta/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>

namespace mvstta::ad {

const Tensor& Var::value() const { return tape->value(id); }

int Tape::push(Node n) {
    if (!n.value.all_finite())
        throw std::runtime_error("tape: non-finite value produced by op");
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check_same_shape(const char* op, Var a, Var b) const {
    if (!value(a.id).same_shape(value(b.id)))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    value(a.id).shape_str() + " vs " + value(b.id).shape_str());
}

Var Tape::leaf(Tensor v) {
    Node n;
    n.op = OpKind::Leaf;
    n.value = std::move(v);
    return {this, push(std::move(n))};
}

Var Tape::constant(Tensor v) {
    Node n;
    n.op = OpKind::Constant;
    n.value = std::move(v);
    return {this, push(std::move(n))};
}

template <class F>
static Tensor ew(const Tensor& a, const Tensor& b, F f) {
    Tensor out(a.shape);
    for (int i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
    return out;
}

Var Tape::add(Var a, Var b) {
    check_same_shape("add", a, b);
    Node n{OpKind::Add, a.id, b.id, ew(value(a.id), value(b.id), [](double x, double y) { return x + y; })};
    return {this, push(std::move(n))};
}

Var Tape::sub(Var a, Var b) {
    check_same_shape("sub", a, b);
    Node n{OpKind::Sub, a.id, b.id, ew(value(a.id), value(b.id), [](double x, double y) { return x - y; })};
    return {this, push(std::move(n))};
}

Var Tape::mul(Var a, Var b) {
    check_same_shape("mul", a, b);
    Node n{OpKind::Mul, a.id, b.id, ew(value(a.id), value(b.id), [](double x, double y) { return x * y; })};
    return {this, push(std::move(n))};
}

Var Tape::div(Var a, Var b) {
    check_same_shape("div", a, b);
    Node n{OpKind::Div, a.id, b.id, ew(value(a.id), value(b.id), [](double x, double y) { return x / y; })};
    return {this, push(std::move(n))};
}

template <class F>
static Tensor map1(const Tensor& a, F f) {
    Tensor out(a.shape);
    for (int i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
    return out;
}

Var Tape::neg(Var a) {
    Node n{OpKind::Neg, a.id, -1, map1(value(a.id), [](double x) { return -x; })};
    return {this, push(std::move(n))};
}

Var Tape::exp(Var a) {
    Node n{OpKind::Exp, a.id, -1, map1(value(a.id), [](double x) { return std::exp(x); })};
    return {this, push(std::move(n))};
}

Var Tape::abs(Var a) {
    Node n{OpKind::Abs, a.id, -1, map1(value(a.id), [](double x) { return std::abs(x); })};
    return {this, push(std::move(n))};
}

Var Tape::scale(Var a, double s) {
    Node n;
    n.op = OpKind::Scale;
    n.a = a.id;
    n.scalar = s;
    n.value = value(a.id);
    for (double& v : n.value.data) v *= s;
    return {this, push(std::move(n))};
}

Var Tape::add_scalar(Var a, double s) {
    Node n;
    n.op = OpKind::AddScalar;
    n.a = a.id;
    n.scalar = s;
    n.value = value(a.id);
    for (double& v : n.value.data) v += s;
    return {this, push(std::move(n))};
}

Var Tape::sum_all(Var a) {
    double s = 0.0;
    for (double v : value(a.id).data) s += v;
    Node n;
    n.op = OpKind::SumAll;
    n.a = a.id;
    n.value = Tensor::scalar(s);
    return {this, push(std::move(n))};
}

Var Tape::broadcast_all(Var a, std::vector<int> shape) {
    if (value(a.id).numel() != 1)
        throw std::invalid_argument("broadcast_all: input not scalar " + value(a.id).shape_str());
    Node n;
    n.op = OpKind::BroadcastAll;
    n.a = a.id;
    n.value = Tensor(std::move(shape), value(a.id)[0]);
    return {this, push(std::move(n))};
}

static void axis_extents(const std::vector<int>& shape, int axis, long long& outer,
                         long long& extent, long long& inner) {
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw std::invalid_argument("axis out of range for " + Tensor::shape_str(shape));
    outer = 1;
    inner = 1;
    extent = shape[static_cast<size_t>(axis)];
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

Var Tape::sum_axis(Var a, int axis) {
    const Tensor& in = value(a.id);
    long long outer, extent, inner;
    axis_extents(in.shape, axis, outer, extent, inner);
    std::vector<int> oshape = in.shape;
    oshape[static_cast<size_t>(axis)] = 1;
    Tensor out(oshape, 0.0);
    for (long long o = 0; o < outer; ++o)
        for (long long e = 0; e < extent; ++e) {
            const double* src = in.data.data() + (o * extent + e) * inner;
            double* dst = out.data.data() + o * inner;
            for (long long i = 0; i < inner; ++i) dst[i] += src[i];
        }
    Node n;
    n.op = OpKind::SumAxis;
    n.a = a.id;
    n.axis = axis;
    n.value = std::move(out);
    return {this, push(std::move(n))};
}

Var Tape::broadcast_axis(Var a, int axis, int extent) {
    const Tensor& in = value(a.id);
    long long outer, one, inner;
    axis_extents(in.shape, axis, outer, one, inner);
    if (one != 1)
        throw std::invalid_argument("broadcast_axis: axis extent not 1 in " + in.shape_str());
    std::vector<int> oshape = in.shape;
    oshape[static_cast<size_t>(axis)] = extent;
    Tensor out(oshape);
    for (long long o = 0; o < outer; ++o)
        for (long long e = 0; e < extent; ++e) {
            const double* src = in.data.data() + o * inner;
            double* dst = out.data.data() + (o * extent + e) * inner;
            std::copy(src, src + inner, dst);
        }
    Node n;
    n.op = OpKind::BroadcastAxis;
    n.a = a.id;
    n.axis = axis;
    n.value = std::move(out);
    return {this, push(std::move(n))};
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& A = value(a.id);
    const Tensor& B = value(b.id);
    if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[0])
        throw std::invalid_argument("matmul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    int m = A.shape[0], k = A.shape[1], nn = B.shape[1];
    Tensor out({m, nn}, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = A.data.data() + static_cast<size_t>(i) * k;
        double* orow = out.data.data() + static_cast<size_t>(i) * nn;
        for (int kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = B.data.data() + static_cast<size_t>(kk) * nn;
            for (int j = 0; j < nn; ++j) orow[j] += av * brow[j];
        }
    }
    Node n;
    n.op = OpKind::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(out);
    return {this, push(std::move(n))};
}

Var Tape::transpose(Var a) {
    const Tensor& A = value(a.id);
    if (A.shape.size() != 2) throw std::invalid_argument("transpose: not 2D " + A.shape_str());
    int m = A.shape[0], k = A.shape[1];
    Tensor out({k, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) out[j * m + i] = A[i * k + j];
    Node n;
    n.op = OpKind::Transpose;
    n.a = a.id;
    n.value = std::move(out);
    return {this, push(std::move(n))};
}

Var Tape::gather(Var a, IndexMap idx, std::vector<int> out_shape) {
    const Tensor& in = value(a.id);
    Tensor out(out_shape, 0.0);
    if (static_cast<long long>(idx->size()) != out.numel())
        throw std::invalid_argument("gather: index size mismatch");
    const int nin = in.numel();
    for (size_t i = 0; i < idx->size(); ++i) {
        int j = (*idx)[i];
        if (j >= nin) throw std::invalid_argument("gather: index out of range");
        if (j >= 0) out.data[i] = in.data[static_cast<size_t>(j)];
    }
    Node n;
    n.op = OpKind::Gather;
    n.a = a.id;
    n.index = std::move(idx);
    n.value = std::move(out);
    return {this, push(std::move(n))};
}

Var Tape::scatter_add(Var a, IndexMap idx, std::vector<int> out_shape) {
    const Tensor& in = value(a.id);
    if (static_cast<long long>(idx->size()) != in.numel())
        throw std::invalid_argument("scatter_add: index size mismatch");
    Tensor out(out_shape, 0.0);
    const int nout = out.numel();
    for (size_t i = 0; i < idx->size(); ++i) {
        int j = (*idx)[i];
        if (j >= nout) throw std::invalid_argument("scatter_add: index out of range");
        if (j >= 0) out.data[static_cast<size_t>(j)] += in.data[i];
    }
    Node n;
    n.op = OpKind::ScatterAdd;
    n.a = a.id;
    n.index = std::move(idx);
    n.value = std::move(out);
    return {this, push(std::move(n))};
}

Var Tape::reshape(Var a, std::vector<int> shape) {
    const Tensor& in = value(a.id);
    if (Tensor::count(shape) != static_cast<long long>(in.data.size()))
        throw std::invalid_argument("reshape: element count mismatch " + in.shape_str() + " -> " +
                                    Tensor::shape_str(shape));
    Node n;
    n.op = OpKind::Reshape;
    n.a = a.id;
    n.value = Tensor(std::move(shape), in.data);
    return {this, push(std::move(n))};
}

Var Tape::slice(Var flat, int offset, std::vector<int> shape) {
    long long cnt = Tensor::count(shape);
    auto idx = std::make_shared<std::vector<int>>(static_cast<size_t>(cnt));
    for (long long i = 0; i < cnt; ++i) (*idx)[static_cast<size_t>(i)] = offset + static_cast<int>(i);
    return gather(flat, std::move(idx), std::move(shape));
}

std::vector<Var> Tape::backward(Var loss, const std::vector<Var>& leaves) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
    for (const Var& l : leaves)
        if (l.tape != this) throw std::invalid_argument("backward: leaf from another tape");
    if (value(loss.id).numel() != 1)
        throw std::invalid_argument("backward: loss not scalar, shape " + value(loss.id).shape_str());

    const int top = loss.id;
    std::vector<char> needed(static_cast<size_t>(top) + 1, 0);
    std::vector<int> stack{top};
    needed[static_cast<size_t>(top)] = 1;
    while (!stack.empty()) {
        int u = stack.back();
        stack.pop_back();
        const Node& n = nodes_[static_cast<size_t>(u)];
        for (int v : {n.a, n.b})
            if (v >= 0 && !needed[static_cast<size_t>(v)] &&
                nodes_[static_cast<size_t>(v)].op != OpKind::Constant) {
                needed[static_cast<size_t>(v)] = 1;
                stack.push_back(v);
            }
    }

    std::vector<int> grad(static_cast<size_t>(top) + 1, -1);
    grad[static_cast<size_t>(top)] = constant(Tensor(value(top).shape, 1.0)).id;

    auto acc = [&](int target, Var g) {
        if (target < 0 || !needed[static_cast<size_t>(target)]) return;
        if (nodes_[static_cast<size_t>(target)].op == OpKind::Constant) return;
        int& slot = grad[static_cast<size_t>(target)];
        slot = slot < 0 ? g.id : add(Var{this, slot}, g).id;
    };

    for (int i = top; i >= 0; --i) {
        if (grad[static_cast<size_t>(i)] < 0) continue;
        Var g{this, grad[static_cast<size_t>(i)]};
        // copy the cheap fields; nodes_ may reallocate when VJPs are emitted
        const OpKind op = nodes_[static_cast<size_t>(i)].op;
        const int a = nodes_[static_cast<size_t>(i)].a;
        const int b = nodes_[static_cast<size_t>(i)].b;
        const int axis = nodes_[static_cast<size_t>(i)].axis;
        const double s = nodes_[static_cast<size_t>(i)].scalar;
        const IndexMap idx = nodes_[static_cast<size_t>(i)].index;
        switch (op) {
            case OpKind::Leaf:
            case OpKind::Constant:
                break;
            case OpKind::Add:
                acc(a, g);
                acc(b, g);
                break;
            case OpKind::Sub:
                acc(a, g);
                acc(b, neg(g));
                break;
            case OpKind::Mul:
                acc(a, mul(g, Var{this, b}));
                acc(b, mul(g, Var{this, a}));
                break;
            case OpKind::Div: {
                Var A{this, a}, B{this, b};
                acc(a, div(g, B));
                acc(b, neg(div(mul(g, A), mul(B, B))));
                break;
            }
            case OpKind::Neg:
                acc(a, neg(g));
                break;
            case OpKind::Exp:
                acc(a, mul(g, Var{this, i}));
                break;
            case OpKind::Abs: {
                // subgradient: sign captured from the forward value, 0 at 0
                Tensor sgn = value(a);
                for (double& v : sgn.data) v = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                acc(a, mul(g, constant(std::move(sgn))));
                break;
            }
            case OpKind::Scale:
                acc(a, scale(g, s));
                break;
            case OpKind::AddScalar:
                acc(a, g);
                break;
            case OpKind::SumAll:
                acc(a, broadcast_all(g, value(a).shape));
                break;
            case OpKind::BroadcastAll:
                acc(a, sum_all(g));
                break;
            case OpKind::SumAxis:
                acc(a, broadcast_axis(g, axis, value(a).shape[static_cast<size_t>(axis)]));
                break;
            case OpKind::BroadcastAxis:
                acc(a, sum_axis(g, axis));
                break;
            case OpKind::MatMul: {
                Var A{this, a}, B{this, b};
                acc(a, matmul(g, transpose(B)));
                acc(b, matmul(transpose(A), g));
                break;
            }
            case OpKind::Transpose:
                acc(a, transpose(g));
                break;
            case OpKind::Gather:
                acc(a, scatter_add(g, idx, value(a).shape));
                break;
            case OpKind::ScatterAdd:
                acc(a, gather(g, idx, value(a).shape));
                break;
            case OpKind::Reshape:
                acc(a, reshape(g, value(a).shape));
                break;
        }
    }

    std::vector<Var> out;
    out.reserve(leaves.size());
    for (const Var& l : leaves) {
        int gi = l.id <= top ? grad[static_cast<size_t>(l.id)] : -1;
        out.push_back(gi >= 0 ? Var{this, gi} : constant(Tensor(value(l.id).shape, 0.0)));
    }
    return out;
}

// ---- composites ----

Var square(Var x) { return x.tape->mul(x, x); }

Var mul_const(Var x, const Tensor& c) { return x.tape->mul(x, x.tape->constant(c)); }

Var relu_mask_apply(Var x, const Tensor& mask) { return mul_const(x, mask); }

Var elu(Var x) {
    Tape& t = *x.tape;
    const Tensor& v = x.value();
    Tensor pos(v.shape), negm(v.shape);
    for (int i = 0; i < v.numel(); ++i) {
        pos[i] = v[i] > 0.0 ? 1.0 : 0.0;
        negm[i] = 1.0 - pos[i];
    }
    Var clipped = mul_const(x, negm);  // zero where positive, keeps exp bounded
    Var neg_part = t.mul(t.add_scalar(t.exp(clipped), -1.0), t.constant(negm));
    return t.add(mul_const(x, pos), neg_part);
}

Var softmax_axis(Var x, int axis) {
    Tape& t = *x.tape;
    const Tensor& v = x.value();
    long long outer, extent, inner;
    axis_extents(v.shape, axis, outer, extent, inner);
    // constant shift for numerical stability; softmax is shift-invariant
    std::vector<int> mshape = v.shape;
    mshape[static_cast<size_t>(axis)] = 1;
    Tensor mx(mshape, -std::numeric_limits<double>::infinity());
    for (long long o = 0; o < outer; ++o)
        for (long long e = 0; e < extent; ++e)
            for (long long i = 0; i < inner; ++i)
                mx.data[static_cast<size_t>(o * inner + i)] =
                    std::max(mx.data[static_cast<size_t>(o * inner + i)],
                             v.data[static_cast<size_t>((o * extent + e) * inner + i)]);
    Var shifted = t.sub(x, t.broadcast_axis(t.constant(std::move(mx)), axis, static_cast<int>(extent)));
    Var e = t.exp(shifted);
    Var s = t.sum_axis(e, axis);
    return t.div(e, t.broadcast_axis(s, axis, static_cast<int>(extent)));
}

Var mean_all(Var x) {
    Tape& t = *x.tape;
    return t.scale(t.sum_all(x), 1.0 / x.value().numel());
}

Var huber(Var x, double delta) {
    if (delta <= 0.0) throw std::invalid_argument("huber: delta must be positive");
    Tape& t = *x.tape;
    const Tensor& v = x.value();
    Tensor quadm(v.shape), linm(v.shape);
    for (int i = 0; i < v.numel(); ++i) {
        quadm[i] = std::abs(v[i]) <= delta ? 1.0 : 0.0;
        linm[i] = 1.0 - quadm[i];
    }
    Var quad = t.scale(mul_const(square(x), quadm), 0.5);
    Var lin = t.mul(t.add_scalar(t.scale(t.abs(x), delta), -0.5 * delta * delta), t.constant(linm));
    return t.add(quad, lin);
}

// im2col index maps depend only on the spatial layout, so they are memoized
// per shape instead of being rebuilt on every op.
static IndexMap conv2d_index(int h, int w, int cin, int k) {
    thread_local std::map<std::array<int, 4>, IndexMap> cache;
    IndexMap& slot = cache[{h, w, cin, k}];
    if (slot) return slot;
    const int p = k / 2;
    const int cols = cin * k * k;
    auto idx = std::make_shared<std::vector<int>>(static_cast<size_t>(h) * w * cols);
    size_t q = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int dy = 0; dy < k; ++dy)
                for (int dx = 0; dx < k; ++dx) {
                    int yy = y + dy - p, xx = x + dx - p;
                    bool in = yy >= 0 && yy < h && xx >= 0 && xx < w;
                    for (int c = 0; c < cin; ++c)
                        (*idx)[q++] = in ? (yy * w + xx) * cin + c : -1;
                }
    slot = std::move(idx);
    return slot;
}

Var conv2d(Var input, Var weight, Var bias, int h, int w, int cin, int cout, int k) {
    Tape& t = *input.tape;
    if (input.value().numel() != h * w * cin)
        throw std::invalid_argument("conv2d: input size mismatch " + input.value().shape_str());
    const int cols = cin * k * k;
    Var col = t.gather(input, conv2d_index(h, w, cin, k), {h * w, cols});
    Var mm = t.matmul(col, weight);
    Var out = t.add(mm, t.broadcast_axis(bias, 0, h * w));
    return t.reshape(out, {h, w, cout});
}

static IndexMap conv3d_index(int h, int w, int d, int k) {
    thread_local std::map<std::array<int, 4>, IndexMap> cache;
    IndexMap& slot = cache[{h, w, d, k}];
    if (slot) return slot;
    const int p = k / 2;
    const int cols = k * k * k;
    auto idx = std::make_shared<std::vector<int>>(static_cast<size_t>(h) * w * d * cols);
    size_t q = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int z = 0; z < d; ++z)
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx)
                        for (int dz = 0; dz < k; ++dz) {
                            int yy = y + dy - p, xx = x + dx - p;
                            int zz = std::clamp(z + dz - p, 0, d - 1);
                            bool in = yy >= 0 && yy < h && xx >= 0 && xx < w;
                            (*idx)[q++] = in ? (yy * w + xx) * d + zz : -1;
                        }
    slot = std::move(idx);
    return slot;
}

Var conv3d(Var input, Var weight, Var bias, int h, int w, int d, int k) {
    Tape& t = *input.tape;
    if (input.value().numel() != h * w * d)
        throw std::invalid_argument("conv3d: input size mismatch " + input.value().shape_str());
    const int cols = k * k * k;
    Var col = t.gather(input, conv3d_index(h, w, d, k), {h * w * d, cols});
    Var mm = t.matmul(col, weight);
    Var out = t.add(mm, t.broadcast_all(bias, {h * w * d, 1}));
    return t.reshape(out, {h, w, d});
}

SampleResult bilinear_sample(Var grid, Var xs, Var ys, int h, int w, int c) {
    Tape& t = *grid.tape;
    const Tensor& xv = xs.value();
    const Tensor& yv = ys.value();
    if (xv.numel() != yv.numel())
        throw std::invalid_argument("bilinear_sample: coordinate count mismatch");
    const int np = xv.numel();
    constexpr double kEdgeEps = 1e-9;

    Tensor mask({np}, 0.0);
    Tensor x0t({np, 1}), y0t({np, 1});
    auto i00 = std::make_shared<std::vector<int>>(static_cast<size_t>(np) * c, -1);
    auto i10 = std::make_shared<std::vector<int>>(static_cast<size_t>(np) * c, -1);
    auto i01 = std::make_shared<std::vector<int>>(static_cast<size_t>(np) * c, -1);
    auto i11 = std::make_shared<std::vector<int>>(static_cast<size_t>(np) * c, -1);
    for (int pnt = 0; pnt < np; ++pnt) {
        double x = xv[pnt], y = yv[pnt];
        bool ok = x >= -kEdgeEps && x <= w - 1 + kEdgeEps && y >= -kEdgeEps && y <= h - 1 + kEdgeEps;
        int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, w - 2);
        int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, h - 2);
        x0t[pnt] = x0;
        y0t[pnt] = y0;
        if (!ok) continue;
        mask[pnt] = 1.0;
        for (int ch = 0; ch < c; ++ch) {
            (*i00)[static_cast<size_t>(pnt) * c + ch] = (y0 * w + x0) * c + ch;
            (*i10)[static_cast<size_t>(pnt) * c + ch] = (y0 * w + x0 + 1) * c + ch;
            (*i01)[static_cast<size_t>(pnt) * c + ch] = ((y0 + 1) * w + x0) * c + ch;
            (*i11)[static_cast<size_t>(pnt) * c + ch] = ((y0 + 1) * w + x0 + 1) * c + ch;
        }
    }

    Var fx = t.broadcast_axis(t.sub(t.reshape(xs, {np, 1}), t.constant(std::move(x0t))), 1, c);
    Var fy = t.broadcast_axis(t.sub(t.reshape(ys, {np, 1}), t.constant(std::move(y0t))), 1, c);
    Var omx = t.add_scalar(t.neg(fx), 1.0);
    Var omy = t.add_scalar(t.neg(fy), 1.0);
    Var g00 = t.gather(grid, std::move(i00), {np, c});
    Var g10 = t.gather(grid, std::move(i10), {np, c});
    Var g01 = t.gather(grid, std::move(i01), {np, c});
    Var g11 = t.gather(grid, std::move(i11), {np, c});
    Var top = t.add(t.mul(t.mul(omx, omy), g00), t.mul(t.mul(fx, omy), g10));
    Var bot = t.add(t.mul(t.mul(omx, fy), g01), t.mul(t.mul(fx, fy), g11));
    return {t.add(top, bot), std::move(mask)};
}

double check_gradient(const std::function<Var(Tape&, Var)>& fn, const Tensor& point,
                      double step) {
    if (step <= 0.0) throw std::invalid_argument("check_gradient: step must be positive");
    Tensor analytic;
    {
        Tape t;
        Var x = t.leaf(point);
        Var loss = fn(t, x);
        if (loss.value().numel() != 1)
            throw std::invalid_argument("check_gradient: fn did not return a scalar");
        analytic = t.backward(loss, {x})[0].value();
    }
    auto eval = [&](const Tensor& p) {
        Tape t;
        double v = fn(t, t.leaf(p)).value()[0];
        if (!std::isfinite(v)) throw std::runtime_error("check_gradient: non-finite fn value");
        return v;
    };
    double max_rel = 0.0;
    Tensor p = point;
    for (int i = 0; i < point.numel(); ++i) {
        const double orig = p[i];
        p[i] = orig + step;
        double fp = eval(p);
        p[i] = orig - step;
        double fm = eval(p);
        p[i] = orig;
        double central = (fp - fm) / (2.0 * step);
        double rel = std::abs(analytic[i] - central) / std::max(1.0, std::abs(central));
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace mvstta::ad
