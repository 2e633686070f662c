#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mvstta/tensor.hpp"

namespace mvstta::ad {

using mvstta::Tensor;

// Primitive op set. Every VJP below is itself expressed with these ops, so
// gradients are recorded on the tape and can be differentiated again
// (backprop through backprop).
enum class OpKind {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Abs,
    Scale,      // value * scalar
    AddScalar,  // value + scalar
    SumAll,
    BroadcastAll,
    SumAxis,        // keeps the reduced axis with extent 1
    BroadcastAxis,  // expands an extent-1 axis
    MatMul,
    Transpose,
    Gather,      // out[i] = in[idx[i]], idx -1 -> 0
    ScatterAdd,  // out[idx[i]] += in[i], idx -1 dropped
    Reshape,
};

using IndexMap = std::shared_ptr<const std::vector<int>>;

struct Node {
    OpKind op;
    int a = -1, b = -1;
    Tensor value;
    double scalar = 0.0;  // Scale / AddScalar payload
    int axis = 0;         // SumAxis / BroadcastAxis
    IndexMap index;       // Gather / ScatterAdd
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    const Tensor& value() const;
    bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
public:
    Var leaf(Tensor v);
    Var constant(Tensor v);
    Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var neg(Var a);
    Var exp(Var a);
    Var abs(Var a);
    Var scale(Var a, double s);
    Var add_scalar(Var a, double s);
    Var sum_all(Var a);
    Var broadcast_all(Var a, std::vector<int> shape);
    Var sum_axis(Var a, int axis);
    Var broadcast_axis(Var a, int axis, int extent);
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var gather(Var a, IndexMap idx, std::vector<int> out_shape);
    Var scatter_add(Var a, IndexMap idx, std::vector<int> out_shape);
    Var reshape(Var a, std::vector<int> shape);

    // Contiguous sub-range of a flat tensor, reshaped.
    Var slice(Var flat, int offset, std::vector<int> shape);

    // Reverse accumulation from a scalar loss. Returned gradients are Vars
    // recorded on this tape, so a later backward differentiates through them.
    // Leaves unreachable from the loss get zero gradients.
    std::vector<Var> backward(Var loss, const std::vector<Var>& leaves);

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    size_t size() const { return nodes_.size(); }

    Tape() { nodes_.reserve(1024); }

private:
    friend struct Var;
    int push(Node n);
    Var emit_vjp(const Node& n, int nid, Var g, int input_slot);
    void check_same_shape(const char* op, Var a, Var b) const;
    std::vector<Node> nodes_;
};

// ---- composite ops (built from the primitives above) ----

Var square(Var x);
Var elu(Var x);
Var relu_mask_apply(Var x, const Tensor& mask);  // x * const(mask)
Var mul_const(Var x, const Tensor& c);
Var softmax_axis(Var x, int axis);
Var mean_all(Var x);
Var huber(Var x, double delta);

// Same-resolution 2D convolution with zero padding. Input H x W x Cin,
// weight (Cin*k*k) x Cout, bias 1 x Cout, odd k. Output H x W x Cout.
Var conv2d(Var input, Var weight, Var bias, int h, int w, int cin, int cout, int k);

// Single-channel 3D convolution over an H x W x D grid, odd k. Zero padding
// spatially, replicate padding along the third axis (so a signal constant in
// that axis stays constant). Weight (k*k*k) x 1, bias scalar.
Var conv3d(Var input, Var weight, Var bias, int h, int w, int d, int k);

struct SampleResult {
    Var values;   // P x C
    Tensor mask;  // P, 1 if all four neighbors in bounds
};

// 4-neighbor bilinear interpolation of grid H x W x C at P coordinates.
// Differentiable w.r.t. both the grid and the coordinates; out-of-bounds
// samples are zero with zero gradient.
SampleResult bilinear_sample(Var grid, Var xs, Var ys, int h, int w, int c);

// Max over coordinates of |analytic - central difference| / max(1, |central|).
double check_gradient(const std::function<Var(Tape&, Var)>& fn, const Tensor& point,
                      double step);

}  // namespace mvstta::ad
