#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvstta/autodiff.hpp"
#include "mvstta/geometry.hpp"
#include "mvstta/tensor.hpp"

namespace mvstta::net {

// Fixed layout of the flat parameter vector:
//   conv1 weight/bias, conv2 weight/bias, depth-wise projection weight/bias,
//   3D regularization conv weight/bias.
struct Arch {
    int in_channels = 3;
    int feat_channels = 8;
    int kernel = 3;
    int reg_kernel = 3;

    int conv1_w_count() const { return in_channels * kernel * kernel * feat_channels; }
    int conv2_w_count() const { return feat_channels * kernel * kernel * feat_channels; }
    int proj_w_count() const { return feat_channels; }
    int reg_w_count() const { return reg_kernel * reg_kernel * reg_kernel; }

    int conv1_w_off() const { return 0; }
    int conv1_b_off() const { return conv1_w_count(); }
    int conv2_w_off() const { return conv1_b_off() + feat_channels; }
    int conv2_b_off() const { return conv2_w_off() + conv2_w_count(); }
    int proj_w_off() const { return conv2_b_off() + feat_channels; }
    int proj_b_off() const { return proj_w_off() + proj_w_count(); }
    int reg_w_off() const { return proj_b_off() + 1; }
    int reg_b_off() const { return reg_w_off() + reg_w_count(); }

    int feature_param_count() const { return proj_w_off(); }
    int param_count() const { return reg_b_off() + 1; }

    void validate() const;
    bool operator==(const Arch&) const = default;
};

struct ModelParams {
    Arch arch;
    std::vector<double> theta;
    void validate() const;  // theta length matches arch
};

// Uniform [-s, s] weights with s = sqrt(1/fan_in), zero biases. The RNG
// mapping is spelled out by hand so results are identical across platforms.
ModelParams init_params(const Arch& arch, std::uint64_t seed);

// All graph builders take the flat parameter vector as a Var so gradients
// (and gradients of gradients) flow through every stage.
ad::Var extract_features(ad::Tape& tape, ad::Var theta, const Arch& arch,
                         const Tensor& image);

// First view is the reference. Source feature maps are sampled along the
// plane-sweep homographies at each hypothesis depth; out-of-bounds samples
// are zero. Each returned volume is H x W x D x F.
std::vector<ad::Var> build_feature_volumes(ad::Tape& tape, ad::Var theta, const Arch& arch,
                                           const std::vector<geo::PosedImage>& views,
                                           const geo::DepthHypotheses& hyps);

// C = (1/N) * sum_i (V_i - mean)^2, elementwise over the volumes.
ad::Var variance_cost(ad::Tape& tape, const std::vector<ad::Var>& volumes);

// F -> 1 projection per (pixel, depth), one 3D convolution over (H, W, D),
// then softmax over depth of the negated score.
ad::Var regularize(ad::Tape& tape, ad::Var theta, const Arch& arch, ad::Var cost, int h,
                   int w, int d);

// Probability-weighted mean of the hypothesis depths, H x W.
ad::Var expected_depth(ad::Tape& tape, ad::Var prob, const geo::DepthHypotheses& hyps,
                       int h, int w);

ad::Var forward(ad::Tape& tape, ad::Var theta, const Arch& arch,
                const std::vector<geo::PosedImage>& views,
                const geo::DepthHypotheses& hyps);

// Convenience wrapper on a throwaway tape.
Tensor forward_depth(const ModelParams& params, const std::vector<geo::PosedImage>& views,
                     const geo::DepthHypotheses& hyps);

// Mean over valid pixels of |pred - gt|.
ad::Var primary_loss(ad::Tape& tape, ad::Var pred, const Tensor& gt, const Tensor& valid);

// Binary checkpoint: 8-byte magic, little-endian arch fields and doubles.
// Round trips are bit-exact.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace mvstta::net
