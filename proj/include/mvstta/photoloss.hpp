#pragma once

#include <utility>
#include <vector>

#include "mvstta/autodiff.hpp"
#include "mvstta/geometry.hpp"
#include "mvstta/mvsnet.hpp"
#include "mvstta/tensor.hpp"

namespace mvstta::photo {

struct PhotoLossConfig {
    double huber_delta = 0.1;
    int top_k = 2;
    int ssim_window = 7;
    double ssim_c1 = 1e-4;  // 0.01^2 on [0,1] intensities
    double ssim_c2 = 9e-4;  // 0.03^2
    double ssim_weight = 1.0;
    void validate(int m_views, int h, int w) const;
};

// Forward differences along x and y; the last column/row is zero.
struct GradientPair {
    ad::Var gx, gy;
};
GradientPair image_gradient(ad::Tape& tape, ad::Var img, int h, int w, int c);
std::pair<Tensor, Tensor> image_gradient(const Tensor& img);

// Per-pixel map of Huber pixel residuals (summed over channels) plus L1
// gradient residuals; masked-out pixels contribute zero. H x W.
ad::Var reproj_error_per_view(ad::Tape& tape, const Tensor& ref, ad::Var warped,
                              const Tensor& mask, const PhotoLossConfig& cfg);

// Per pixel, the sum of the K smallest per-view losses among visible views
// (all visible views when fewer than K are visible; ties break toward the
// lower view index). Total normalized by pixel count. Gradients flow only
// through the selected views.
ad::Var topk_reproj(ad::Tape& tape, const std::vector<ad::Var>& maps,
                    const std::vector<Tensor>& masks, int k);

// Mean over views, channels, and masked pixels of (1 - SSIM)/2 clamped to
// [0,1]. Window statistics are renormalized over the visible pixels of each
// uniform window; windows with no visible support are skipped.
ad::Var ssim_loss(ad::Tape& tape, const Tensor& ref, const std::vector<ad::Var>& warped,
                  const std::vector<Tensor>& masks, const PhotoLossConfig& cfg);

// Full self-supervised objective: predict depth from the reference plus the
// first n_views-1 sources, inverse-warp every source view, then combine the
// top-K reprojection term and the SSIM term.
ad::Var photometric_loss(ad::Tape& tape, ad::Var theta, const net::Arch& arch,
                         const std::vector<geo::PosedImage>& views, int n_views,
                         const geo::DepthHypotheses& hyps, const PhotoLossConfig& cfg);

}  // namespace mvstta::photo
