#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mvstta/mvsnet.hpp"
#include "mvstta/photoloss.hpp"
#include "mvstta/scenegen.hpp"

namespace mvstta::meta {

struct MetaConfig {
    double alpha = 1e-4;  // inner / TTA learning rate
    double beta = 1e-4;   // meta learning rate
    int inner_steps = 1;
    int tta_steps = 2;
    int meta_batch = 2;
    int n_views = 3;  // primary-task views (reference + N-1 sources)
    int m_views = 4;  // source views for the photometric objective
    bool second_order = true;
    int meta_iterations = 200;
    std::uint64_t seed = 0;
    photo::PhotoLossConfig photo;
    void validate() const;
};

// "key = value" lines; '#' starts a comment. Unknown keys are rejected by
// read_config but tolerated by apply_kv so callers can layer more keys on
// the same file.
std::vector<std::pair<std::string, std::string>> read_kv_file(const std::string& path);
bool apply_kv(MetaConfig& cfg, const std::string& key, const std::string& value);
std::string config_to_string(const MetaConfig& cfg);
void write_config(const std::string& path, const MetaConfig& cfg);
MetaConfig read_config(const std::string& path);

struct PretrainResult {
    net::ModelParams params;
    std::vector<double> loss_trace;  // mean primary loss per epoch
};

// Plain per-sample gradient descent on the supervised primary loss.
PretrainResult pretrain(const net::ModelParams& params,
                        const std::vector<scene::SceneSample>& dataset, int epochs, double lr,
                        std::uint64_t seed, int n_views);

// steps gradient-descent updates on the photometric loss over all views of
// the sample. Ground truth is never touched.
net::ModelParams inner_adapt(const net::ModelParams& params, const scene::SceneSample& sample,
                             double alpha, int steps, const photo::PhotoLossConfig& photo_cfg,
                             int n_views);

// Same update with an arbitrary scalar loss, recorded on the caller's tape so
// a later backward differentiates through the whole chain.
using LossFn = std::function<ad::Var(ad::Tape&, ad::Var)>;
ad::Var adapt_on_tape(ad::Tape& tape, ad::Var theta, const LossFn& inner, double alpha,
                      int steps);

// Gradient of outer(adapt(theta)) with respect to theta. With second_order
// false the adapted parameters are treated as fresh leaves.
struct MetaGrad {
    Tensor grad;
    double inner_loss = 0;  // inner loss before any update
    double outer_loss = 0;  // outer loss after adaptation
};
MetaGrad meta_gradient(const Tensor& theta, const LossFn& inner, const LossFn& outer,
                       double alpha, int steps, bool second_order);

// One outer update over a batch: adapt each sample on the photometric loss,
// accumulate the gradient of the post-adaptation primary loss with respect
// to the pre-adaptation parameters (or the adapted ones when second_order is
// false), and take a gradient step.
net::ModelParams meta_step(const net::ModelParams& params,
                           const std::vector<scene::SceneSample>& batch, const MetaConfig& cfg);

struct MetaTrace {
    std::vector<double> inner_photo;    // mean pre-adaptation photometric loss
    std::vector<double> outer_primary;  // mean post-adaptation primary loss
};
struct MetaTrainResult {
    net::ModelParams params;
    MetaTrace trace;
};

MetaTrainResult meta_train(const net::ModelParams& params,
                           const std::vector<scene::SceneSample>& dataset,
                           const MetaConfig& cfg);

// Per-sample adaptation from the same starting parameters every time.
net::ModelParams test_time_adapt(const net::ModelParams& params,
                                 const scene::SceneSample& sample, const MetaConfig& cfg);

}  // namespace mvstta::meta
