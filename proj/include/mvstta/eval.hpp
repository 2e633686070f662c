#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvstta/metatta.hpp"
#include "mvstta/scenegen.hpp"
#include "mvstta/tensor.hpp"

namespace mvstta::eval {

// Metrics are pooled over the valid pixels of every sample (not averaged
// per scene first); every CSV emitted here states that in its header.
struct MetricsReport {
    double rel = 0;      // mean |pred - gt| / gt, percent
    double tau_103 = 0;  // percent of pixels with ratio < 1.03
    double tau_110 = 0;  // percent of pixels with ratio < 1.10
    long long pixel_count = 0;
    std::string config_echo;
};

double rel_error(const Tensor& pred, const Tensor& gt, const Tensor& valid);
// Ratio is max(pred/gt, gt/pred); nonpositive predictions count as outliers.
double inlier_ratio(const Tensor& pred, const Tensor& gt, const Tensor& valid, double t);

MetricsReport evaluate(const net::ModelParams& params,
                       const std::vector<scene::SceneSample>& test_set,
                       const meta::MetaConfig& cfg, bool adapt);

// Everything one experiment run needs beyond MetaConfig: scene generation,
// split sizes, pretraining, and the feature width of the model.
struct ExperimentConfig {
    meta::MetaConfig meta;
    scene::SceneSpec spec;
    int train_count = 3;
    int test_count = 2;
    int pretrain_epochs = 10;
    double pretrain_lr = 0.5;
    int feat_channels = 8;
    void validate() const;
};

bool apply_kv(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string config_to_string(const ExperimentConfig& cfg);
void write_config(const std::string& path, const ExperimentConfig& cfg);
ExperimentConfig read_config(const std::string& path);

// Pretrained baseline, meta-trained model, and the held-out test split for
// one dataset seed. Shared by the ablation and both sweeps so the expensive
// training happens once per seed.
struct RunArtifacts {
    net::ModelParams baseline;
    net::ModelParams meta_trained;
    std::vector<scene::SceneSample> test_set;
};

RunArtifacts prepare_run(const ExperimentConfig& cfg, std::uint64_t seed);

struct AblationRow {
    std::string label;
    double rel_mean = 0, rel_std = 0;
    double tau103_mean = 0, tau103_std = 0;
    double tau110_mean = 0, tau110_std = 0;
};

// Rows, in order: baseline, baseline + TTA (no meta), meta-trained (no TTA),
// meta-trained + TTA. Mean and population std across seeds.
std::vector<AblationRow> run_ablation(const std::vector<RunArtifacts>& runs,
                                      const ExperimentConfig& cfg);
std::vector<AblationRow> run_ablation(const std::vector<std::uint64_t>& seeds,
                                      const ExperimentConfig& cfg);
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct SweepRow {
    int steps = 0;
    double rel = 0, tau_103 = 0, tau_110 = 0;
};

// Meta-trained model at each TTA step count, mean across seeds, rows sorted
// ascending by step.
std::vector<SweepRow> step_sweep(const std::vector<RunArtifacts>& runs,
                                 const ExperimentConfig& cfg, std::vector<int> steps);
std::vector<SweepRow> step_sweep(const std::vector<std::uint64_t>& seeds,
                                 const ExperimentConfig& cfg, std::vector<int> steps);
std::string sweep_csv(const std::vector<SweepRow>& rows);

struct KRow {
    int k = 0;
    double tau_103 = 0, rel = 0, tau_110 = 0;
};

// Meta-trained model adapted with top-K view selection, one row per K, mean
// across seeds.
std::vector<KRow> k_sweep(const std::vector<RunArtifacts>& runs, const ExperimentConfig& cfg,
                          std::vector<int> ks);
std::vector<KRow> k_sweep(const std::vector<std::uint64_t>& seeds, const ExperimentConfig& cfg,
                          std::vector<int> ks);
std::string k_csv(const std::vector<KRow>& rows);

}  // namespace mvstta::eval
