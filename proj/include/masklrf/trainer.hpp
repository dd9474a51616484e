#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "masklrf/geomio.hpp"
#include "masklrf/patchify.hpp"
#include "masklrf/r2pt.hpp"

namespace masklrf {

struct TrainConfig {
    std::size_t epochs = 300;
    std::size_t batch = 64;
    double lr_max = 1e-3;
    double lr_min = 1e-6;
    double warmup_epochs = 0.0;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    unsigned mask_ratio = 60;
    std::uint64_t seed = 0;
    /// Global gradient-norm clip; 0 disables.
    double clip_norm = 0.0;
    bool augment = true;

    void validate() const;
    std::map<std::string, std::string> to_kv() const;
    static TrainConfig from_kv(const std::map<std::string, std::string>& kv, TrainConfig base);
};

using Gradients = std::vector<Matrix>;

struct OptState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    std::uint64_t step = 0;

    static OptState zeros_like(const ModelState& state);
};

struct AdamWParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

/// sum_i |z_i - zhat_i|^2 over masked rows.
double mpm_loss(const Matrix& z, const Matrix& zhat);

/// Decoupled weight decay then the bias-corrected Adam step.
void adamw_step(std::vector<Tensor>& params, const Gradients& grads, OptState& opt, double lr, const AdamWParams& hp);

/// u in [0, 1] is the fraction of training elapsed.
double lr_at(double u, const TrainConfig& cfg);

/// One masked-autoencoding example: patches with frames, the split, and stacked targets.
struct PretrainSample {
    std::vector<Patch> patches;
    MaskSplit split;
    Matrix targets;
};

PretrainSample make_sample(const PointCloud& pc, const ModelConfig& mcfg, unsigned mask_ratio, std::uint64_t mask_seed);

/// The sample seen for dataset[index] in a given epoch (augmentation + mask).
PretrainSample training_sample(const PointCloud& pc, const TrainConfig& cfg, const ModelConfig& mcfg,
                               std::size_t epoch, std::size_t index);

Matrix predict(const ModelState& state, const PretrainSample& sample);
double sample_loss(const ModelState& state, const PretrainSample& sample);

struct LossGrad {
    double loss = 0.0;
    Gradients grads;
};

/// Forward, mpm_loss and reverse-mode backward for every tensor of the state.
LossGrad loss_and_grad(const ModelState& state, const PretrainSample& sample);

struct EpochRecord {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;
};

struct PretrainResult {
    ModelState state;
    std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

PretrainResult pretrain(const std::vector<PointCloud>& dataset, const TrainConfig& cfg, const ModelConfig& mcfg,
                        const EpochCallback& on_epoch = {});
/// Same loop starting from a given state.
PretrainResult pretrain_from(ModelState state, const std::vector<PointCloud>& dataset, const TrainConfig& cfg,
                             const EpochCallback& on_epoch = {});

/// "epoch,mean_loss,lr" rows.
std::string history_csv(const std::vector<EpochRecord>& history);

/// Loss of predicting the mean target of an epoch's samples for every masked patch.
double mean_predictor_baseline(const std::vector<PointCloud>& dataset, const TrainConfig& cfg,
                               const ModelConfig& mcfg, std::size_t epoch);
/// Mean per-sample loss of a fixed model over an epoch's samples.
double evaluate_epoch(const ModelState& state, const std::vector<PointCloud>& dataset, const TrainConfig& cfg,
                      std::size_t epoch);

struct GradCheckEntry {
    std::string name;
    std::size_t checked = 0;
    /// max |g - fd| / max(max |g|, 1e-8) over the checked coordinates.
    double worst_rel = 0.0;
    double worst_abs = 0.0;
    /// Per-coordinate |g - fd| / max(|g|, 1e-8); dominated by round-off where g ~ 0.
    double worst_componentwise = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst_rel = 0.0;
    double worst_abs = 0.0;
    double worst_componentwise = 0.0;
    std::string worst_tensor;

    std::string to_string() const;
};

/// Central finite differences on a random subsample of `per_tensor` coordinates
/// of every tensor (all of them when smaller).
GradCheckReport grad_check(const ModelState& state, const PretrainSample& sample, std::uint64_t seed,
                           std::size_t per_tensor = 20, double step = 1e-6);

/// Grad check on the tiny preset over a rotated torus sample, at fan-in scaled
/// random weights (vectors N(0, 0.3^2)). At the 0.02 init the token variance sits
/// far below the normalization epsilon and step-1e-6 differences are
/// truncation-dominated.
GradCheckReport grad_check(const ModelConfig& tiny, std::uint64_t seed);

}  // namespace masklrf
