#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "dmsva/model.hpp"
#include "dmsva/objective.hpp"
#include "dmsva/sample.hpp"

namespace dmsva::train {

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t batch_size = 32;
    std::size_t steps = 2000;
    LossWeights loss_weights;
    double ema_decay = 0.999;
    bool detach_teacher = true;
    double temperature = kDefaultTemperature;
    std::uint64_t seed = 1;

    /// Throws ConfigError naming the offending field.
    void validate() const;
    ObjectiveOptions objective() const { return {loss_weights, temperature, detach_teacher}; }
    bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// First/second moment estimates for a flat parameter vector.
struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;

    bool operator==(const OptimizerState&) const = default;
};

/// Adam with decoupled weight decay:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
/// The decay term uses the parameter value before this step's update.
void adamw_update(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                  const TrainConfig& cfg);

/// shadow <- d shadow + (1-d) param, elementwise.
void ema_update(std::span<double> shadow, std::span<const double> params, double decay);

/// Concatenation of pk, ek, tv, sv in row-major order.
std::vector<double> flatten(const DmsvaModel& model);
void unflatten(std::span<const double> flat, DmsvaModel& model);

struct TrainerState {
    OptimizerState optimizer;
    DmsvaModel ema;
    std::uint64_t step = 0;

    bool operator==(const TrainerState&) const = default;
};

TrainerState initial_state(const DmsvaModel& model);

/// Initial model weights for a config; depends only on (seed, N, D).
DmsvaModel init_model(const TrainConfig& cfg, std::size_t slot_count, std::size_t dim);

/// Batch drawn for a given step: uniform with replacement, keyed by
/// (seed, step) so a resumed run draws the same batches.
std::vector<std::size_t> batch_indices(const TrainConfig& cfg, std::uint64_t step,
                                       std::size_t dataset_size);

/// One optimizer step on `batch`. Throws NonFiniteLoss naming the first
/// non-finite component; the model is left untouched in that case.
LossBreakdown train_step(DmsvaModel& model, std::span<const SamplePair> batch,
                         const TrainConfig& cfg, TrainerState& state);

struct FitResult {
    DmsvaModel model;
    TrainerState state;
    std::vector<LossBreakdown> history;
};

using StepCallback = std::function<void(const DmsvaModel&, const TrainerState&,
                                        const LossBreakdown&)>;

/// Runs cfg.steps - state.step further steps. Pass a state restored from a
/// checkpoint to resume.
FitResult fit(DmsvaModel model, std::span<const SamplePair> dataset, const TrainConfig& cfg,
              TrainerState state, const StepCallback& on_step = {});
FitResult fit(DmsvaModel model, std::span<const SamplePair> dataset, const TrainConfig& cfg);

} // namespace dmsva::train
