#include "dmsva/trainer.hpp"

#include <cmath>
#include <string>

#include "dmsva/errors.hpp"
#include "dmsva/num/rng.hpp"

namespace dmsva::train {

namespace {

constexpr std::uint64_t kInitStream = 0x1a17;
constexpr std::uint64_t kBatchStream = 0xba7c;

void require(bool ok, const char* message) {
    if (!ok) throw ConfigError(message);
}

} // namespace

void TrainConfig::validate() const {
    require(std::isfinite(lr) && lr >= 0.0, "train.lr: must be finite and >= 0");
    require(std::isfinite(weight_decay) && weight_decay >= 0.0,
            "train.weight_decay: must be finite and >= 0");
    require(beta1 >= 0.0 && beta1 < 1.0, "train.beta1: must be in [0, 1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "train.beta2: must be in [0, 1)");
    require(std::isfinite(eps) && eps > 0.0, "train.eps: must be > 0");
    require(batch_size >= 1, "train.batch_size: must be >= 1");
    require(ema_decay >= 0.0 && ema_decay < 1.0, "train.ema_decay: must be in [0, 1)");
    require(std::isfinite(temperature) && temperature > 0.0, "train.temperature: must be > 0");
    loss_weights.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"lr", c.lr},
                       {"weight_decay", c.weight_decay},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"eps", c.eps},
                       {"batch_size", c.batch_size},
                       {"steps", c.steps},
                       {"loss_weights",
                        {{"lambda1", c.loss_weights.lambda1},
                         {"lambda2", c.loss_weights.lambda2},
                         {"lambda3", c.loss_weights.lambda3},
                         {"lambda4", c.loss_weights.lambda4}}},
                       {"ema_decay", c.ema_decay},
                       {"detach_teacher", c.detach_teacher},
                       {"temperature", c.temperature},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    j.at("lr").get_to(c.lr);
    j.at("weight_decay").get_to(c.weight_decay);
    j.at("beta1").get_to(c.beta1);
    j.at("beta2").get_to(c.beta2);
    j.at("eps").get_to(c.eps);
    j.at("batch_size").get_to(c.batch_size);
    j.at("steps").get_to(c.steps);
    const auto& lw = j.at("loss_weights");
    lw.at("lambda1").get_to(c.loss_weights.lambda1);
    lw.at("lambda2").get_to(c.loss_weights.lambda2);
    lw.at("lambda3").get_to(c.loss_weights.lambda3);
    lw.at("lambda4").get_to(c.loss_weights.lambda4);
    j.at("ema_decay").get_to(c.ema_decay);
    j.at("detach_teacher").get_to(c.detach_teacher);
    j.at("temperature").get_to(c.temperature);
    j.at("seed").get_to(c.seed);
}

void adamw_update(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                  const TrainConfig& cfg) {
    if (params.size() != grads.size()) {
        throw DimensionMismatch("adamw: " + std::to_string(params.size()) + " params, " +
                                std::to_string(grads.size()) + " grads");
    }
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * params[i]);
    }
}

void ema_update(std::span<double> shadow, std::span<const double> params, double decay) {
    if (shadow.size() != params.size()) {
        throw DimensionMismatch("ema: shadow and parameter sizes differ");
    }
    for (std::size_t i = 0; i < shadow.size(); ++i) {
        shadow[i] = decay * shadow[i] + (1.0 - decay) * params[i];
    }
}

std::vector<double> flatten(const DmsvaModel& model) {
    std::vector<double> out;
    out.reserve(4 * model.slot_count() * model.dim());
    for (const MemoryBank* b : {&model.pk, &model.ek, &model.tv, &model.sv}) {
        out.insert(out.end(), b->slots.values().begin(), b->slots.values().end());
    }
    return out;
}

void unflatten(std::span<const double> flat, DmsvaModel& model) {
    const std::size_t per_bank = model.slot_count() * model.dim();
    if (flat.size() != 4 * per_bank) {
        throw DimensionMismatch("unflatten: " + std::to_string(flat.size()) + " values for " +
                                std::to_string(4 * per_bank) + " parameters");
    }
    std::size_t offset = 0;
    for (MemoryBank* b : {&model.pk, &model.ek, &model.tv, &model.sv}) {
        auto dst = b->slots.values();
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                  flat.begin() + static_cast<std::ptrdiff_t>(offset + per_bank), dst.begin());
        offset += per_bank;
    }
}

TrainerState initial_state(const DmsvaModel& model) {
    TrainerState s;
    s.ema = model;
    return s;
}

DmsvaModel init_model(const TrainConfig& cfg, std::size_t slot_count, std::size_t dim) {
    num::Rng rng = num::Rng::substream(cfg.seed, kInitStream);
    return DmsvaModel::init(slot_count, dim, rng);
}

std::vector<std::size_t> batch_indices(const TrainConfig& cfg, std::uint64_t step,
                                       std::size_t dataset_size) {
    if (dataset_size == 0) {
        throw std::invalid_argument("cannot draw a batch from an empty dataset");
    }
    num::Rng rng = num::Rng::substream(cfg.seed ^ kBatchStream, step);
    std::vector<std::size_t> idx(cfg.batch_size);
    for (auto& i : idx) i = rng.below(dataset_size);
    return idx;
}

LossBreakdown train_step(DmsvaModel& model, std::span<const SamplePair> batch,
                         const TrainConfig& cfg, TrainerState& state) {
    if (batch.empty()) {
        throw std::invalid_argument("train_step on an empty batch");
    }
    const ModelGradients g = objective_gradients(model, batch, cfg.objective());
    const LossBreakdown& l = g.losses;
    const std::pair<const char*, double> parts[] = {{"L_rec", l.rec},     {"L_align", l.align},
                                                    {"L_imi", l.imi},     {"L_timbre_c", l.timbre_c},
                                                    {"L_env_c", l.env_c}, {"L_total", l.total}};
    for (const auto& [name, value] : parts) {
        if (!std::isfinite(value)) {
            throw NonFiniteLoss(std::string(name) + " is non-finite at step " +
                                std::to_string(state.step));
        }
    }
    const std::vector<double> grads = flatten(g.grads);
    if (!num::all_finite(grads)) {
        throw NonFiniteLoss("gradient is non-finite at step " + std::to_string(state.step));
    }

    std::vector<double> params = flatten(model);
    adamw_update(params, grads, state.optimizer, cfg);
    unflatten(params, model);
    model.enforce_norm_floor();

    std::vector<double> shadow = flatten(state.ema);
    ema_update(shadow, flatten(model), cfg.ema_decay);
    unflatten(shadow, state.ema);
    ++state.step;
    return l;
}

FitResult fit(DmsvaModel model, std::span<const SamplePair> dataset, const TrainConfig& cfg,
              TrainerState state, const StepCallback& on_step) {
    cfg.validate();
    if (dataset.empty()) {
        throw std::invalid_argument("fit on an empty dataset");
    }
    FitResult out{std::move(model), std::move(state), {}};
    std::vector<SamplePair> batch;
    while (out.state.step < cfg.steps) {
        batch.clear();
        for (std::size_t i : batch_indices(cfg, out.state.step, dataset.size())) {
            batch.push_back(dataset[i]);
        }
        out.history.push_back(train_step(out.model, batch, cfg, out.state));
        if (on_step) on_step(out.model, out.state, out.history.back());
    }
    return out;
}

FitResult fit(DmsvaModel model, std::span<const SamplePair> dataset, const TrainConfig& cfg) {
    TrainerState state = initial_state(model);
    return fit(std::move(model), dataset, cfg, std::move(state));
}

} // namespace dmsva::train
