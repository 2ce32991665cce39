#include "dmsva/model.hpp"

#include <cmath>
#include <string>

#include "dmsva/errors.hpp"
#include "dmsva/num/ops.hpp"

namespace dmsva {

std::string_view to_string(BankRole role) {
    switch (role) {
    case BankRole::CharacterKey: return "character_key";
    case BankRole::EnvironmentKey: return "environment_key";
    case BankRole::TimbreValue: return "timbre_value";
    case BankRole::SoundValue: return "sound_value";
    }
    return "unknown";
}

DmsvaModel::DmsvaModel(std::size_t slot_count, std::size_t dim)
    : pk{BankRole::CharacterKey, Tensor2(slot_count, dim)},
      ek{BankRole::EnvironmentKey, Tensor2(slot_count, dim)},
      tv{BankRole::TimbreValue, Tensor2(slot_count, dim)},
      sv{BankRole::SoundValue, Tensor2(slot_count, dim)} {
    if (slot_count == 0 || dim == 0) {
        throw DimensionMismatch("memory banks need N >= 1 and D >= 1");
    }
}

DmsvaModel DmsvaModel::init(std::size_t slot_count, std::size_t dim, num::Rng& rng) {
    DmsvaModel model(slot_count, dim);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
    for (MemoryBank* bank : {&model.pk, &model.ek, &model.tv, &model.sv}) {
        for (double& x : bank->slots.values()) {
            x = rng.normal(0.0, stddev);
        }
    }
    model.enforce_norm_floor();
    return model;
}

MemoryBank& DmsvaModel::bank(BankRole role) {
    switch (role) {
    case BankRole::CharacterKey: return pk;
    case BankRole::EnvironmentKey: return ek;
    case BankRole::TimbreValue: return tv;
    case BankRole::SoundValue: return sv;
    }
    throw std::invalid_argument("unknown bank role");
}

const MemoryBank& DmsvaModel::bank(BankRole role) const {
    return const_cast<DmsvaModel*>(this)->bank(role);
}

void DmsvaModel::enforce_norm_floor() {
    for (MemoryBank* bank : {&pk, &ek, &tv, &sv}) {
        for (std::size_t i = 0; i < bank->slots.rows(); ++i) {
            auto row = bank->slots.row(i);
            const double n = num::norm2(row);
            if (n >= kSlotNormFloor) {
                continue;
            }
            if (n == 0.0) {
                row[0] = kSlotNormFloor;
                continue;
            }
            for (double& x : row) {
                x *= kSlotNormFloor / n;
            }
        }
    }
}

void DmsvaModel::validate() const {
    const std::size_t n = pk.slots.rows();
    const std::size_t d = pk.slots.cols();
    if (n == 0 || d == 0) {
        throw DimensionMismatch("memory banks need N >= 1 and D >= 1");
    }
    for (const MemoryBank* bank : {&ek, &tv, &sv}) {
        if (bank->slots.rows() != n || bank->slots.cols() != d) {
            throw DimensionMismatch(std::string(to_string(bank->role)) + " bank is " +
                                    std::to_string(bank->slots.rows()) + "x" +
                                    std::to_string(bank->slots.cols()) + ", expected " +
                                    std::to_string(n) + "x" + std::to_string(d));
        }
    }
}

void LossWeights::validate() const {
    for (double l : {lambda1, lambda2, lambda3, lambda4}) {
        if (!std::isfinite(l) || l < 0.0) {
            throw ConfigError("loss weights must be finite and non-negative");
        }
    }
}

AttentionWeights attend(const Vector& query, const MemoryBank& bank, double temperature) {
    if (query.dim() != bank.dim()) {
        throw DimensionMismatch("query dim " + std::to_string(query.dim()) + " vs bank dim " +
                                std::to_string(bank.dim()));
    }
    Vector logits(bank.slot_count());
    for (std::size_t i = 0; i < bank.slot_count(); ++i) {
        logits[i] = num::cosine_sim(query.values(), bank.slots.row(i)) / temperature;
    }
    return {num::softmax(logits)};
}

Vector read_out(const MemoryBank& bank, const AttentionWeights& w) {
    if (w.weights.dim() != bank.slot_count()) {
        throw DimensionMismatch("weights dim " + std::to_string(w.weights.dim()) +
                                " vs slot count " + std::to_string(bank.slot_count()));
    }
    Vector out(bank.dim());
    for (std::size_t i = 0; i < bank.slot_count(); ++i) {
        const auto row = bank.slots.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            out[j] += w.weights[i] * row[j];
        }
    }
    return out;
}

namespace {

PathwayOutput combine(AttentionWeights timbre_w, const MemoryBank& timbre_bank,
                      AttentionWeights sound_w, const MemoryBank& sound_bank) {
    PathwayOutput out;
    out.timbre_component = read_out(timbre_bank, timbre_w);
    out.sound_component = read_out(sound_bank, sound_w);
    out.combined = Vector(out.timbre_component.dim());
    for (std::size_t j = 0; j < out.combined.dim(); ++j) {
        out.combined[j] = out.timbre_component[j] + out.sound_component[j];
    }
    out.timbre_weights = std::move(timbre_w);
    out.sound_weights = std::move(sound_w);
    return out;
}

} // namespace

PathwayOutput reconstruct_auditory(const DmsvaModel& model, const Vector& a, double temperature) {
    return combine(attend(a, model.tv, temperature), model.tv,
                   attend(a, model.sv, temperature), model.sv);
}

PathwayOutput recall_from_visual(const DmsvaModel& model, const Vector& v, double temperature) {
    return combine(attend(v, model.pk, temperature), model.tv,
                   attend(v, model.ek, temperature), model.sv);
}

double loss_rec(const Vector& a, const PathwayOutput& auditory) {
    return num::mse(a, auditory.combined);
}

double loss_align(const PathwayOutput& auditory, const PathwayOutput& visual) {
    return num::kl_div(auditory.timbre_weights.weights, visual.timbre_weights.weights) +
           num::kl_div(auditory.sound_weights.weights, visual.sound_weights.weights);
}

double loss_imi(const PathwayOutput& auditory, const PathwayOutput& visual) {
    return num::mse(auditory.timbre_component, visual.timbre_component) +
           num::mse(auditory.sound_component, visual.sound_component);
}

double loss_timbre_consistency(const PathwayOutput& visual_a, const PathwayOutput& visual_b) {
    return num::mse(visual_a.timbre_component, visual_b.timbre_component);
}

double loss_env_consistency(const PathwayOutput& visual_a, const PathwayOutput& visual_b) {
    return num::mse(visual_a.sound_component, visual_b.sound_component);
}

LossBreakdown total_loss(const LossBreakdown& c, const LossWeights& w) {
    LossBreakdown out = c;
    out.total = c.rec + w.lambda1 * c.align + w.lambda2 * c.imi + w.lambda3 * c.timbre_c +
                w.lambda4 * c.env_c;
    return out;
}

} // namespace dmsva
