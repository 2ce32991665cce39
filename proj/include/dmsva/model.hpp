#pragma once

#include <cstddef>
#include <string_view>

#include "dmsva/num/rng.hpp"
#include "dmsva/num/tensor.hpp"

namespace dmsva {

using num::Tensor2;
using num::Vector;

/// Smallest slot norm allowed after an optimizer step.
inline constexpr double kSlotNormFloor = 1e-6;
/// Default softmax temperature applied to cosine attention logits.
inline constexpr double kDefaultTemperature = 0.07;

enum class BankRole { CharacterKey, EnvironmentKey, TimbreValue, SoundValue };

std::string_view to_string(BankRole role);

/// N x D learnable slot matrix.
struct MemoryBank {
    BankRole role = BankRole::CharacterKey;
    Tensor2 slots;

    std::size_t slot_count() const noexcept { return slots.rows(); }
    std::size_t dim() const noexcept { return slots.cols(); }
    bool operator==(const MemoryBank&) const = default;
};

/// The four memory banks. Key banks (pk, ek) are queried by visual
/// embeddings; value banks (tv, sv) hold auditory primitives and are both
/// queried by the auditory embedding and read out by either pathway.
class DmsvaModel {
public:
    DmsvaModel() = default;
    /// Banks of shape slot_count x dim, all zero. Use init() for training.
    DmsvaModel(std::size_t slot_count, std::size_t dim);

    /// Slots drawn i.i.d. Gaussian with standard deviation 1/sqrt(dim).
    static DmsvaModel init(std::size_t slot_count, std::size_t dim, num::Rng& rng);

    std::size_t slot_count() const noexcept { return pk.slots.rows(); }
    std::size_t dim() const noexcept { return pk.slots.cols(); }

    MemoryBank& bank(BankRole role);
    const MemoryBank& bank(BankRole role) const;

    /// Rescales any slot whose norm fell below kSlotNormFloor back up to it.
    void enforce_norm_floor();
    /// Throws DimensionMismatch unless all four banks share N x D.
    void validate() const;

    bool operator==(const DmsvaModel&) const = default;

    MemoryBank pk{BankRole::CharacterKey, {}};
    MemoryBank ek{BankRole::EnvironmentKey, {}};
    MemoryBank tv{BankRole::TimbreValue, {}};
    MemoryBank sv{BankRole::SoundValue, {}};
};

/// Probability vector over the N slots of one bank.
struct AttentionWeights {
    Vector weights;
};

/// Output of either pathway: the timbre and sound readouts, their sum, and the
/// attention weights that produced them.
struct PathwayOutput {
    Vector timbre_component;
    Vector sound_component;
    Vector combined;
    AttentionWeights timbre_weights;
    AttentionWeights sound_weights;
};

struct LossWeights {
    double lambda1 = 10.0;  // align
    double lambda2 = 2.0;   // imi
    double lambda3 = 0.5;   // timbre consistency
    double lambda4 = 0.5;   // environment consistency

    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

/// Unweighted loss components plus the weighted total.
struct LossBreakdown {
    double rec = 0.0;
    double align = 0.0;
    double imi = 0.0;
    double timbre_c = 0.0;
    double env_c = 0.0;
    double total = 0.0;
};

/// softmax(cos(query, slot_i) / temperature) over the bank's slots.
AttentionWeights attend(const Vector& query, const MemoryBank& bank,
                        double temperature = kDefaultTemperature);

/// Bank readout bank^T w.
Vector read_out(const MemoryBank& bank, const AttentionWeights& w);

/// Auditory pathway: the mixed auditory embedding queries the value banks.
PathwayOutput reconstruct_auditory(const DmsvaModel& model, const Vector& a,
                                   double temperature = kDefaultTemperature);

/// Visual pathway: weights come from the key banks, readouts from the value
/// banks (pk -> tv, ek -> sv).
PathwayOutput recall_from_visual(const DmsvaModel& model, const Vector& v,
                                 double temperature = kDefaultTemperature);

double loss_rec(const Vector& a, const PathwayOutput& auditory);
double loss_align(const PathwayOutput& auditory, const PathwayOutput& visual);
double loss_imi(const PathwayOutput& auditory, const PathwayOutput& visual);
double loss_timbre_consistency(const PathwayOutput& visual_a, const PathwayOutput& visual_b);
double loss_env_consistency(const PathwayOutput& visual_a, const PathwayOutput& visual_b);

/// Applies the weights to already computed components. The components are
/// copied through unchanged.
LossBreakdown total_loss(const LossBreakdown& components, const LossWeights& weights);

} // namespace dmsva
