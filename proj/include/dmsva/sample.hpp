#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

#include "dmsva/num/tensor.hpp"

namespace dmsva {

using num::Vector;

/// Which supervision terms a training pair feeds.
enum class PairMode {
    Standard,
    SameCharacterDiffEnv,
    DiffCharacterSameEnv,
};

std::string_view to_string(PairMode mode);
/// Inverse of to_string; throws FormatError for an unknown tag.
PairMode parse_pair_mode(std::string_view tag);

/// One visual/auditory embedding pair with its latent factor ids.
struct Observation {
    Vector v;
    Vector a;
    std::size_t character_id = 0;
    std::size_t environment_id = 0;

    bool operator==(const Observation&) const = default;
};

/// A training datum. Contrastive modes carry a partner observation that shares
/// exactly one latent factor with the primary one.
struct SamplePair {
    Observation primary;
    PairMode mode = PairMode::Standard;
    std::optional<Observation> partner;

    bool operator==(const SamplePair&) const = default;
};

/// True when the mode/partner/id constraints hold.
bool satisfies_mode_invariants(const SamplePair& pair);

} // namespace dmsva
