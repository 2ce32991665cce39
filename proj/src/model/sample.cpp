#include "dmsva/sample.hpp"

#include <string>

#include "dmsva/errors.hpp"

namespace dmsva {

std::string_view to_string(PairMode mode) {
    switch (mode) {
    case PairMode::Standard: return "standard";
    case PairMode::SameCharacterDiffEnv: return "same_char_diff_env";
    case PairMode::DiffCharacterSameEnv: return "diff_char_same_env";
    }
    return "unknown";
}

PairMode parse_pair_mode(std::string_view tag) {
    for (PairMode m : {PairMode::Standard, PairMode::SameCharacterDiffEnv,
                       PairMode::DiffCharacterSameEnv}) {
        if (tag == to_string(m)) {
            return m;
        }
    }
    throw FormatError("unknown pair mode '" + std::string(tag) + "'");
}

bool satisfies_mode_invariants(const SamplePair& pair) {
    const Observation& p = pair.primary;
    switch (pair.mode) {
    case PairMode::Standard:
        return !pair.partner.has_value();
    case PairMode::SameCharacterDiffEnv:
        return pair.partner && pair.partner->character_id == p.character_id &&
               pair.partner->environment_id != p.environment_id;
    case PairMode::DiffCharacterSameEnv:
        return pair.partner && pair.partner->character_id != p.character_id &&
               pair.partner->environment_id == p.environment_id;
    }
    return false;
}

} // namespace dmsva
