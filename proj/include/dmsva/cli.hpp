#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmsva/evaluator.hpp"
#include "dmsva/synthgen.hpp"
#include "dmsva/trainer.hpp"

namespace dmsva::cli {

enum ExitCode : int {
    kOk = 0,
    kVerificationFailure = 1,
    kInputError = 2,
    kNumericFailure = 3,
};

struct DataOptions {
    std::size_t n_samples = 4096;
    synth::ModeMix mix{0.5, 0.25, 0.25};
};

struct EvalConfig {
    std::size_t n_probe = 200;
    std::uint64_t probe_seed = 7;
    /// Evaluate the EMA shadow instead of the raw weights.
    bool use_ema = false;
};

struct AblateConfig {
    std::vector<std::size_t> slot_counts{32, 64, 128, 256};
    std::vector<eval::FusionKind> kinds{eval::FusionKind::Dmsva, eval::FusionKind::ConcatFusion,
                                        eval::FusionKind::AttnFusion};
};

struct GradcheckConfig {
    std::size_t trials = 100;
    std::size_t max_slots = 8;
    std::size_t max_dim = 16;
    std::vector<double> temperatures{1.0, kDefaultTemperature};
};

/// Fully resolved run configuration: defaults, then the config file, then
/// command-line overrides.
struct RunConfig {
    synth::WorldSpec world;
    DataOptions data;
    std::size_t slot_count = 32;
    train::TrainConfig train;
    std::size_t checkpoint_every = 500;
    EvalConfig eval;
    AblateConfig ablate;
    GradcheckConfig gradcheck;
    std::string out = "runs/out";

    eval::EvalOptions eval_options() const {
        return {eval.n_probe, eval.probe_seed, train.temperature};
    }
};

nlohmann::json default_config_json();
nlohmann::json to_json(const RunConfig& cfg);

/// Merges `file` (may be null) and dotted-path overrides onto the defaults,
/// type-checks every field against the defaults and validates the result.
/// Throws ConfigError naming the offending field.
RunConfig resolve_config(const nlohmann::json& file,
                         const std::vector<std::pair<std::string, std::string>>& overrides);

/// Parses an override value: JSON when it parses, otherwise a plain string.
nlohmann::json parse_override_value(const std::string& text);

/// Entry point shared by the executable and tests. args excludes argv[0].
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

} // namespace dmsva::cli
