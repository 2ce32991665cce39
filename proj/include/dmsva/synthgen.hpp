#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <json.hpp>

#include "dmsva/num/rng.hpp"
#include "dmsva/num/tensor.hpp"
#include "dmsva/sample.hpp"

namespace dmsva::synth {

using num::Rng;
using num::Tensor2;
using num::Vector;

/// Prototypes whose pairwise |cos| exceeds this are regenerated.
inline constexpr double kMaxPrototypeCos = 0.95;
inline constexpr int kMaxWorldAttempts = 1000;

struct WorldSpec {
    std::size_t n_characters = 8;
    std::size_t n_environments = 8;
    std::size_t dim = 32;
    /// Per-component standard deviation of the additive Gaussian noise.
    double visual_noise_sigma = 0.01;
    double audio_noise_sigma = 0.002;
    /// Environment-to-timbre mixing ratio range in dB.
    double snr_db_lo = 4.0;
    double snr_db_hi = 20.0;
    /// false applies an elementwise tanh after the visual mixing map.
    bool linear_visual = true;
    std::uint64_t seed = 1;

    /// Throws ConfigError naming the offending field.
    void validate() const;
    bool operator==(const WorldSpec&) const = default;
};

void to_json(nlohmann::json& j, const WorldSpec& spec);
void from_json(const nlohmann::json& j, WorldSpec& spec);

/// Ground-truth generative factors. Auditory prototypes are unit norm; the
/// visual map takes the concatenated visual prototypes (2D) to D.
struct LatentWorld {
    WorldSpec spec;
    std::vector<Vector> timbre;              // t_c, per character
    std::vector<Vector> sound;               // s_e, per environment
    std::vector<Vector> visual_character;    // p_c
    std::vector<Vector> visual_environment;  // q_e
    Tensor2 visual_map;                      // D x 2D

    bool operator==(const LatentWorld&) const = default;
};

/// Deterministic in spec (including its seed). Throws PrototypeCollapse when
/// no non-collinear prototype set is found in kMaxWorldAttempts draws.
LatentWorld build_world(const WorldSpec& spec);

/// Amplitude gain applied to the environment term: 10^(-snr/20).
double snr_gain(double snr_db);

/// Noise-free auditory mixture t_c + gain(snr) * s_e.
Vector mix_audio(const LatentWorld& world, std::size_t character, std::size_t environment,
                 double snr_db);
/// Noise-free visual embedding W_v (p_c ++ q_e), with tanh when nonlinear.
Vector render_visual(const LatentWorld& world, std::size_t character, std::size_t environment);

/// Draws an SNR and noise for the given factors.
Observation observe(const LatentWorld& world, std::size_t character, std::size_t environment,
                    Rng& rng);

SamplePair sample_pair(const LatentWorld& world, PairMode mode, Rng& rng);

struct ModeMix {
    double standard = 1.0;
    double same_character = 0.0;
    double diff_character = 0.0;

    std::array<double, 3> as_array() const { return {standard, same_character, diff_character}; }
    bool operator==(const ModeMix&) const = default;
};

/// Per-mode counts by largest-remainder rounding. Throws InvalidProportions
/// unless the proportions are non-negative and sum to 1 within 1e-9.
std::array<std::size_t, 3> mode_counts(std::size_t n_samples, const ModeMix& mix);

struct Manifest {
    WorldSpec spec;
    std::uint64_t seed = 0;
    std::size_t n_samples = 0;
    ModeMix mix;
    std::array<std::size_t, 3> counts{};
};

void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);

struct Dataset {
    std::vector<SamplePair> pairs;
    Manifest manifest;
};

/// Samples are generated from per-index substreams of a base drawn from rng,
/// so output is in index order and independent of scheduling.
Dataset make_dataset(const LatentWorld& world, std::size_t n_samples, const ModeMix& mix,
                     Rng& rng);

/// One Standard pair per (character, environment) combination, with fresh
/// noise. Used as a held-out split.
Dataset make_eval_grid(const LatentWorld& world, Rng& rng);

/// Line format, tab separated:
///   mode  char  env  v(space separated)  a(space separated)  [pchar penv pv pa]
/// Values are printed with 17 significant digits.
void write_pairs(std::ostream& out, const std::vector<SamplePair>& pairs);
std::vector<SamplePair> read_pairs(std::istream& in);

std::filesystem::path manifest_path(const std::filesystem::path& dataset);
/// Writes the dataset file and its sidecar manifest.
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
/// Reads a dataset and its sidecar manifest. Throws FormatError on bad input.
Dataset load_dataset(const std::filesystem::path& path);

} // namespace dmsva::synth
