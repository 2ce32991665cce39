#pragma once

#include <cstdint>
#include <random>

namespace dmsva::num {

/// Deterministic random stream. mt19937_64 is fully specified by the standard,
/// and the distributions below are implemented here rather than taken from
/// <random>, whose distribution algorithms vary between standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). n must be positive.
    std::size_t below(std::size_t n);
    /// Standard normal via Box-Muller.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Independent child stream keyed by (seed, index).
    static Rng substream(std::uint64_t seed, std::uint64_t index);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

} // namespace dmsva::num
