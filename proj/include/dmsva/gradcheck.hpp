#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmsva/model.hpp"
#include "dmsva/objective.hpp"

namespace dmsva::check {

/// Central finite-difference comparison of the tape gradients of every loss
/// component against the forward objective, over random models and batches.
struct GradcheckOptions {
    std::size_t trials = 100;
    std::size_t max_slots = 8;
    std::size_t max_dim = 16;
    std::vector<double> temperatures{1.0, kDefaultTemperature};
    LossWeights weights;
    bool detach_teacher = true;
    double step = 1e-5;
    /// An entry passes when |analytic - numeric| is within rel_tol of
    /// max(|analytic|, |numeric|) or within abs_tol. The absolute bound covers
    /// entries below the finite-difference roundoff floor (about eps |L| / step).
    double rel_tol = 1e-4;
    double abs_tol = 1e-7;
    std::uint64_t seed = 1;
    /// Test fixture: negate the analytic gradient of one component.
    std::optional<LossComponent> sign_flip;
};

struct GradcheckFailure {
    LossComponent component;
    std::uint64_t trial_seed;
    double temperature;
    BankRole bank;
    std::size_t index;
    double analytic;
    double numeric;
};

struct ComponentSummary {
    LossComponent component;
    std::size_t checked = 0;
    std::size_t failed = 0;
    /// Over entries of magnitude >= abs_tol / rel_tol.
    double worst_rel_error = 0.0;
    double worst_abs_error = 0.0;
};

struct GradcheckReport {
    std::array<ComponentSummary, 6> components;
    /// At most a handful per component, in discovery order.
    std::vector<GradcheckFailure> failures;

    bool ok() const;
    std::string summary() const;
};

inline constexpr std::array<LossComponent, 6> kAllComponents{
    LossComponent::Rec,     LossComponent::Align, LossComponent::Imi,
    LossComponent::TimbreC, LossComponent::EnvC,  LossComponent::Total};

/// Random model plus one batch holding a pair of each mode, so every
/// component is active. Sizes are drawn from [1, max_slots] x [2, max_dim].
struct GradcheckCase {
    DmsvaModel model;
    std::vector<SamplePair> batch;
};

GradcheckCase random_case(std::uint64_t seed, std::size_t max_slots, std::size_t max_dim);

GradcheckReport run_gradcheck(const GradcheckOptions& options);

} // namespace dmsva::check
