#include "dmsva/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dmsva/num/rng.hpp"

namespace dmsva::check {

namespace {

constexpr std::size_t kMaxFailuresPerComponent = 5;

double component_value(const LossBreakdown& l, LossComponent c) {
    switch (c) {
    case LossComponent::Rec: return l.rec;
    case LossComponent::Align: return l.align;
    case LossComponent::Imi: return l.imi;
    case LossComponent::TimbreC: return l.timbre_c;
    case LossComponent::EnvC: return l.env_c;
    case LossComponent::Total: return l.total;
    }
    return 0.0;
}

Vector gaussian(std::size_t dim, num::Rng& rng) {
    Vector v(dim);
    for (std::size_t i = 0; i < dim; ++i) v[i] = rng.normal();
    return v;
}

Observation random_observation(std::size_t dim, std::size_t c, std::size_t e, num::Rng& rng) {
    return {gaussian(dim, rng), gaussian(dim, rng), c, e};
}

} // namespace

GradcheckCase random_case(std::uint64_t seed, std::size_t max_slots, std::size_t max_dim) {
    num::Rng rng(seed);
    const std::size_t n = 1 + rng.below(max_slots);
    const std::size_t d = 2 + rng.below(max_dim - 1);
    GradcheckCase out{DmsvaModel(n, d), {}};
    for (MemoryBank* b : {&out.model.pk, &out.model.ek, &out.model.tv, &out.model.sv}) {
        for (double& x : b->slots.values()) x = rng.normal();
    }
    out.batch.push_back({random_observation(d, 0, 0, rng), PairMode::Standard, std::nullopt});
    out.batch.push_back({random_observation(d, 0, 0, rng), PairMode::SameCharacterDiffEnv,
                         random_observation(d, 0, 1, rng)});
    out.batch.push_back({random_observation(d, 0, 0, rng), PairMode::DiffCharacterSameEnv,
                         random_observation(d, 1, 0, rng)});
    return out;
}

bool GradcheckReport::ok() const {
    for (const auto& c : components) {
        if (c.failed > 0) return false;
    }
    return true;
}

std::string GradcheckReport::summary() const {
    std::ostringstream out;
    for (const auto& c : components) {
        out << (c.failed == 0 ? "PASS " : "FAIL ") << to_string(c.component)
            << " checked=" << c.checked << " failed=" << c.failed
            << " worst_rel_error=" << c.worst_rel_error
            << " worst_abs_error=" << c.worst_abs_error << '\n';
    }
    for (const auto& f : failures) {
        out << "  " << to_string(f.component) << " seed=" << f.trial_seed
            << " tau=" << f.temperature << " bank=" << to_string(f.bank)
            << " index=" << f.index << " analytic=" << f.analytic << " numeric=" << f.numeric
            << '\n';
    }
    return out.str();
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
    GradcheckReport report;
    for (std::size_t k = 0; k < kAllComponents.size(); ++k) {
        report.components[k].component = kAllComponents[k];
    }

    for (std::size_t trial = 0; trial < options.trials; ++trial) {
        const std::uint64_t trial_seed = num::splitmix64(options.seed + trial);
        const GradcheckCase gc = random_case(trial_seed, options.max_slots, options.max_dim);
        for (double tau : options.temperatures) {
            const ObjectiveOptions obj{options.weights, tau, options.detach_teacher};

            std::array<DmsvaModel, 6> analytic;
            for (std::size_t k = 0; k < kAllComponents.size(); ++k) {
                analytic[k] = objective_gradients(gc.model, gc.batch, obj, kAllComponents[k]).grads;
                if (options.sign_flip == kAllComponents[k]) {
                    for (MemoryBank* b : {&analytic[k].pk, &analytic[k].ek, &analytic[k].tv,
                                          &analytic[k].sv}) {
                        for (double& x : b->slots.values()) x = -x;
                    }
                }
            }

            DmsvaModel probe = gc.model;
            for (BankRole role : {BankRole::CharacterKey, BankRole::EnvironmentKey,
                                  BankRole::TimbreValue, BankRole::SoundValue}) {
                auto values = probe.bank(role).slots.values();
                for (std::size_t i = 0; i < values.size(); ++i) {
                    const double saved = values[i];
                    values[i] = saved + options.step;
                    const LossBreakdown up = evaluate_objective(probe, gc.batch, obj, &gc.model);
                    values[i] = saved - options.step;
                    const LossBreakdown down = evaluate_objective(probe, gc.batch, obj, &gc.model);
                    values[i] = saved;

                    for (std::size_t k = 0; k < kAllComponents.size(); ++k) {
                        const LossComponent c = kAllComponents[k];
                        const double numeric =
                            (component_value(up, c) - component_value(down, c)) / (2 * options.step);
                        const double exact = analytic[k].bank(role).slots.values()[i];
                        const double err = std::abs(exact - numeric);
                        const double scale = std::max(std::abs(exact), std::abs(numeric));
                        const bool pass = err <= options.rel_tol * scale || err <= options.abs_tol;
                        ComponentSummary& s = report.components[k];
                        s.worst_abs_error = std::max(s.worst_abs_error, err);
                        if (scale * options.rel_tol >= options.abs_tol) {
                            s.worst_rel_error = std::max(s.worst_rel_error, err / scale);
                        }
                        ++s.checked;
                        if (!pass) {
                            if (s.failed < kMaxFailuresPerComponent) {
                                report.failures.push_back({c, trial_seed, tau, role, i, exact, numeric});
                            }
                            ++s.failed;
                        }
                    }
                }
            }
        }
    }
    return report;
}

} // namespace dmsva::check
