#pragma once

#include <span>

#include "dmsva/model.hpp"
#include "dmsva/num/tape.hpp"
#include "dmsva/sample.hpp"

namespace dmsva {

using num::Tape;
using num::Var;

struct ObjectiveOptions {
    LossWeights weights;
    double temperature = kDefaultTemperature;
    /// Stop gradients into the auditory-side weights and components used as
    /// the reference inside the align and imi terms.
    bool detach_teacher = true;
};

struct BankVars {
    Var pk, ek, tv, sv;
};

/// Records the four banks as trainable leaves.
BankVars bind_banks(Tape& tape, const DmsvaModel& model);

struct PathwayVars {
    Var timbre_weights, sound_weights;
    Var timbre, sound, combined;
};

PathwayVars auditory_pathway(Tape& tape, const BankVars& banks, Var a, double temperature);
PathwayVars visual_pathway(Tape& tape, const BankVars& banks, Var v, double temperature);

struct LossVars {
    Var rec, align, imi, timbre_c, env_c, total;
};

/// Mini-batch objective. rec/align/imi average over the primary observation of
/// every pair; timbre_c and env_c average over the pairs of their mode and are
/// a constant zero when the batch has none.
///
/// With detach_teacher set, the auditory reference inside align/imi is a
/// constant. If frozen_teacher is given, that reference is computed from
/// frozen_teacher's value banks instead of from `banks`; finite-difference
/// checks use this to hold the reference at the unperturbed point.
LossVars build_objective(Tape& tape, const BankVars& banks, std::span<const SamplePair> batch,
                         const ObjectiveOptions& options,
                         const DmsvaModel* frozen_teacher = nullptr);

LossBreakdown read_breakdown(const Tape& tape, const LossVars& losses);

/// Forward-only evaluation of build_objective.
LossBreakdown evaluate_objective(const DmsvaModel& model, std::span<const SamplePair> batch,
                                 const ObjectiveOptions& options,
                                 const DmsvaModel* frozen_teacher = nullptr);

/// Gradients of the total w.r.t. each bank, laid out like the model.
struct ModelGradients {
    DmsvaModel grads;
    LossBreakdown losses;
};

/// One forward/backward pass of the chosen loss component. `component`
/// selects which node is the backward root.
enum class LossComponent { Rec, Align, Imi, TimbreC, EnvC, Total };

std::string_view to_string(LossComponent component);

ModelGradients objective_gradients(const DmsvaModel& model, std::span<const SamplePair> batch,
                                   const ObjectiveOptions& options,
                                   LossComponent root = LossComponent::Total);

} // namespace dmsva
