#include "dmsva/objective.hpp"

#include <array>
#include <vector>

#include "dmsva/errors.hpp"

namespace dmsva {

std::string_view to_string(LossComponent component) {
    switch (component) {
    case LossComponent::Rec: return "L_rec";
    case LossComponent::Align: return "L_align";
    case LossComponent::Imi: return "L_imi";
    case LossComponent::TimbreC: return "L_timbre_c";
    case LossComponent::EnvC: return "L_env_c";
    case LossComponent::Total: return "L_total";
    }
    return "unknown";
}

BankVars bind_banks(Tape& tape, const DmsvaModel& model) {
    model.validate();
    return {tape.leaf(model.pk.slots), tape.leaf(model.ek.slots), tape.leaf(model.tv.slots),
            tape.leaf(model.sv.slots)};
}

PathwayVars auditory_pathway(Tape& tape, const BankVars& banks, Var a, double temperature) {
    PathwayVars out;
    out.timbre_weights =
        tape.softmax(tape.scale(tape.cosine_rows(banks.tv, a), 1.0 / temperature));
    out.sound_weights =
        tape.softmax(tape.scale(tape.cosine_rows(banks.sv, a), 1.0 / temperature));
    out.timbre = tape.matvec_t(banks.tv, out.timbre_weights);
    out.sound = tape.matvec_t(banks.sv, out.sound_weights);
    out.combined = tape.add(out.timbre, out.sound);
    return out;
}

PathwayVars visual_pathway(Tape& tape, const BankVars& banks, Var v, double temperature) {
    PathwayVars out;
    out.timbre_weights =
        tape.softmax(tape.scale(tape.cosine_rows(banks.pk, v), 1.0 / temperature));
    out.sound_weights =
        tape.softmax(tape.scale(tape.cosine_rows(banks.ek, v), 1.0 / temperature));
    out.timbre = tape.matvec_t(banks.tv, out.timbre_weights);
    out.sound = tape.matvec_t(banks.sv, out.sound_weights);
    out.combined = tape.add(out.timbre, out.sound);
    return out;
}

namespace {

struct Teacher {
    Var timbre_weights, sound_weights, timbre, sound;
};

Teacher constant_teacher(Tape& tape, const PathwayOutput& values) {
    return {tape.constant(values.timbre_weights.weights), tape.constant(values.sound_weights.weights),
            tape.constant(values.timbre_component), tape.constant(values.sound_component)};
}

Var mean_of(Tape& tape, const std::vector<Var>& terms) {
    if (terms.empty()) {
        return tape.constant(num::Tensor2::scalar(0.0));
    }
    const std::vector<double> w(terms.size(), 1.0 / static_cast<double>(terms.size()));
    return tape.weighted_sum(terms, w);
}

} // namespace

LossVars build_objective(Tape& tape, const BankVars& banks, std::span<const SamplePair> batch,
                         const ObjectiveOptions& options, const DmsvaModel* frozen_teacher) {
    if (batch.empty()) {
        throw std::invalid_argument("objective over an empty batch");
    }
    const double tau = options.temperature;
    std::vector<Var> rec, align, imi, timbre_c, env_c;

    for (const SamplePair& pair : batch) {
        const Var a = tape.constant(pair.primary.a);
        const Var v = tape.constant(pair.primary.v);
        const PathwayVars aud = auditory_pathway(tape, banks, a, tau);
        const PathwayVars vis = visual_pathway(tape, banks, v, tau);

        Teacher teacher{aud.timbre_weights, aud.sound_weights, aud.timbre, aud.sound};
        if (options.detach_teacher) {
            if (frozen_teacher != nullptr) {
                teacher = constant_teacher(tape, reconstruct_auditory(*frozen_teacher,
                                                                      pair.primary.a, tau));
            } else {
                teacher = {tape.detach(aud.timbre_weights), tape.detach(aud.sound_weights),
                           tape.detach(aud.timbre), tape.detach(aud.sound)};
            }
        }

        rec.push_back(tape.sq_dist(a, aud.combined));
        const std::array<Var, 2> kls{tape.kl(teacher.timbre_weights, vis.timbre_weights),
                                     tape.kl(teacher.sound_weights, vis.sound_weights)};
        align.push_back(tape.sum(kls));
        const std::array<Var, 2> dists{tape.sq_dist(teacher.timbre, vis.timbre),
                                       tape.sq_dist(teacher.sound, vis.sound)};
        imi.push_back(tape.sum(dists));

        if (pair.mode == PairMode::Standard) {
            continue;
        }
        if (!pair.partner) {
            throw std::invalid_argument("contrastive pair without a partner");
        }
        const PathwayVars other =
            visual_pathway(tape, banks, tape.constant(pair.partner->v), tau);
        if (pair.mode == PairMode::SameCharacterDiffEnv) {
            timbre_c.push_back(tape.sq_dist(vis.timbre, other.timbre));
        } else {
            env_c.push_back(tape.sq_dist(vis.sound, other.sound));
        }
    }

    LossVars out;
    out.rec = mean_of(tape, rec);
    out.align = mean_of(tape, align);
    out.imi = mean_of(tape, imi);
    out.timbre_c = mean_of(tape, timbre_c);
    out.env_c = mean_of(tape, env_c);
    const LossWeights& w = options.weights;
    const std::array<Var, 5> terms{out.rec, out.align, out.imi, out.timbre_c, out.env_c};
    const std::array<double, 5> coeffs{1.0, w.lambda1, w.lambda2, w.lambda3, w.lambda4};
    out.total = tape.weighted_sum(terms, coeffs);
    return out;
}

LossBreakdown read_breakdown(const Tape& tape, const LossVars& losses) {
    return {tape.scalar(losses.rec),     tape.scalar(losses.align), tape.scalar(losses.imi),
            tape.scalar(losses.timbre_c), tape.scalar(losses.env_c), tape.scalar(losses.total)};
}

LossBreakdown evaluate_objective(const DmsvaModel& model, std::span<const SamplePair> batch,
                                 const ObjectiveOptions& options,
                                 const DmsvaModel* frozen_teacher) {
    Tape tape;
    const BankVars banks = bind_banks(tape, model);
    return read_breakdown(tape, build_objective(tape, banks, batch, options, frozen_teacher));
}

ModelGradients objective_gradients(const DmsvaModel& model, std::span<const SamplePair> batch,
                                   const ObjectiveOptions& options, LossComponent root) {
    Tape tape;
    const BankVars banks = bind_banks(tape, model);
    const LossVars losses = build_objective(tape, banks, batch, options);
    Var target = losses.total;
    switch (root) {
    case LossComponent::Rec: target = losses.rec; break;
    case LossComponent::Align: target = losses.align; break;
    case LossComponent::Imi: target = losses.imi; break;
    case LossComponent::TimbreC: target = losses.timbre_c; break;
    case LossComponent::EnvC: target = losses.env_c; break;
    case LossComponent::Total: break;
    }
    tape.backward(target);

    ModelGradients out{model, read_breakdown(tape, losses)};
    out.grads.pk.slots = tape.grad(banks.pk);
    out.grads.ek.slots = tape.grad(banks.ek);
    out.grads.tv.slots = tape.grad(banks.tv);
    out.grads.sv.slots = tape.grad(banks.sv);
    return out;
}

} // namespace dmsva
