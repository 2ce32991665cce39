#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "dmsva/errors.hpp"
#include "dmsva/num/ops.hpp"
#include "dmsva/objective.hpp"
#include "support/oracles.hpp"

using namespace dmsva;

namespace {

MemoryBank bank_of(std::initializer_list<Vector> rows, BankRole role = BankRole::TimbreValue) {
    const std::size_t d = rows.begin()->dim();
    MemoryBank b{role, Tensor2(rows.size(), d)};
    std::size_t r = 0;
    for (const Vector& row : rows) {
        for (std::size_t c = 0; c < d; ++c) b.slots(r, c) = row[c];
        ++r;
    }
    return b;
}

void expect_vec_near(const Vector& got, const oracle::Vec& want, double tol) {
    ASSERT_EQ(got.dim(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

PathwayOutput with_components(Vector timbre, Vector sound) {
    PathwayOutput p;
    p.timbre_component = std::move(timbre);
    p.sound_component = std::move(sound);
    return p;
}

}  // namespace

TEST(Attend, Examples) {
    const MemoryBank b = bank_of({{1, 0}, {0, 1}});
    const AttentionWeights w = attend(Vector{1, 0}, b, 1.0);
    EXPECT_NEAR(w.weights[0], 0.7310585786, 1e-10);
    EXPECT_NEAR(w.weights[1], 0.2689414214, 1e-10);

    const MemoryBank same = bank_of({{0.3, 0.4}, {0.3, 0.4}, {0.3, 0.4}});
    const AttentionWeights uniform = attend(Vector{1, 2}, same, 1.0);
    for (double x : uniform.weights.values()) EXPECT_DOUBLE_EQ(x, 1.0 / 3);

    const AttentionWeights scaled = attend(Vector{4.5, 0}, b, 1.0);
    EXPECT_NEAR(scaled.weights[0], w.weights[0], 1e-15);
}

TEST(Attend, Errors) {
    const MemoryBank b = bank_of({{1, 0}, {0, 1}});
    EXPECT_THROW(attend(Vector{0, 0}, b), ZeroNormVector);
    EXPECT_THROW(attend(Vector{1, 0, 0}, b), DimensionMismatch);
}

TEST(Attend, ScaleInvariance) {
    oracle::Gen g(21);
    for (int i = 0; i < 200; ++i) {
        const std::size_t n = g.index(1, 8), d = g.index(1, 8);
        const DmsvaModel m = g.model(n, d);
        const Vector q = g.vector(d);
        Vector cq = q;
        const double c = g.uniform(1e-3, 1e3);
        for (double& x : cq.values()) x *= c;
        const auto a = attend(q, m.pk), b = attend(cq, m.pk);
        for (std::size_t k = 0; k < n; ++k) EXPECT_NEAR(a.weights[k], b.weights[k], 1e-9);
    }
}

TEST(Pathways, OneHotSelection) {
    // With a tiny temperature and orthonormal slots the weights are one-hot.
    DmsvaModel m(2, 2);
    m.tv = bank_of({{1, 0}, {0, 1}}, BankRole::TimbreValue);
    m.sv = bank_of({{1, 0}, {0, 1}}, BankRole::SoundValue);
    m.pk = bank_of({{1, 0}, {0, 1}}, BankRole::CharacterKey);
    m.ek = bank_of({{0, 1}, {1, 0}}, BankRole::EnvironmentKey);
    const PathwayOutput aud = reconstruct_auditory(m, Vector{1, 0}, 1e-3);
    expect_vec_near(aud.combined, {2, 0}, 1e-12);
    const PathwayOutput vis = recall_from_visual(m, Vector{1, 0}, 1e-3);
    // pk selects slot 0 of tv, ek selects slot 1 of sv.
    expect_vec_near(vis.timbre_component, {1, 0}, 1e-12);
    expect_vec_near(vis.sound_component, {0, 1}, 1e-12);
    expect_vec_near(vis.combined, {1, 1}, 1e-12);
}

TEST(Pathways, SingleSlot) {
    oracle::Gen g(22);
    const DmsvaModel m = g.model(1, 4);
    const PathwayOutput aud = reconstruct_auditory(m, g.vector(4));
    EXPECT_EQ(aud.timbre_weights.weights[0], 1.0);
    EXPECT_EQ(aud.timbre_component, m.tv.slots.flat());
}

TEST(Pathways, IdenticalKeyBanksGiveIdenticalWeights) {
    oracle::Gen g(23);
    DmsvaModel m = g.model(5, 6);
    m.ek.slots = m.pk.slots;
    const PathwayOutput vis = recall_from_visual(m, g.vector(6));
    EXPECT_EQ(vis.timbre_weights.weights, vis.sound_weights.weights);
}

TEST(Pathways, MatchNaiveOracleOnRandomInstances) {
    oracle::Gen g(24);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t n = g.index(1, 8), d = g.index(1, 8);
        const double tau = i % 2 ? 1.0 : kDefaultTemperature;
        const DmsvaModel m = g.model(n, d);
        const oracle::Banks b = oracle::banks(m);
        const Vector a = g.vector(d), v = g.vector(d);

        const PathwayOutput aud = reconstruct_auditory(m, a, tau);
        const oracle::Path ea = oracle::auditory(b, a.raw(), tau);
        expect_vec_near(aud.timbre_weights.weights, ea.wt, 1e-12);
        expect_vec_near(aud.sound_weights.weights, ea.ws, 1e-12);
        expect_vec_near(aud.combined, ea.combined, 1e-12);

        const PathwayOutput vis = recall_from_visual(m, v, tau);
        const oracle::Path ev = oracle::visual(b, v.raw(), tau);
        expect_vec_near(vis.timbre_weights.weights, ev.wt, 1e-12);
        expect_vec_near(vis.sound_weights.weights, ev.ws, 1e-12);
        expect_vec_near(vis.timbre_component, ev.timbre, 1e-12);
        expect_vec_near(vis.sound_component, ev.sound, 1e-12);
        expect_vec_near(vis.combined, ev.combined, 1e-12);
    }
}

TEST(Pathways, CombinedIsSumOfComponents) {
    oracle::Gen g(25);
    for (int i = 0; i < 200; ++i) {
        const std::size_t n = g.index(1, 8), d = g.index(1, 8);
        const DmsvaModel m = g.model(n, d);
        for (const PathwayOutput& p :
             {reconstruct_auditory(m, g.vector(d)), recall_from_visual(m, g.vector(d))}) {
            for (std::size_t k = 0; k < d; ++k) {
                EXPECT_NEAR(p.combined[k], p.timbre_component[k] + p.sound_component[k], 1e-9);
            }
        }
    }
}

TEST(Pathways, CrossBankWiringIgnoresKeyValues) {
    // In the one-hot regime the key banks only choose slots; changing a key
    // slot's magnitude keeps its direction and therefore the readout.
    oracle::Gen g(26);
    DmsvaModel m = g.model(4, 6);
    const Vector v = g.vector(6);
    const PathwayOutput before = recall_from_visual(m, v, 1e-4);
    for (double& x : m.pk.slots.values()) x *= 3.0;
    for (double& x : m.ek.slots.values()) x *= 0.25;
    const PathwayOutput after = recall_from_visual(m, v, 1e-4);
    EXPECT_EQ(before.timbre_weights.weights, after.timbre_weights.weights);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(before.combined[k], after.combined[k], 1e-12);

    // The components are rows of the value banks, not the key banks.
    std::size_t ip = 0, ie = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        if (before.timbre_weights.weights[i] > 0.5) ip = i;
        if (before.sound_weights.weights[i] > 0.5) ie = i;
    }
    for (std::size_t k = 0; k < 6; ++k) {
        EXPECT_NEAR(before.timbre_component[k], m.tv.slots(ip, k), 1e-9);
        EXPECT_NEAR(before.sound_component[k], m.sv.slots(ie, k), 1e-9);
    }
}

TEST(Losses, Rec) {
    PathwayOutput p;
    p.combined = Vector{1, 2};
    EXPECT_EQ(loss_rec(Vector{1, 2}, p), 0.0);
    p.combined = Vector{0, 0, 0, 0};
    EXPECT_EQ(loss_rec(Vector{1, 0, 0, 0}, p), 1.0);
    EXPECT_THROW(loss_rec(Vector{1, 0}, p), DimensionMismatch);
    oracle::Gen g(27);
    for (int i = 0; i < 100; ++i) {
        const Vector a = g.vector(7);
        p.combined = g.vector(7);
        double s = 0;
        for (std::size_t k = 0; k < 7; ++k) s += (a[k] - p.combined[k]) * (a[k] - p.combined[k]);
        EXPECT_NEAR(loss_rec(a, p), s, 1e-12);
    }
}

TEST(Losses, Align) {
    PathwayOutput aud, vis;
    aud.timbre_weights.weights = Vector{1, 0};
    aud.sound_weights.weights = Vector{0.3, 0.7};
    vis.timbre_weights.weights = Vector{0.5, 0.5};
    vis.sound_weights.weights = Vector{0.3, 0.7};
    EXPECT_NEAR(loss_align(aud, vis), std::numbers::ln2, 1e-15);
    EXPECT_EQ(loss_align(aud, aud), 0.0);

    // Asymmetry on a random pair.
    oracle::Gen g(28);
    PathwayOutput p, q;
    p.timbre_weights.weights = num::softmax(g.vector(4));
    p.sound_weights.weights = num::softmax(g.vector(4));
    q.timbre_weights.weights = num::softmax(g.vector(4));
    q.sound_weights.weights = num::softmax(g.vector(4));
    const double pq = loss_align(p, q), qp = loss_align(q, p);
    EXPECT_NEAR(pq, oracle::kl(p.timbre_weights.weights.raw(), q.timbre_weights.weights.raw()) +
                        oracle::kl(p.sound_weights.weights.raw(), q.sound_weights.weights.raw()),
                1e-12);
    EXPECT_GT(std::abs(pq - qp), 1e-6);

    vis.sound_weights.weights = Vector{1, 0, 0};
    EXPECT_THROW(loss_align(aud, vis), DimensionMismatch);
}

TEST(Losses, ImiAndConsistency) {
    const PathwayOutput a = with_components(Vector{1, 0}, Vector{2, 2});
    EXPECT_EQ(loss_imi(a, a), 0.0);
    EXPECT_EQ(loss_imi(a, with_components(Vector{1, 1}, Vector{2, 2})), 1.0);
    EXPECT_EQ(loss_timbre_consistency(a, a), 0.0);
    EXPECT_EQ(loss_timbre_consistency(with_components(Vector{1, 0}, Vector{0, 0}),
                                      with_components(Vector{0, 1}, Vector{5, 5})),
              2.0);
    EXPECT_EQ(loss_env_consistency(a, a), 0.0);
    EXPECT_EQ(loss_env_consistency(with_components(Vector{9, 9}, Vector{1, 0}),
                                   with_components(Vector{0, 0}, Vector{0, 1})),
              2.0);
    EXPECT_THROW(loss_imi(a, with_components(Vector{1}, Vector{2})), DimensionMismatch);

    oracle::Gen g(29);
    for (int i = 0; i < 100; ++i) {
        const PathwayOutput x = with_components(g.vector(5), g.vector(5));
        const PathwayOutput y = with_components(g.vector(5), g.vector(5));
        EXPECT_NEAR(loss_imi(x, y),
                    oracle::sqdist(x.timbre_component.raw(), y.timbre_component.raw()) +
                        oracle::sqdist(x.sound_component.raw(), y.sound_component.raw()),
                    1e-12);
        EXPECT_NEAR(loss_timbre_consistency(x, y),
                    oracle::sqdist(x.timbre_component.raw(), y.timbre_component.raw()), 1e-12);
        EXPECT_NEAR(loss_env_consistency(x, y),
                    oracle::sqdist(x.sound_component.raw(), y.sound_component.raw()), 1e-12);
    }
}

TEST(Losses, TotalWeighting) {
    const LossBreakdown ones{1, 1, 1, 1, 1, 0};
    EXPECT_EQ(total_loss(ones, LossWeights{}).total, 14.0);
    EXPECT_EQ(total_loss(LossBreakdown{}, LossWeights{}).total, 0.0);
    const LossBreakdown c{0.3, 2, 3, 4, 5, 0};
    EXPECT_EQ(total_loss(c, LossWeights{0, 0, 0, 0}).total, 0.3);
    EXPECT_EQ(LossWeights{}.lambda1, 10.0);
    EXPECT_EQ(LossWeights{}.lambda2, 2.0);
    EXPECT_EQ(LossWeights{}.lambda3, 0.5);
    EXPECT_EQ(LossWeights{}.lambda4, 0.5);
    EXPECT_THROW((LossWeights{-1, 0, 0, 0}.validate()), ConfigError);
    EXPECT_THROW((LossWeights{0, NAN, 0, 0}.validate()), ConfigError);
}

TEST(Model, InitAndValidation) {
    EXPECT_THROW(DmsvaModel(0, 4), DimensionMismatch);
    num::Rng rng(1);
    const DmsvaModel m = DmsvaModel::init(32, 32, rng);
    EXPECT_EQ(m.slot_count(), 32u);
    EXPECT_EQ(m.dim(), 32u);
    double sumsq = 0;
    for (double x : m.tv.slots.values()) sumsq += x * x;
    EXPECT_NEAR(sumsq / (32.0 * 32.0), 1.0 / 32.0, 0.005);
    DmsvaModel bad = m;
    bad.sv.slots = Tensor2(32, 31);
    EXPECT_THROW(bad.validate(), DimensionMismatch);
}

TEST(Model, NormFloor) {
    DmsvaModel m(2, 3);
    m.tv.slots(0, 0) = 1e-9;
    m.tv.slots(1, 1) = 0.5;
    m.enforce_norm_floor();
    for (std::size_t r = 0; r < 2; ++r) {
        for (const auto* b : {&m.pk, &m.ek, &m.tv, &m.sv}) {
            EXPECT_GE(num::norm2(b->slots.row(r)), kSlotNormFloor * (1 - 1e-12));
        }
    }
    EXPECT_NEAR(m.tv.slots(0, 0), kSlotNormFloor, 1e-18);
    EXPECT_EQ(m.tv.slots(1, 1), 0.5);
}

TEST(Objective, MatchesNaiveForwardAndBreakdownIdentity) {
    oracle::Gen g(30);
    for (int i = 0; i < 200; ++i) {
        const std::size_t n = g.index(1, 8), d = g.index(2, 8);
        const DmsvaModel m = g.model(n, d);
        const auto batch = g.mixed_batch(d);
        const LossWeights w{g.uniform(0, 10), g.uniform(0, 10), g.uniform(0, 1), g.uniform(0, 1)};
        const double tau = i % 2 ? 1.0 : kDefaultTemperature;
        const LossBreakdown l = evaluate_objective(m, batch, {w, tau, true});
        const oracle::Banks b = oracle::banks(m);
        const oracle::Losses e = oracle::objective(b, b, batch, w, tau);
        EXPECT_NEAR(l.rec, e.rec, 1e-10);
        EXPECT_NEAR(l.align, e.align, 1e-10);
        EXPECT_NEAR(l.imi, e.imi, 1e-10);
        EXPECT_NEAR(l.timbre_c, e.timbre_c, 1e-10);
        EXPECT_NEAR(l.env_c, e.env_c, 1e-10);
        EXPECT_NEAR(l.total,
                    l.rec + w.lambda1 * l.align + w.lambda2 * l.imi + w.lambda3 * l.timbre_c +
                        w.lambda4 * l.env_c,
                    1e-9);
        for (double x : {l.rec, l.align, l.imi, l.timbre_c, l.env_c}) EXPECT_GE(x, -1e-12);
    }
}

TEST(Objective, AbsentModesContributeZero) {
    oracle::Gen g(31);
    const DmsvaModel m = g.model(3, 4);
    std::vector<SamplePair> standard_only{{g.observation(4, 0, 0), PairMode::Standard, std::nullopt}};
    const LossBreakdown l = evaluate_objective(m, standard_only, {});
    EXPECT_EQ(l.timbre_c, 0.0);
    EXPECT_EQ(l.env_c, 0.0);
}

TEST(Objective, GradientsMatchIndependentFiniteDifferences) {
    // Finite differences of the naive objective, with the teacher held at the
    // unperturbed model (the detached objective).
    const double h = 1e-5;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        oracle::Gen g(500 + seed);
        const std::size_t n = g.index(1, 8), d = g.index(2, 16);
        const DmsvaModel m = g.model(n, d);
        const auto batch = g.mixed_batch(d);
        const double tau = seed % 2 ? 1.0 : kDefaultTemperature;
        const LossWeights w;
        const DmsvaModel grads = objective_gradients(m, batch, {w, tau, true}).grads;
        const oracle::Banks teacher = oracle::banks(m);

        DmsvaModel probe = m;
        for (auto role : {BankRole::CharacterKey, BankRole::EnvironmentKey, BankRole::TimbreValue,
                          BankRole::SoundValue}) {
            auto values = probe.bank(role).slots.values();
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double saved = values[i];
                values[i] = saved + h;
                const double up = oracle::objective(oracle::banks(probe), teacher, batch, w, tau).total;
                values[i] = saved - h;
                const double down = oracle::objective(oracle::banks(probe), teacher, batch, w, tau).total;
                values[i] = saved;
                const double numeric = (up - down) / (2 * h);
                const double exact = grads.bank(role).slots.values()[i];
                if (std::abs(exact) > 1e-8) {
                    EXPECT_LE(std::abs(exact - numeric) / std::abs(exact), 1e-4)
                        << "seed " << seed << " bank " << to_string(role) << " entry " << i
                        << " analytic " << exact << " numeric " << numeric;
                } else {
                    EXPECT_LE(std::abs(exact - numeric), 1e-7)
                        << "seed " << seed << " bank " << to_string(role) << " entry " << i;
                }
            }
        }
    }
}

TEST(Objective, GradientFlowByBank) {
    oracle::Gen g(32);
    const DmsvaModel m = g.model(4, 5);
    const auto batch = g.mixed_batch(5);
    auto nonzero = [](const MemoryBank& b) {
        for (double x : b.slots.values())
            if (x != 0.0) return true;
        return false;
    };
    // rec only touches the auditory pathway: value banks only.
    const DmsvaModel rec = objective_gradients(m, batch, {}, LossComponent::Rec).grads;
    EXPECT_FALSE(nonzero(rec.pk));
    EXPECT_FALSE(nonzero(rec.ek));
    EXPECT_TRUE(nonzero(rec.tv));
    EXPECT_TRUE(nonzero(rec.sv));
    // imi reaches the value banks through the visual readout and the key banks
    // through the visual weights.
    const DmsvaModel imi = objective_gradients(m, batch, {}, LossComponent::Imi).grads;
    for (const auto* b : {&imi.pk, &imi.ek, &imi.tv, &imi.sv}) EXPECT_TRUE(nonzero(*b));
    // With a detached teacher the align term only moves the key banks.
    const DmsvaModel align = objective_gradients(m, batch, {}, LossComponent::Align).grads;
    EXPECT_TRUE(nonzero(align.pk));
    EXPECT_TRUE(nonzero(align.ek));
    EXPECT_FALSE(nonzero(align.tv));
    EXPECT_FALSE(nonzero(align.sv));
    // Without detachment the teacher side contributes to the value banks.
    ObjectiveOptions attached;
    attached.detach_teacher = false;
    const DmsvaModel align2 = objective_gradients(m, batch, attached, LossComponent::Align).grads;
    EXPECT_TRUE(nonzero(align2.tv));
    EXPECT_TRUE(nonzero(align2.sv));
}

TEST(Objective, DetachedTeacherValueUnaffectedByVisualBanks) {
    oracle::Gen g(33);
    const DmsvaModel m = g.model(4, 5);
    const auto batch = g.mixed_batch(5);
    num::Tape t1, t2;
    const BankVars b1 = bind_banks(t1, m);
    DmsvaModel shifted = m;
    for (double& x : shifted.pk.slots.values()) x += 0.5;
    for (double& x : shifted.ek.slots.values()) x -= 0.5;
    const BankVars b2 = bind_banks(t2, shifted);
    const auto a = t1.constant(batch[0].primary.a);
    const auto a2 = t2.constant(batch[0].primary.a);
    const PathwayVars p1 = auditory_pathway(t1, b1, a, kDefaultTemperature);
    const PathwayVars p2 = auditory_pathway(t2, b2, a2, kDefaultTemperature);
    EXPECT_EQ(t1.value(t1.detach(p1.timbre_weights)), t2.value(t2.detach(p2.timbre_weights)));
    EXPECT_EQ(t1.value(t1.detach(p1.sound)), t2.value(t2.detach(p2.sound)));
}

TEST(PairModes, Invariants) {
    oracle::Gen g(34);
    EXPECT_TRUE(satisfies_mode_invariants({g.observation(2, 0, 0), PairMode::Standard, std::nullopt}));
    EXPECT_FALSE(satisfies_mode_invariants(
        {g.observation(2, 0, 0), PairMode::SameCharacterDiffEnv, g.observation(2, 1, 1)}));
    EXPECT_TRUE(satisfies_mode_invariants(
        {g.observation(2, 0, 0), PairMode::DiffCharacterSameEnv, g.observation(2, 1, 0)}));
    EXPECT_FALSE(satisfies_mode_invariants(
        {g.observation(2, 0, 0), PairMode::DiffCharacterSameEnv, std::nullopt}));
    for (auto mode : {PairMode::Standard, PairMode::SameCharacterDiffEnv,
                      PairMode::DiffCharacterSameEnv}) {
        EXPECT_EQ(parse_pair_mode(to_string(mode)), mode);
    }
    EXPECT_THROW(parse_pair_mode("sideways"), FormatError);
}
