#include "dmsva/evaluator.hpp"

#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>

#include "dmsva/errors.hpp"
#include "dmsva/num/ops.hpp"

namespace dmsva::eval {

namespace {

/// Cosine similarity that scores zero-norm operands as 0.
double safe_cosine(const Vector& x, const Vector& y) {
    const double nx = num::norm2(x.values());
    const double ny = num::norm2(y.values());
    if (nx <= num::kNormEpsilon || ny <= num::kNormEpsilon) {
        return 0.0;
    }
    return num::dot(x.values(), y.values()) / (nx * ny);
}

std::string format_double(double x) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

std::string format_optional(const std::optional<double>& x) {
    return x ? format_double(*x) : std::string();
}

} // namespace

RecallFn model_recaller(const DmsvaModel& model, double temperature) {
    return [model, temperature](const Observation& o) {
        return recall_from_visual(model, o.v, temperature);
    };
}

RecallFn copy_oracle() {
    return [](const Observation& o) {
        return PathwayOutput{o.a, Vector(o.a.dim()), o.a, {}, {}};
    };
}

RecallFn prototype_oracle(const synth::LatentWorld& world) {
    return [&world](const Observation& o) {
        return PathwayOutput{world.timbre.at(o.character_id), world.sound.at(o.environment_id),
                             o.a, {}, {}};
    };
}

std::vector<std::size_t> recall_ranks(const RecallFn& recall, std::span<const Observation> eval) {
    std::vector<Vector> recalled;
    recalled.reserve(eval.size());
    for (const Observation& o : eval) {
        recalled.push_back(recall(o).combined);
    }
    std::vector<std::size_t> ranks(eval.size());
    for (std::size_t i = 0; i < eval.size(); ++i) {
        const double own = safe_cosine(recalled[i], eval[i].a);
        std::size_t rank = 1;
        for (std::size_t j = 0; j < eval.size(); ++j) {
            if (j != i && safe_cosine(recalled[i], eval[j].a) >= own) {
                ++rank;
            }
        }
        ranks[i] = rank;
    }
    return ranks;
}

double cross_modal_recall(const RecallFn& recall, std::span<const Observation> eval,
                          std::size_t k) {
    if (eval.size() < 2 || k > eval.size() || k == 0) {
        throw TooFewPairs("recall@" + std::to_string(k) + " over " + std::to_string(eval.size()) +
                          " eval pairs");
    }
    std::size_t hits = 0;
    for (std::size_t r : recall_ranks(recall, eval)) {
        hits += r <= k ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(eval.size());
}

Margins decoupling_margins(const RecallFn& recall, const synth::LatentWorld& world,
                           std::size_t n_probe, num::Rng& rng) {
    if (n_probe < kMinProbes) {
        throw TooFewPairs("decoupling margins need at least " + std::to_string(kMinProbes) +
                          " probes, got " + std::to_string(n_probe));
    }
    double timbre_same = 0.0, timbre_diff = 0.0, sound_same = 0.0, sound_diff = 0.0;
    for (std::size_t i = 0; i < n_probe; ++i) {
        const SamplePair fixed_char =
            synth::sample_pair(world, PairMode::SameCharacterDiffEnv, rng);
        const SamplePair fixed_env =
            synth::sample_pair(world, PairMode::DiffCharacterSameEnv, rng);
        const PathwayOutput fc_a = recall(fixed_char.primary);
        const PathwayOutput fc_b = recall(*fixed_char.partner);
        const PathwayOutput fe_a = recall(fixed_env.primary);
        const PathwayOutput fe_b = recall(*fixed_env.partner);
        timbre_same += safe_cosine(fc_a.timbre_component, fc_b.timbre_component);
        sound_diff += safe_cosine(fc_a.sound_component, fc_b.sound_component);
        timbre_diff += safe_cosine(fe_a.timbre_component, fe_b.timbre_component);
        sound_same += safe_cosine(fe_a.sound_component, fe_b.sound_component);
    }
    const double n = static_cast<double>(n_probe);
    return {(timbre_same - timbre_diff) / n, (sound_same - sound_diff) / n};
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    auto opt = [](const std::optional<double>& x) {
        return x ? nlohmann::json(*x) : nlohmann::json(nullptr);
    };
    j = nlohmann::json{{"recall_at_1", r.recall_at_1},
                       {"recall_at_5", r.recall_at_5},
                       {"mean_align_kl", opt(r.mean_align_kl)},
                       {"timbre_margin", opt(r.timbre_margin)},
                       {"env_margin", opt(r.env_margin)},
                       {"metadata", r.metadata}};
}

std::string report_csv_header() {
    return "recall_at_1,recall_at_5,mean_align_kl,timbre_margin,env_margin";
}

std::string report_csv_row(const EvalReport& r) {
    return format_double(r.recall_at_1) + "," + format_double(r.recall_at_5) + "," +
           format_optional(r.mean_align_kl) + "," + format_optional(r.timbre_margin) + "," +
           format_optional(r.env_margin);
}

std::vector<Observation> primaries(std::span<const SamplePair> pairs) {
    std::vector<Observation> out;
    out.reserve(pairs.size());
    for (const SamplePair& p : pairs) out.push_back(p.primary);
    return out;
}

namespace {

void fill_recall(EvalReport& report, const RecallFn& recall, std::span<const Observation> eval) {
    if (eval.size() < 5) {
        throw TooFewPairs("evaluation needs at least 5 pairs, got " + std::to_string(eval.size()));
    }
    const auto ranks = recall_ranks(recall, eval);
    std::size_t top1 = 0, top5 = 0;
    for (std::size_t r : ranks) {
        top1 += r <= 1 ? 1 : 0;
        top5 += r <= 5 ? 1 : 0;
    }
    report.recall_at_1 = static_cast<double>(top1) / static_cast<double>(eval.size());
    report.recall_at_5 = static_cast<double>(top5) / static_cast<double>(eval.size());
}

} // namespace

EvalReport evaluate_model(const DmsvaModel& model, const synth::LatentWorld& world,
                          std::span<const SamplePair> eval_pairs, const EvalOptions& options) {
    const auto eval = primaries(eval_pairs);
    const RecallFn recall = model_recaller(model, options.temperature);
    EvalReport report;
    fill_recall(report, recall, eval);

    double kl = 0.0;
    for (const Observation& o : eval) {
        kl += loss_align(reconstruct_auditory(model, o.a, options.temperature),
                         recall_from_visual(model, o.v, options.temperature));
    }
    report.mean_align_kl = kl / static_cast<double>(eval.size());

    num::Rng rng(options.probe_seed);
    const Margins m = decoupling_margins(recall, world, options.n_probe, rng);
    report.timbre_margin = m.timbre;
    report.env_margin = m.env;
    report.metadata = {{"kind", to_string(FusionKind::Dmsva)},
                       {"slot_count", model.slot_count()},
                       {"n_eval", eval.size()},
                       {"eval_split_hash", split_hash(eval_pairs)}};
    return report;
}

std::string_view to_string(FusionKind kind) {
    switch (kind) {
    case FusionKind::Dmsva: return "dmsva";
    case FusionKind::ConcatFusion: return "concat";
    case FusionKind::AttnFusion: return "attn";
    }
    return "unknown";
}

FusionKind parse_fusion_kind(std::string_view name) {
    for (FusionKind k : {FusionKind::Dmsva, FusionKind::ConcatFusion, FusionKind::AttnFusion}) {
        if (name == to_string(k)) return k;
    }
    throw ConfigError("unknown fusion kind '" + std::string(name) + "'");
}

BaselineFusion::BaselineFusion(FusionKind kind, std::size_t dim, std::size_t tokens,
                               num::Rng& rng)
    : kind_(kind), dim_(dim) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
    auto gaussian = [&](std::size_t rows, std::size_t cols) {
        num::Tensor2 t(rows, cols);
        for (double& x : t.values()) x = rng.normal(0.0, stddev);
        return t;
    };
    switch (kind) {
    case FusionKind::ConcatFusion:
        params_.emplace_back(dim, dim);
        break;
    case FusionKind::AttnFusion:
        if (tokens == 0) throw ConfigError("AttnFusion needs at least one token");
        params_.push_back(gaussian(tokens, dim));  // T
        params_.push_back(gaussian(dim, dim));     // Wk
        params_.push_back(gaussian(dim, dim));     // Wv
        break;
    case FusionKind::Dmsva:
        throw std::invalid_argument("D-MSVA is not a baseline fusion");
    }
}

std::vector<num::Var> BaselineFusion::bind(num::Tape& tape) const {
    std::vector<num::Var> leaves;
    for (const auto& p : params_) leaves.push_back(tape.leaf(p));
    return leaves;
}

num::Var BaselineFusion::forward(num::Tape& tape, std::span<const num::Var> leaves,
                                 num::Var v) const {
    if (kind_ == FusionKind::ConcatFusion) {
        return tape.matvec(leaves[0], v);
    }
    const num::Var keys = tape.matmul_nt(leaves[0], leaves[1]);
    const num::Var values = tape.matmul_nt(leaves[0], leaves[2]);
    const num::Var logits =
        tape.scale(tape.matvec(keys, v), 1.0 / std::sqrt(static_cast<double>(dim_)));
    return tape.matvec_t(values, tape.softmax(logits));
}

Vector BaselineFusion::fuse(const Vector& v) const {
    num::Tape tape;
    const auto leaves = bind(tape);
    return tape.value(forward(tape, leaves, tape.constant(v))).flat();
}

BaselineFusion train_baseline(FusionKind kind, std::span<const SamplePair> dataset,
                              const train::TrainConfig& cfg, std::size_t tokens) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("baseline training on an empty dataset");
    const std::size_t dim = dataset.front().primary.v.dim();
    num::Rng rng = num::Rng::substream(cfg.seed, 0xba5e);
    BaselineFusion fusion(kind, dim, tokens, rng);
    train::OptimizerState opt;

    for (std::uint64_t step = 0; step < cfg.steps; ++step) {
        num::Tape tape;
        const auto leaves = fusion.bind(tape);
        std::vector<num::Var> terms;
        for (std::size_t i : train::batch_indices(cfg, step, dataset.size())) {
            const Observation& o = dataset[i].primary;
            const num::Var out = fusion.forward(tape, leaves, tape.constant(o.v));
            terms.push_back(tape.sq_dist(tape.constant(o.a), out));
        }
        const std::vector<double> w(terms.size(), 1.0 / static_cast<double>(terms.size()));
        const num::Var loss = tape.weighted_sum(terms, w);
        if (!std::isfinite(tape.scalar(loss))) {
            throw NonFiniteLoss(std::string(to_string(kind)) + " baseline loss at step " +
                                std::to_string(step));
        }
        tape.backward(loss);

        std::vector<double> flat, grads;
        for (std::size_t k = 0; k < leaves.size(); ++k) {
            const auto p = fusion.params()[k].values();
            const auto g = tape.grad(leaves[k]).values();
            flat.insert(flat.end(), p.begin(), p.end());
            grads.insert(grads.end(), g.begin(), g.end());
        }
        train::adamw_update(flat, grads, opt, cfg);
        std::size_t offset = 0;
        for (auto& p : fusion.params()) {
            for (double& x : p.values()) x = flat[offset++];
        }
    }
    return fusion;
}

RecallFn baseline_recaller(const BaselineFusion& fusion) {
    return [fusion](const Observation& o) {
        Vector out = fusion.fuse(o.v);
        return PathwayOutput{out, Vector(out.dim()), out, {}, {}};
    };
}

EvalReport run_baseline(FusionKind kind, std::span<const SamplePair> dataset,
                        std::span<const SamplePair> eval_pairs, const synth::LatentWorld& world,
                        const train::TrainConfig& cfg, std::size_t slot_count,
                        const EvalOptions& options) {
    EvalReport report;
    if (kind == FusionKind::Dmsva) {
        const std::size_t dim = dataset.front().primary.v.dim();
        const auto result = train::fit(train::init_model(cfg, slot_count, dim), dataset, cfg);
        report = evaluate_model(result.model, world, eval_pairs, options);
    } else {
        const BaselineFusion fusion = train_baseline(kind, dataset, cfg, slot_count);
        fill_recall(report, baseline_recaller(fusion), primaries(eval_pairs));
        report.metadata = {{"kind", to_string(kind)},
                           {"slot_count", kind == FusionKind::AttnFusion ? slot_count : 0},
                           {"n_eval", eval_pairs.size()},
                           {"eval_split_hash", split_hash(eval_pairs)}};
    }
    report.metadata["steps"] = cfg.steps;
    report.metadata["batch_size"] = cfg.batch_size;
    report.metadata["seed"] = cfg.seed;
    return report;
}

std::vector<SweepRow> slot_sweep(std::span<const std::size_t> slot_counts,
                                 std::span<const SamplePair> dataset,
                                 std::span<const SamplePair> eval_pairs,
                                 const synth::LatentWorld& world, const train::TrainConfig& cfg,
                                 const EvalOptions& options) {
    const FusionKind kinds[] = {FusionKind::Dmsva};
    return ablation_sweep(kinds, slot_counts, dataset, eval_pairs, world, cfg, options);
}

std::vector<SweepRow> ablation_sweep(std::span<const FusionKind> kinds,
                                     std::span<const std::size_t> slot_counts,
                                     std::span<const SamplePair> dataset,
                                     std::span<const SamplePair> eval_pairs,
                                     const synth::LatentWorld& world,
                                     const train::TrainConfig& cfg, const EvalOptions& options) {
    for (std::size_t n : slot_counts) {
        if (n == 0) throw ConfigError("ablate.slot_counts: every N must be >= 1");
    }
    std::vector<SweepRow> rows;
    for (FusionKind kind : kinds) {
        if (kind == FusionKind::ConcatFusion) {
            rows.push_back({kind, 0,
                            run_baseline(kind, dataset, eval_pairs, world, cfg, 0, options)});
            continue;
        }
        for (std::size_t n : slot_counts) {
            rows.push_back({kind, n,
                            run_baseline(kind, dataset, eval_pairs, world, cfg, n, options)});
        }
    }
    // Every row must have seen the same eval split and budget.
    for (const SweepRow& r : rows) {
        if (r.report.metadata.at("eval_split_hash") != rows.front().report.metadata.at("eval_split_hash") ||
            r.report.metadata.at("steps") != rows.front().report.metadata.at("steps")) {
            throw std::logic_error("ablation rows evaluated under different splits or budgets");
        }
    }
    return rows;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
    out << "kind,slot_count," << report_csv_header() << '\n';
    for (const SweepRow& r : rows) {
        out << to_string(r.kind) << ',' << r.slot_count << ',' << report_csv_row(r.report) << '\n';
    }
}

std::uint64_t split_hash(std::span<const SamplePair> pairs) {
    std::ostringstream text;
    synth::write_pairs(text, std::vector<SamplePair>(pairs.begin(), pairs.end()));
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text.str()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace dmsva::eval
