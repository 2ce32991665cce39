#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmsva/model.hpp"
#include "dmsva/num/tape.hpp"
#include "dmsva/sample.hpp"
#include "dmsva/synthgen.hpp"
#include "dmsva/trainer.hpp"

namespace dmsva::eval {

/// Maps an observation to a visual-pathway style output. Models only look at
/// the visual embedding; oracles may use anything in the observation.
using RecallFn = std::function<PathwayOutput(const Observation&)>;

RecallFn model_recaller(const DmsvaModel& model, double temperature);
/// Copy oracle: combined := a. Components are a and zero.
RecallFn copy_oracle();
/// Ground-truth oracle: timbre := t_c, sound := s_e, combined := a.
RecallFn prototype_oracle(const synth::LatentWorld& world);

/// Rank of each observation's own auditory embedding among all eval auditory
/// embeddings, by cosine similarity to the recalled embedding. Ties rank the
/// true item last. A zero-norm recall scores 0 against everything.
std::vector<std::size_t> recall_ranks(const RecallFn& recall, std::span<const Observation> eval);

/// Fraction of eval observations whose rank is <= k. Throws TooFewPairs
/// unless 2 <= eval.size() and k <= eval.size().
double cross_modal_recall(const RecallFn& recall, std::span<const Observation> eval,
                          std::size_t k);

struct Margins {
    double timbre = 0.0;
    double env = 0.0;
};

/// Minimum probe count accepted by decoupling_margins.
inline constexpr std::size_t kMinProbes = 50;

/// Draws n_probe same-character/different-environment pairs and n_probe
/// different-character/same-environment pairs.
///   timbre = mean cos(timbre | same char) - mean cos(timbre | different char)
///   env    = mean cos(sound | same env)   - mean cos(sound | different env)
Margins decoupling_margins(const RecallFn& recall, const synth::LatentWorld& world,
                           std::size_t n_probe, num::Rng& rng);

struct EvalReport {
    double recall_at_1 = 0.0;
    double recall_at_5 = 0.0;
    /// Only defined for D-MSVA models.
    std::optional<double> mean_align_kl;
    std::optional<double> timbre_margin;
    std::optional<double> env_margin;
    nlohmann::json metadata = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const EvalReport& r);
/// Header line for write_report_csv rows.
std::string report_csv_header();
std::string report_csv_row(const EvalReport& r);

struct EvalOptions {
    std::size_t n_probe = 200;
    std::uint64_t probe_seed = 7;
    double temperature = kDefaultTemperature;
};

std::vector<Observation> primaries(std::span<const SamplePair> pairs);

/// Recall, mean alignment KL and decoupling margins for a D-MSVA model.
EvalReport evaluate_model(const DmsvaModel& model, const synth::LatentWorld& world,
                          std::span<const SamplePair> eval_pairs, const EvalOptions& options);

enum class FusionKind { Dmsva, ConcatFusion, AttnFusion };

std::string_view to_string(FusionKind kind);
FusionKind parse_fusion_kind(std::string_view name);

/// Undecoupled fusion baselines mapping v to an auditory-space embedding.
///   ConcatFusion: out = P v, P is D x D (zero initialised).
///   AttnFusion:   single-head cross-attention of v over N trainable tokens T:
///                 w = softmax((T Wk^T) v / sqrt(D)), out = (T Wv^T)^T w.
class BaselineFusion {
public:
    BaselineFusion(FusionKind kind, std::size_t dim, std::size_t tokens, num::Rng& rng);

    FusionKind kind() const noexcept { return kind_; }
    std::size_t dim() const noexcept { return dim_; }
    Vector fuse(const Vector& v) const;

    /// Records the parameters as tape leaves (in params() order).
    std::vector<num::Var> bind(num::Tape& tape) const;
    /// Builds the fused output for v given leaves from bind().
    num::Var forward(num::Tape& tape, std::span<const num::Var> leaves, num::Var v) const;

    std::vector<num::Tensor2>& params() { return params_; }
    const std::vector<num::Tensor2>& params() const { return params_; }

private:
    FusionKind kind_;
    std::size_t dim_;
    std::vector<num::Tensor2> params_;
};

/// Trains a baseline on mean ||a - fuse(v)||^2 over the primary observations,
/// with the same optimizer, batches and step budget as train::fit.
BaselineFusion train_baseline(FusionKind kind, std::span<const SamplePair> dataset,
                              const train::TrainConfig& cfg, std::size_t tokens);

RecallFn baseline_recaller(const BaselineFusion& fusion);

/// Trains the requested kind on `dataset` and evaluates it on `eval_pairs`.
/// `slot_count` is the bank size for D-MSVA and the token count for AttnFusion.
EvalReport run_baseline(FusionKind kind, std::span<const SamplePair> dataset,
                        std::span<const SamplePair> eval_pairs, const synth::LatentWorld& world,
                        const train::TrainConfig& cfg, std::size_t slot_count,
                        const EvalOptions& options);

struct SweepRow {
    FusionKind kind = FusionKind::Dmsva;
    std::size_t slot_count = 0;
    EvalReport report;
};

/// One D-MSVA model per N, all with the same seed and budget.
std::vector<SweepRow> slot_sweep(std::span<const std::size_t> slot_counts,
                                 std::span<const SamplePair> dataset,
                                 std::span<const SamplePair> eval_pairs,
                                 const synth::LatentWorld& world, const train::TrainConfig& cfg,
                                 const EvalOptions& options);

/// Kinds x slot counts. ConcatFusion has no slot count and contributes one
/// row. Every row's metadata records the eval split hash and step budget.
std::vector<SweepRow> ablation_sweep(std::span<const FusionKind> kinds,
                                     std::span<const std::size_t> slot_counts,
                                     std::span<const SamplePair> dataset,
                                     std::span<const SamplePair> eval_pairs,
                                     const synth::LatentWorld& world,
                                     const train::TrainConfig& cfg, const EvalOptions& options);

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

/// FNV-1a over the serialized pairs; identifies an eval split.
std::uint64_t split_hash(std::span<const SamplePair> pairs);

} // namespace dmsva::eval
