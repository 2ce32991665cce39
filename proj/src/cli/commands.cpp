#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dmsva/checkpoint.hpp"
#include "dmsva/cli.hpp"
#include "dmsva/errors.hpp"
#include "dmsva/gradcheck.hpp"

namespace dmsva::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> extras;
};

void add_common(CLI::App& cmd, CommonArgs& args) {
    cmd.add_option("--config", args.config_path, "Config file (JSON)");
    cmd.add_option("--seed", args.seed, "Seed for both the world and training");
    cmd.add_option("--out", args.out, "Output directory");
    cmd.allow_extras();
}

RunConfig load_config(const CommonArgs& args) {
    json file;
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        if (!in) throw ConfigError("--config: cannot read " + args.config_path);
        try {
            file = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("--config: " + std::string(e.what()));
        }
    }
    std::vector<std::pair<std::string, std::string>> overrides;
    for (std::size_t i = 0; i < args.extras.size(); ++i) {
        const std::string& key = args.extras[i];
        if (key.rfind("--", 0) != 0 || key.size() <= 2) {
            throw ConfigError("unexpected argument '" + key + "'");
        }
        if (i + 1 >= args.extras.size()) {
            throw ConfigError(key.substr(2) + ": missing value");
        }
        overrides.emplace_back(key.substr(2), args.extras[++i]);
    }
    if (args.seed) {
        overrides.emplace_back("world.seed", std::to_string(*args.seed));
        overrides.emplace_back("train.seed", std::to_string(*args.seed));
    }
    if (!args.out.empty()) {
        overrides.emplace_back("out", json(args.out).dump());
    }
    return resolve_config(file, overrides);
}

/// Creates the output directory and writes the resolved config into it.
void prepare_out(const RunConfig& cfg) {
    const fs::path dir(cfg.out);
    fs::create_directories(dir);
    std::ofstream echo(dir / "config.resolved.json", std::ios::binary);
    echo << to_json(cfg).dump(2) << '\n';
}

/// Config snapshot stored in checkpoints; excludes the output path so that
/// identical runs in different directories produce identical bytes.
json snapshot(const RunConfig& cfg) {
    json j = to_json(cfg);
    j.erase("out");
    return j;
}

num::Rng data_rng(const synth::WorldSpec& w) { return num::Rng::substream(w.seed, 1); }
num::Rng eval_rng(const synth::WorldSpec& w) { return num::Rng::substream(w.seed, 2); }

std::string fmt(double x) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

int cmd_gen(const RunConfig& cfg, std::ostream& out) {
    const fs::path dir(cfg.out);
    const synth::LatentWorld world = synth::build_world(cfg.world);
    num::Rng rng = data_rng(cfg.world);
    const synth::Dataset train = synth::make_dataset(world, cfg.data.n_samples, cfg.data.mix, rng);
    num::Rng grid_rng = eval_rng(cfg.world);
    const synth::Dataset held_out = synth::make_eval_grid(world, grid_rng);
    synth::save_dataset(dir / "dataset.txt", train);
    synth::save_dataset(dir / "eval.txt", held_out);
    const auto& c = train.manifest.counts;
    out << "wrote " << (dir / "dataset.txt").string() << " (" << train.pairs.size()
        << " pairs: standard=" << c[0] << " same_char_diff_env=" << c[1]
        << " diff_char_same_env=" << c[2] << ") and " << (dir / "eval.txt").string() << " ("
        << held_out.pairs.size() << " pairs)\n";
    return kOk;
}

void write_loss_row(std::ostream& csv, std::uint64_t step, const LossBreakdown& l) {
    csv << step << ',' << fmt(l.rec) << ',' << fmt(l.align) << ',' << fmt(l.imi) << ','
        << fmt(l.timbre_c) << ',' << fmt(l.env_c) << ',' << fmt(l.total) << '\n';
}

int cmd_train(const RunConfig& cfg, const std::string& dataset_path, const std::string& resume,
              std::ostream& out, std::ostream& err) {
    if (dataset_path.empty() || !fs::exists(dataset_path)) {
        err << "error: dataset not found: '" << dataset_path << "'\n";
        return kInputError;
    }
    const fs::path dir(cfg.out);
    const synth::Dataset data = synth::load_dataset(dataset_path);
    if (data.pairs.empty()) throw FormatError("dataset " + dataset_path + " is empty");
    const std::size_t dim = data.pairs.front().primary.v.dim();

    DmsvaModel model;
    train::TrainerState state;
    if (!resume.empty()) {
        train::Checkpoint ckpt = train::load_checkpoint(resume);
        if (ckpt.model.dim() != dim || ckpt.model.slot_count() != cfg.slot_count) {
            throw ConfigError("--resume: checkpoint is " + std::to_string(ckpt.model.slot_count()) +
                              "x" + std::to_string(ckpt.model.dim()) + ", run expects " +
                              std::to_string(cfg.slot_count) + "x" + std::to_string(dim));
        }
        model = std::move(ckpt.model);
        state = std::move(ckpt.state);
    } else {
        model = train::init_model(cfg.train, cfg.slot_count, dim);
        state = train::initial_state(model);
    }

    fs::create_directories(dir / "checkpoints");
    std::ofstream csv(dir / "loss.csv", std::ios::binary);
    csv << "step,rec,align,imi,timbre_c,env_c,total\n";
    const json snap = snapshot(cfg);

    auto on_step = [&](const DmsvaModel& m, const train::TrainerState& s, const LossBreakdown& l) {
        write_loss_row(csv, s.step - 1, l);
        if (cfg.checkpoint_every > 0 && s.step % cfg.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "step_%06llu.ckpt",
                          static_cast<unsigned long long>(s.step));
            train::save_checkpoint(dir / "checkpoints" / name,
                                   {train::kCheckpointVersion, m, s, snap});
        }
    };
    train::FitResult result;
    try {
        result = train::fit(std::move(model), data.pairs, cfg.train, std::move(state), on_step);
    } catch (const NonFiniteLoss& e) {
        err << "error: " << e.what() << '\n';
        return kNumericFailure;
    }
    train::save_checkpoint(dir / "final.ckpt",
                           {train::kCheckpointVersion, result.model, result.state, snap});
    out << "trained " << result.history.size() << " steps";
    if (!result.history.empty()) {
        out << ", final total loss " << fmt(result.history.back().total);
    }
    out << "; checkpoint " << (dir / "final.ckpt").string() << '\n';
    return kOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& dataset_path,
             bool oracle, std::ostream& out, std::ostream& err) {
    if (dataset_path.empty() || !fs::exists(dataset_path)) {
        err << "error: eval dataset not found: '" << dataset_path << "'\n";
        return kInputError;
    }
    if (!oracle && checkpoint.empty()) {
        err << "error: --checkpoint is required unless --oracle is given\n";
        return kInputError;
    }
    const fs::path dir(cfg.out);
    const synth::Dataset data = synth::load_dataset(dataset_path);
    const synth::LatentWorld world = synth::build_world(data.manifest.spec);
    const eval::EvalOptions options = cfg.eval_options();

    eval::EvalReport report;
    if (oracle) {
        const auto eval = eval::primaries(data.pairs);
        report.recall_at_1 = eval::cross_modal_recall(eval::copy_oracle(), eval, 1);
        report.recall_at_5 = eval::cross_modal_recall(eval::copy_oracle(), eval, 5);
        num::Rng rng(options.probe_seed);
        const auto m = eval::decoupling_margins(eval::prototype_oracle(world), world,
                                                options.n_probe, rng);
        report.timbre_margin = m.timbre;
        report.env_margin = m.env;
        report.metadata = {{"kind", "oracle"}, {"n_eval", eval.size()},
                           {"eval_split_hash", eval::split_hash(data.pairs)}};
    } else {
        const train::Checkpoint ckpt = train::load_checkpoint(checkpoint);
        const DmsvaModel& model = cfg.eval.use_ema ? ckpt.state.ema : ckpt.model;
        report = eval::evaluate_model(model, world, data.pairs, options);
        report.metadata["step"] = ckpt.state.step;
        report.metadata["weights"] = cfg.eval.use_ema ? "ema" : "raw";
    }

    std::ofstream(dir / "report.json", std::ios::binary) << json(report).dump(2) << '\n';
    std::ofstream(dir / "report.csv", std::ios::binary)
        << eval::report_csv_header() << '\n' << eval::report_csv_row(report) << '\n';
    auto opt = [](const std::optional<double>& x) { return x ? fmt(*x) : std::string("n/a"); };
    out << "recall@1=" << fmt(report.recall_at_1) << " recall@5=" << fmt(report.recall_at_5)
        << " mean_align_kl=" << opt(report.mean_align_kl)
        << " timbre_margin=" << opt(report.timbre_margin)
        << " env_margin=" << opt(report.env_margin) << '\n';
    return kOk;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const fs::path dir(cfg.out);
    const synth::LatentWorld world = synth::build_world(cfg.world);
    num::Rng rng = data_rng(cfg.world);
    const synth::Dataset train = synth::make_dataset(world, cfg.data.n_samples, cfg.data.mix, rng);
    num::Rng grid_rng = eval_rng(cfg.world);
    const synth::Dataset held_out = synth::make_eval_grid(world, grid_rng);

    std::vector<eval::SweepRow> rows;
    try {
        rows = eval::ablation_sweep(cfg.ablate.kinds, cfg.ablate.slot_counts, train.pairs,
                                    held_out.pairs, world, cfg.train, cfg.eval_options());
    } catch (const NonFiniteLoss& e) {
        err << "error: " << e.what() << '\n';
        return kNumericFailure;
    }
    {
        std::ofstream csv(dir / "ablation.csv", std::ios::binary);
        eval::write_sweep_csv(csv, rows);
    }
    json table = json::array();
    for (const auto& r : rows) {
        table.push_back({{"kind", eval::to_string(r.kind)}, {"slot_count", r.slot_count},
                         {"report", r.report}});
    }
    std::ofstream(dir / "ablation.json", std::ios::binary) << table.dump(2) << '\n';
    eval::write_sweep_csv(out, rows);
    return kOk;
}

int cmd_gradcheck(const RunConfig& cfg, const std::string& fault, std::ostream& out,
                  std::ostream& err) {
    check::GradcheckOptions options;
    options.trials = cfg.gradcheck.trials;
    options.max_slots = cfg.gradcheck.max_slots;
    options.max_dim = cfg.gradcheck.max_dim;
    options.temperatures = cfg.gradcheck.temperatures;
    options.weights = cfg.train.loss_weights;
    options.detach_teacher = cfg.train.detach_teacher;
    options.seed = cfg.train.seed;
    if (!fault.empty()) {
        bool found = false;
        for (LossComponent c : check::kAllComponents) {
            if (fault == to_string(c)) {
                options.sign_flip = c;
                found = true;
            }
        }
        if (!found) {
            err << "error: --inject-sign-flip: unknown component '" << fault << "'\n";
            return kInputError;
        }
    }
    const fs::path dir(cfg.out);
    const check::GradcheckReport report = check::run_gradcheck(options);
    const std::string text = report.summary();
    std::ofstream(dir / "gradcheck.txt", std::ios::binary) << text;
    (report.ok() ? out : err) << text;
    return report.ok() ? kOk : kVerificationFailure;
}

} // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Decoupled memory-bank cross-modal alignment: data generation, training, "
                 "evaluation, ablation and gradient checks"};
    app.name("dmsva");
    app.require_subcommand(1);

    CommonArgs common;
    std::string dataset, checkpoint, resume, fault;
    bool oracle = false;

    auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset and held-out grid");
    add_common(*gen, common);

    auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset");
    add_common(*train_cmd, common);
    train_cmd->add_option("--dataset", dataset, "Dataset file from `gen`");
    train_cmd->add_option("--resume", resume, "Checkpoint to resume from");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a held-out dataset");
    add_common(*eval_cmd, common);
    eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file");
    eval_cmd->add_option("--dataset", dataset, "Held-out dataset file");
    eval_cmd->add_flag("--oracle", oracle, "Evaluate the ground-truth oracle instead of a model");

    auto* ablate = app.add_subcommand("ablate", "Fusion-kind x slot-count sweep");
    add_common(*ablate, common);

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    add_common(*gradcheck, common);
    gradcheck->add_option("--inject-sign-flip", fault,
                          "Test fixture: negate the analytic gradient of a component (e.g. L_align)")
        ->group("");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kInputError;
    }

    try {
        CLI::App* cmd = app.get_subcommands().front();
        common.extras = cmd->remaining();
        const RunConfig cfg = load_config(common);
        prepare_out(cfg);
        if (cmd == gen) return cmd_gen(cfg, out);
        if (cmd == train_cmd) return cmd_train(cfg, dataset, resume, out, err);
        if (cmd == eval_cmd) return cmd_eval(cfg, checkpoint, dataset, oracle, out, err);
        if (cmd == ablate) return cmd_ablate(cfg, out, err);
        return cmd_gradcheck(cfg, fault, out, err);
    } catch (const NonFiniteLoss& e) {
        err << "error: " << e.what() << '\n';
        return kNumericFailure;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kInputError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kInputError;
    }
}

} // namespace dmsva::cli
