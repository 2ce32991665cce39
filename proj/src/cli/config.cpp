#include <sstream>

#include "dmsva/cli.hpp"
#include "dmsva/errors.hpp"

namespace dmsva::cli {

using nlohmann::json;

json to_json(const RunConfig& c) {
    json kinds = json::array();
    for (auto k : c.ablate.kinds) kinds.push_back(std::string(eval::to_string(k)));
    json train = c.train;
    train["checkpoint_every"] = c.checkpoint_every;
    return json{
        {"world", c.world},
        {"data",
         {{"n_samples", c.data.n_samples},
          {"mode_mix", {c.data.mix.standard, c.data.mix.same_character, c.data.mix.diff_character}}}},
        {"model", {{"slot_count", c.slot_count}}},
        {"train", train},
        {"eval",
         {{"n_probe", c.eval.n_probe}, {"probe_seed", c.eval.probe_seed}, {"use_ema", c.eval.use_ema}}},
        {"ablate", {{"slot_counts", c.ablate.slot_counts}, {"kinds", kinds}}},
        {"gradcheck",
         {{"trials", c.gradcheck.trials},
          {"max_slots", c.gradcheck.max_slots},
          {"max_dim", c.gradcheck.max_dim},
          {"temperatures", c.gradcheck.temperatures}}},
        {"out", c.out},
    };
}

json default_config_json() {
    return to_json(RunConfig{});
}

namespace {

bool same_kind(const json& expected, const json& actual) {
    switch (expected.type()) {
    case json::value_t::number_unsigned: return actual.is_number_unsigned();
    case json::value_t::number_integer: return actual.is_number_integer();
    case json::value_t::number_float: return actual.is_number();
    case json::value_t::boolean: return actual.is_boolean();
    case json::value_t::string: return actual.is_string();
    case json::value_t::array: return actual.is_array();
    case json::value_t::object: return actual.is_object();
    default: return true;
    }
}

std::string describe(const json& expected) {
    switch (expected.type()) {
    case json::value_t::number_unsigned: return "a non-negative integer";
    case json::value_t::number_integer: return "an integer";
    case json::value_t::number_float: return "a number";
    case json::value_t::boolean: return "a boolean";
    case json::value_t::string: return "a string";
    case json::value_t::array: return "an array";
    case json::value_t::object: return "an object";
    default: return "a value";
    }
}

void type_check(const json& expected, const json& actual, const std::string& path) {
    if (!same_kind(expected, actual)) {
        throw ConfigError(path + ": expected " + describe(expected));
    }
    if (expected.is_object()) {
        for (auto it = actual.begin(); it != actual.end(); ++it) {
            const std::string child = path.empty() ? it.key() : path + "." + it.key();
            if (!expected.contains(it.key())) {
                throw ConfigError(child + ": unknown field");
            }
            type_check(expected.at(it.key()), it.value(), child);
        }
    } else if (expected.is_array() && !expected.empty()) {
        for (std::size_t i = 0; i < actual.size(); ++i) {
            type_check(expected.front(), actual[i], path + "[" + std::to_string(i) + "]");
        }
    }
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
}

RunConfig from_resolved(const json& j) {
    RunConfig c;
    j.at("world").get_to(c.world);
    j.at("data").at("n_samples").get_to(c.data.n_samples);
    const auto& mix = j.at("data").at("mode_mix");
    require(mix.size() == 3, "data.mode_mix: expected [standard, same_char, diff_char]");
    c.data.mix = {mix[0].get<double>(), mix[1].get<double>(), mix[2].get<double>()};
    j.at("model").at("slot_count").get_to(c.slot_count);
    j.at("train").get_to(c.train);
    j.at("train").at("checkpoint_every").get_to(c.checkpoint_every);
    j.at("eval").at("n_probe").get_to(c.eval.n_probe);
    j.at("eval").at("probe_seed").get_to(c.eval.probe_seed);
    j.at("eval").at("use_ema").get_to(c.eval.use_ema);
    j.at("ablate").at("slot_counts").get_to(c.ablate.slot_counts);
    c.ablate.kinds.clear();
    for (const auto& k : j.at("ablate").at("kinds")) {
        c.ablate.kinds.push_back(eval::parse_fusion_kind(k.get<std::string>()));
    }
    j.at("gradcheck").at("trials").get_to(c.gradcheck.trials);
    j.at("gradcheck").at("max_slots").get_to(c.gradcheck.max_slots);
    j.at("gradcheck").at("max_dim").get_to(c.gradcheck.max_dim);
    j.at("gradcheck").at("temperatures").get_to(c.gradcheck.temperatures);
    j.at("out").get_to(c.out);
    return c;
}

void validate(const RunConfig& c) {
    c.world.validate();
    c.train.validate();
    require(c.data.n_samples >= 1, "data.n_samples: must be >= 1");
    try {
        synth::mode_counts(c.data.n_samples, c.data.mix);
    } catch (const InvalidProportions& e) {
        throw ConfigError(std::string("data.mode_mix: ") + e.what());
    }
    require(c.slot_count >= 1, "model.slot_count: must be >= 1");
    require(c.eval.n_probe >= eval::kMinProbes, "eval.n_probe: must be >= 50");
    for (std::size_t n : c.ablate.slot_counts) {
        require(n >= 1, "ablate.slot_counts: every N must be >= 1");
    }
    require(c.gradcheck.trials >= 1, "gradcheck.trials: must be >= 1");
    require(c.gradcheck.max_slots >= 1, "gradcheck.max_slots: must be >= 1");
    require(c.gradcheck.max_dim >= 2, "gradcheck.max_dim: must be >= 2");
    for (double t : c.gradcheck.temperatures) {
        require(t > 0.0, "gradcheck.temperatures: every temperature must be > 0");
    }
    require(!c.out.empty(), "out: must be a non-empty path");
}

} // namespace

json parse_override_value(const std::string& text) {
    json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) {
        return json(text);
    }
    return value;
}

RunConfig resolve_config(const json& file,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
    const json defaults = default_config_json();
    json merged = defaults;
    if (!file.is_null()) {
        type_check(defaults, file, "");
        merged.merge_patch(file);
    }
    for (const auto& [path, text] : overrides) {
        json* node = &merged;
        std::istringstream parts(path);
        std::string key;
        while (std::getline(parts, key, '.')) {
            if (!node->is_object() || !node->contains(key)) {
                throw ConfigError(path + ": unknown field");
            }
            node = &(*node)[key];
        }
        *node = parse_override_value(text);
    }
    type_check(defaults, merged, "");
    RunConfig cfg = from_resolved(merged);
    validate(cfg);
    return cfg;
}

} // namespace dmsva::cli
