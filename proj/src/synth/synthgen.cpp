#include "dmsva/synthgen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "dmsva/errors.hpp"
#include "dmsva/num/ops.hpp"

namespace dmsva::synth {

void WorldSpec::validate() const {
    if (n_characters < 2) throw ConfigError("world.n_characters: must be >= 2");
    if (n_environments < 2) throw ConfigError("world.n_environments: must be >= 2");
    if (dim < 1) throw ConfigError("world.dim: must be >= 1");
    if (!(visual_noise_sigma >= 0.0) || !std::isfinite(visual_noise_sigma)) {
        throw ConfigError("world.visual_noise_sigma: must be finite and >= 0");
    }
    if (!(audio_noise_sigma >= 0.0) || !std::isfinite(audio_noise_sigma)) {
        throw ConfigError("world.audio_noise_sigma: must be finite and >= 0");
    }
    if (!std::isfinite(snr_db_lo) || !std::isfinite(snr_db_hi) || snr_db_lo > snr_db_hi) {
        throw ConfigError("world.mix_snr_db_range: need finite lo <= hi");
    }
}

void to_json(nlohmann::json& j, const WorldSpec& s) {
    j = nlohmann::json{{"n_characters", s.n_characters},
                       {"n_environments", s.n_environments},
                       {"dim", s.dim},
                       {"visual_noise_sigma", s.visual_noise_sigma},
                       {"audio_noise_sigma", s.audio_noise_sigma},
                       {"mix_snr_db_range", {s.snr_db_lo, s.snr_db_hi}},
                       {"linear_visual", s.linear_visual},
                       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, WorldSpec& s) {
    j.at("n_characters").get_to(s.n_characters);
    j.at("n_environments").get_to(s.n_environments);
    j.at("dim").get_to(s.dim);
    j.at("visual_noise_sigma").get_to(s.visual_noise_sigma);
    j.at("audio_noise_sigma").get_to(s.audio_noise_sigma);
    const auto& range = j.at("mix_snr_db_range");
    if (!range.is_array() || range.size() != 2) {
        throw ConfigError("world.mix_snr_db_range: expected [lo, hi]");
    }
    range[0].get_to(s.snr_db_lo);
    range[1].get_to(s.snr_db_hi);
    j.at("linear_visual").get_to(s.linear_visual);
    j.at("seed").get_to(s.seed);
}

namespace {

Vector random_unit(std::size_t dim, Rng& rng) {
    Vector v(dim);
    double n = 0.0;
    while (n <= num::kNormEpsilon) {
        for (std::size_t i = 0; i < dim; ++i) v[i] = rng.normal();
        n = num::norm2(v.values());
    }
    for (std::size_t i = 0; i < dim; ++i) v[i] /= n;
    return v;
}

bool pairwise_separated(const std::vector<const Vector*>& family) {
    for (std::size_t i = 0; i < family.size(); ++i) {
        for (std::size_t j = i + 1; j < family.size(); ++j) {
            if (std::abs(num::cosine_sim(*family[i], *family[j])) > kMaxPrototypeCos) {
                return false;
            }
        }
    }
    return true;
}

std::size_t other_than(std::size_t taken, std::size_t n, Rng& rng) {
    const std::size_t k = rng.below(n - 1);
    return k >= taken ? k + 1 : k;
}

} // namespace

LatentWorld build_world(const WorldSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t d = spec.dim;
    for (int attempt = 0; attempt < kMaxWorldAttempts; ++attempt) {
        LatentWorld w;
        w.spec = spec;
        for (std::size_t c = 0; c < spec.n_characters; ++c) w.timbre.push_back(random_unit(d, rng));
        for (std::size_t e = 0; e < spec.n_environments; ++e) w.sound.push_back(random_unit(d, rng));
        for (std::size_t c = 0; c < spec.n_characters; ++c) {
            w.visual_character.push_back(random_unit(d, rng));
        }
        for (std::size_t e = 0; e < spec.n_environments; ++e) {
            w.visual_environment.push_back(random_unit(d, rng));
        }

        std::vector<const Vector*> audio, visual;
        for (const auto& t : w.timbre) audio.push_back(&t);
        for (const auto& s : w.sound) audio.push_back(&s);
        for (const auto& p : w.visual_character) visual.push_back(&p);
        for (const auto& q : w.visual_environment) visual.push_back(&q);
        if (!pairwise_separated(audio) || !pairwise_separated(visual)) {
            continue;
        }

        w.visual_map = Tensor2(d, 2 * d);
        for (double& x : w.visual_map.values()) x = rng.normal();
        return w;
    }
    throw PrototypeCollapse("no separated prototype set after " +
                            std::to_string(kMaxWorldAttempts) + " attempts (dim " +
                            std::to_string(d) + ")");
}

double snr_gain(double snr_db) {
    return std::pow(10.0, -snr_db / 20.0);
}

Vector mix_audio(const LatentWorld& world, std::size_t character, std::size_t environment,
                 double snr_db) {
    const Vector& t = world.timbre.at(character);
    const Vector& s = world.sound.at(environment);
    const double g = snr_gain(snr_db);
    Vector a(t.dim());
    for (std::size_t i = 0; i < a.dim(); ++i) a[i] = t[i] + g * s[i];
    return a;
}

Vector render_visual(const LatentWorld& world, std::size_t character, std::size_t environment) {
    const Vector& p = world.visual_character.at(character);
    const Vector& q = world.visual_environment.at(environment);
    const std::size_t d = world.spec.dim;
    Vector v(d);
    for (std::size_t i = 0; i < d; ++i) {
        const auto row = world.visual_map.row(i);
        double x = 0.0;
        for (std::size_t j = 0; j < d; ++j) x += row[j] * p[j];
        for (std::size_t j = 0; j < d; ++j) x += row[d + j] * q[j];
        v[i] = world.spec.linear_visual ? x : std::tanh(x);
    }
    return v;
}

Observation observe(const LatentWorld& world, std::size_t character, std::size_t environment,
                    Rng& rng) {
    const WorldSpec& spec = world.spec;
    const double snr = rng.uniform(spec.snr_db_lo, spec.snr_db_hi);
    Observation o{render_visual(world, character, environment),
                  mix_audio(world, character, environment, snr), character, environment};
    for (std::size_t i = 0; i < o.v.dim(); ++i) o.v[i] += spec.visual_noise_sigma * rng.normal();
    for (std::size_t i = 0; i < o.a.dim(); ++i) o.a[i] += spec.audio_noise_sigma * rng.normal();
    return o;
}

SamplePair sample_pair(const LatentWorld& world, PairMode mode, Rng& rng) {
    const std::size_t nc = world.spec.n_characters;
    const std::size_t ne = world.spec.n_environments;
    const std::size_t c = rng.below(nc);
    const std::size_t e = rng.below(ne);
    SamplePair pair{observe(world, c, e, rng), mode, std::nullopt};
    switch (mode) {
    case PairMode::Standard:
        break;
    case PairMode::SameCharacterDiffEnv:
        pair.partner = observe(world, c, other_than(e, ne, rng), rng);
        break;
    case PairMode::DiffCharacterSameEnv:
        pair.partner = observe(world, other_than(c, nc, rng), e, rng);
        break;
    }
    return pair;
}

std::array<std::size_t, 3> mode_counts(std::size_t n_samples, const ModeMix& mix) {
    const auto p = mix.as_array();
    double total = 0.0;
    for (double x : p) {
        if (!std::isfinite(x) || x < 0.0) {
            throw InvalidProportions("mode proportions must be finite and non-negative");
        }
        total += x;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw InvalidProportions("mode proportions sum to " + std::to_string(total) +
                                 ", expected 1");
    }
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        const double exact = p[k] * static_cast<double>(n_samples);
        counts[k] = static_cast<std::size_t>(std::floor(exact));
        remainder[k] = exact - static_cast<double>(counts[k]);
        assigned += counts[k];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    // Ties go to the earlier mode.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return remainder[x] > remainder[y]; });
    for (std::size_t k = 0; assigned < n_samples; ++k, ++assigned) {
        ++counts[order[k % 3]];
    }
    return counts;
}

void to_json(nlohmann::json& j, const Manifest& m) {
    j = nlohmann::json{{"format", "dmsva-dataset"},
                       {"version", 1},
                       {"world", m.spec},
                       {"seed", m.seed},
                       {"n_samples", m.n_samples},
                       {"mode_mix", {m.mix.standard, m.mix.same_character, m.mix.diff_character}},
                       {"counts",
                        {{"standard", m.counts[0]},
                         {"same_char_diff_env", m.counts[1]},
                         {"diff_char_same_env", m.counts[2]}}}};
}

void from_json(const nlohmann::json& j, Manifest& m) {
    if (j.at("format").get<std::string>() != "dmsva-dataset" || j.at("version").get<int>() != 1) {
        throw FormatError("unsupported dataset manifest");
    }
    j.at("world").get_to(m.spec);
    j.at("seed").get_to(m.seed);
    j.at("n_samples").get_to(m.n_samples);
    const auto& mix = j.at("mode_mix");
    m.mix = {mix.at(0).get<double>(), mix.at(1).get<double>(), mix.at(2).get<double>()};
    const auto& counts = j.at("counts");
    m.counts = {counts.at("standard").get<std::size_t>(),
                counts.at("same_char_diff_env").get<std::size_t>(),
                counts.at("diff_char_same_env").get<std::size_t>()};
}

Dataset make_dataset(const LatentWorld& world, std::size_t n_samples, const ModeMix& mix,
                     Rng& rng) {
    Dataset out;
    out.manifest = {world.spec, rng.seed(), n_samples, mix, mode_counts(n_samples, mix)};

    std::vector<PairMode> modes;
    modes.reserve(n_samples);
    modes.insert(modes.end(), out.manifest.counts[0], PairMode::Standard);
    modes.insert(modes.end(), out.manifest.counts[1], PairMode::SameCharacterDiffEnv);
    modes.insert(modes.end(), out.manifest.counts[2], PairMode::DiffCharacterSameEnv);
    for (std::size_t i = modes.size(); i > 1; --i) {
        std::swap(modes[i - 1], modes[rng.below(i)]);
    }

    const std::uint64_t base = rng.next_u64();
    out.pairs.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        Rng sub = Rng::substream(base, i);
        out.pairs.push_back(sample_pair(world, modes[i], sub));
    }
    return out;
}

Dataset make_eval_grid(const LatentWorld& world, Rng& rng) {
    const std::size_t n = world.spec.n_characters * world.spec.n_environments;
    Dataset out;
    out.manifest = {world.spec, rng.seed(), n, ModeMix{}, {n, 0, 0}};
    const std::uint64_t base = rng.next_u64();
    for (std::size_t c = 0; c < world.spec.n_characters; ++c) {
        for (std::size_t e = 0; e < world.spec.n_environments; ++e) {
            Rng sub = Rng::substream(base, out.pairs.size());
            out.pairs.push_back({observe(world, c, e, sub), PairMode::Standard, std::nullopt});
        }
    }
    return out;
}

namespace {

void write_values(std::ostream& out, const Vector& v) {
    char buf[32];
    for (std::size_t i = 0; i < v.dim(); ++i) {
        if (i > 0) out << ' ';
        const auto res = std::to_chars(buf, buf + sizeof buf, v[i], std::chars_format::general, 17);
        out.write(buf, res.ptr - buf);
    }
}

void write_observation(std::ostream& out, const Observation& o) {
    out << o.character_id << '\t' << o.environment_id << '\t';
    write_values(out, o.v);
    out << '\t';
    write_values(out, o.a);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        parts.push_back(s.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return parts;
}

std::size_t parse_index(std::string_view s, std::size_t line) {
    std::size_t x = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw FormatError("line " + std::to_string(line) + ": bad id '" + std::string(s) + "'");
    }
    return x;
}

Vector parse_values(std::string_view s, std::size_t line) {
    std::vector<double> values;
    for (std::string_view tok : split(s, ' ')) {
        double x = 0.0;
        const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), x);
        if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size() || !std::isfinite(x)) {
            throw FormatError("line " + std::to_string(line) + ": bad value '" +
                              std::string(tok) + "'");
        }
        values.push_back(x);
    }
    return Vector(std::move(values));
}

Observation parse_observation(const std::vector<std::string_view>& f, std::size_t at,
                              std::size_t line) {
    Observation o{parse_values(f[at + 2], line), parse_values(f[at + 3], line),
                  parse_index(f[at], line), parse_index(f[at + 1], line)};
    if (o.v.dim() != o.a.dim()) {
        throw FormatError("line " + std::to_string(line) + ": v and a dims differ");
    }
    return o;
}

} // namespace

void write_pairs(std::ostream& out, const std::vector<SamplePair>& pairs) {
    for (const SamplePair& p : pairs) {
        out << to_string(p.mode) << '\t';
        write_observation(out, p.primary);
        if (p.partner) {
            out << '\t';
            write_observation(out, *p.partner);
        }
        out << '\n';
    }
}

std::vector<SamplePair> read_pairs(std::istream& in) {
    std::vector<SamplePair> pairs;
    std::string text;
    std::size_t line = 0;
    std::size_t dim = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.empty()) continue;
        const auto f = split(text, '\t');
        if (f.size() != 5 && f.size() != 9) {
            throw FormatError("line " + std::to_string(line) + ": expected 5 or 9 fields, got " +
                              std::to_string(f.size()));
        }
        SamplePair p;
        p.mode = parse_pair_mode(f[0]);
        p.primary = parse_observation(f, 1, line);
        if (f.size() == 9) p.partner = parse_observation(f, 5, line);
        if (!satisfies_mode_invariants(p)) {
            throw FormatError("line " + std::to_string(line) + ": pair violates mode constraints");
        }
        if (dim == 0) dim = p.primary.v.dim();
        if (p.primary.v.dim() != dim || (p.partner && p.partner->v.dim() != dim)) {
            throw FormatError("line " + std::to_string(line) + ": inconsistent embedding dim");
        }
        pairs.push_back(std::move(p));
    }
    return pairs;
}

std::filesystem::path manifest_path(const std::filesystem::path& dataset) {
    std::filesystem::path p = dataset;
    p += ".manifest.json";
    return p;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        write_pairs(out, dataset.pairs);
    }
    std::ofstream man(manifest_path(path), std::ios::binary);
    if (!man) throw std::runtime_error("cannot write " + manifest_path(path).string());
    man << nlohmann::json(dataset.manifest).dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read dataset " + path.string());
    Dataset out;
    out.pairs = read_pairs(in);
    std::ifstream man(manifest_path(path), std::ios::binary);
    if (!man) throw FormatError("missing manifest " + manifest_path(path).string());
    try {
        nlohmann::json::parse(man).get_to(out.manifest);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + manifest_path(path).string() + ": " + e.what());
    }
    return out;
}

} // namespace dmsva::synth
