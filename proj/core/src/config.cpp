#include "afb/error.hpp"
#include "afb/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>

namespace afb {

const char* errc_name(Errc code) noexcept
{
    switch (code) {
    case Errc::usage:
        return "usage";
    case Errc::io:
        return "io";
    case Errc::malformed_riff:
        return "malformed_riff";
    case Errc::unsupported_codec:
        return "unsupported_codec";
    case Errc::empty_audio:
        return "empty_audio";
    case Errc::bad_archive:
        return "bad_archive";
    case Errc::truncated:
        return "truncated";
    case Errc::checksum:
        return "checksum";
    case Errc::version_mismatch:
        return "version_mismatch";
    case Errc::variant_mismatch:
        return "variant_mismatch";
    case Errc::non_finite:
        return "non_finite";
    case Errc::negative_variance:
        return "negative_variance";
    case Errc::divergence:
        return "divergence";
    }
    return "unknown";
}

double relative_frobenius(const Matrix& a, const Matrix& b)
{
    if (!a.same_shape(b))
        throw std::invalid_argument("relative_frobenius: shape mismatch");
    double diff = 0.0, ref = 0.0;
    auto av = a.flat();
    auto bv = b.flat();
    for (std::size_t i = 0; i < av.size(); ++i) {
        diff += (av[i] - bv[i]) * (av[i] - bv[i]);
        ref += bv[i] * bv[i];
    }
    return ref > 0.0 ? std::sqrt(diff / ref) : std::sqrt(diff);
}

namespace {

std::string trim(const std::string& s)
{
    const char* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string::npos)
        return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

template <class T>
T integer(const std::string& key, const std::string& v)
{
    T out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
    return out;
}

double real(const std::string& key, const std::string& v)
{
    char* end = nullptr;
    double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size())
        throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
    return out;
}

std::vector<int> int_list(const std::string& key, const std::string& v)
{
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(integer<int>(key, trim(item)));
    return out;
}

} // namespace

KeyValues parse_key_values(const std::string& text)
{
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        if (key.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
        if (kv.count(key))
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

KeyValues read_key_values(const std::filesystem::path& path)
{
    auto bytes = read_file(path);
    return parse_key_values(std::string(bytes.begin(), bytes.end()));
}

FilterbankSpec apply_bank_keys(FilterbankSpec spec, const KeyValues& kv, std::vector<std::string>* consumed)
{
    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> setters{
        {"rate", [&](auto& k, auto& v) { spec.rate = integer<int>(k, v); }},
        {"fmin", [&](auto& k, auto& v) { spec.f_min = real(k, v); }},
        {"bins", [&](auto& k, auto& v) { spec.n_bins = integer<std::size_t>(k, v); }},
        {"bpo", [&](auto& k, auto& v) { spec.n_bpo = integer<std::size_t>(k, v); }},
        {"gamma",
         [&](auto& k, auto& v) {
             if (v == "erb")
                 spec.gamma.reset();
             else
                 spec.gamma = real(k, v);
         }},
        {"hop", [&](auto& k, auto& v) { spec.hop = integer<std::size_t>(k, v); }},
        {"variant", [&](auto&, auto& v) { spec.variant = parse_variant(v); }},
        {"init", [&](auto&, auto& v) { spec.init = parse_init(v); }},
        {"harmonics", [&](auto& k, auto& v) { spec.harmonics = int_list(k, v); }},
        {"seed", [&](auto& k, auto& v) { spec.seed = integer<std::uint64_t>(k, v); }},
    };
    for (const auto& [key, value] : kv) {
        auto it = setters.find(key);
        if (it == setters.end())
            continue;
        it->second(key, value);
        if (consumed)
            consumed->push_back(key);
    }
    return spec;
}

TrainConfig train_config_from(const KeyValues& kv)
{
    TrainConfig cfg;
    KeyValues bank_kv;
    for (const auto& [k, v] : kv) {
        if (k.rfind("bank.", 0) == 0)
            bank_kv[k.substr(5)] = v;
    }
    std::vector<std::string> used;
    cfg.bank = apply_bank_keys(cfg.bank, bank_kv, &used);
    for (const auto& [k, v] : bank_kv) {
        if (std::find(used.begin(), used.end(), k) == used.end())
            throw std::invalid_argument("config: unknown key 'bank." + k + "'");
        if (k == "variant" || k == "init")
            throw std::invalid_argument("config: 'bank." + k + "' is set by the experiment id");
    }
    cfg.synth.rate = cfg.bank.rate;
    cfg.synth.hop = cfg.bank.hop;

    using Setter = std::function<void(const std::string&, const std::string&)>;
    SynthSpec& s = cfg.synth;
    const std::map<std::string, Setter> setters{
        {"experiment", [&](auto&, auto& v) { cfg.experiment = v; }},
        {"batch", [&](auto& k, auto& v) { cfg.batch_size = integer<std::size_t>(k, v); }},
        {"steps", [&](auto& k, auto& v) { cfg.steps = integer<std::size_t>(k, v); }},
        {"lr", [&](auto& k, auto& v) { cfg.lr = real(k, v); }},
        {"filter_lr", [&](auto& k, auto& v) { cfg.filter_lr = real(k, v); }},
        {"beta1", [&](auto& k, auto& v) { cfg.beta1 = real(k, v); }},
        {"beta2", [&](auto& k, auto& v) { cfg.beta2 = real(k, v); }},
        {"adam_epsilon", [&](auto& k, auto& v) { cfg.adam_epsilon = real(k, v); }},
        {"kl_scale", [&](auto& k, auto& v) { cfg.kl_scale = real(k, v); }},
        {"log_var_init", [&](auto& k, auto& v) { cfg.log_var_init = real(k, v); }},
        {"bernoulli_rate", [&](auto& k, auto& v) { cfg.bernoulli_rate = real(k, v); }},
        {"gaussian_log_var", [&](auto& k, auto& v) { cfg.gaussian_log_var = real(k, v); }},
        {"seed", [&](auto& k, auto& v) { cfg.seed = integer<std::uint64_t>(k, v); }},
        {"init_seed", [&](auto& k, auto& v) { cfg.init_seed = integer<std::uint64_t>(k, v); }},
        {"eval_every", [&](auto& k, auto& v) { cfg.eval_every = integer<std::size_t>(k, v); }},
        {"eval_clips", [&](auto& k, auto& v) { cfg.eval_clips = integer<std::size_t>(k, v); }},
        {"prune_threshold", [&](auto& k, auto& v) { cfg.prune_threshold = real(k, v); }},
        {"decision_threshold", [&](auto& k, auto& v) { cfg.decision_threshold = real(k, v); }},
        {"synth.pitches", [&](auto& k, auto& v) { s.n_pitches = integer<std::size_t>(k, v); }},
        {"synth.lowest_midi", [&](auto& k, auto& v) { s.lowest_midi = integer<int>(k, v); }},
        {"synth.polyphony", [&](auto& k, auto& v) { s.max_polyphony = integer<std::size_t>(k, v); }},
        {"synth.note_rate", [&](auto& k, auto& v) { s.note_rate = real(k, v); }},
        {"synth.min_note", [&](auto& k, auto& v) { s.min_note = real(k, v); }},
        {"synth.max_note", [&](auto& k, auto& v) { s.max_note = real(k, v); }},
        {"synth.min_decay", [&](auto& k, auto& v) { s.min_decay = real(k, v); }},
        {"synth.max_decay", [&](auto& k, auto& v) { s.max_decay = real(k, v); }},
        {"synth.max_inharmonicity", [&](auto& k, auto& v) { s.max_inharmonicity = real(k, v); }},
        {"synth.harmonics", [&](auto& k, auto& v) { s.n_harmonics = integer<std::size_t>(k, v); }},
        {"synth.rolloff_db", [&](auto& k, auto& v) { s.rolloff_db = real(k, v); }},
        {"synth.noise_floor_db", [&](auto& k, auto& v) { s.noise_floor_db = real(k, v); }},
        {"synth.min_amplitude", [&](auto& k, auto& v) { s.min_amplitude = real(k, v); }},
        {"synth.max_amplitude", [&](auto& k, auto& v) { s.max_amplitude = real(k, v); }},
        {"synth.duration", [&](auto& k, auto& v) { s.duration = real(k, v); }},
    };
    for (const auto& [key, value] : kv) {
        if (key.rfind("bank.", 0) == 0)
            continue;
        auto it = setters.find(key);
        if (it == setters.end())
            throw std::invalid_argument("config: unknown key '" + key + "'");
        it->second(key, value);
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> serialize_feature_map(const FeatureMap& map)
{
    std::ostringstream h;
    h << "AFM1 bins=" << map.n_bins() << " frames=" << map.n_frames() << " hop=" << map.hop
      << " rate=" << map.rate << " kind=" << to_string(map.kind) << " dtype=f64le\n";
    const std::string header = h.str();
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(header.size() + 8 * map.values.size());
    for (double v : map.values.flat()) {
        std::uint64_t u;
        std::memcpy(&u, &v, 8);
        for (int i = 0; i < 8; ++i)
            out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
    return out;
}

FeatureMap parse_feature_map(std::span<const std::uint8_t> bytes)
{
    auto nl = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
    if (nl == bytes.end())
        throw Error(Errc::bad_archive, "feature map: missing header line");
    std::istringstream h(std::string(bytes.begin(), nl));
    std::string magic;
    h >> magic;
    if (magic != "AFM1")
        throw Error(Errc::bad_archive, "feature map: bad magic");
    KeyValues kv;
    std::string field;
    while (h >> field) {
        auto eq = field.find('=');
        if (eq == std::string::npos)
            throw Error(Errc::bad_archive, "feature map: malformed header field '" + field + "'");
        kv[field.substr(0, eq)] = field.substr(eq + 1);
    }
    FeatureMap map;
    std::size_t bins = 0, frames = 0;
    try {
        bins = integer<std::size_t>("bins", kv.at("bins"));
        frames = integer<std::size_t>("frames", kv.at("frames"));
        map.hop = integer<std::size_t>("hop", kv.at("hop"));
        map.rate = integer<int>("rate", kv.at("rate"));
        map.kind = parse_feature_kind(kv.at("kind"));
        if (kv.at("dtype") != "f64le")
            throw std::invalid_argument("unsupported dtype");
    } catch (const std::exception& e) {
        throw Error(Errc::bad_archive, std::string("feature map header: ") + e.what());
    }
    auto body = bytes.subspan(static_cast<std::size_t>(nl - bytes.begin()) + 1);
    if (body.size() != bins * frames * 8)
        throw Error(Errc::truncated, "feature map: payload size does not match bins x frames");
    map.values = Matrix(bins, frames);
    auto flat = map.values.flat();
    for (std::size_t i = 0; i < flat.size(); ++i) {
        std::uint64_t u = 0;
        for (int b = 0; b < 8; ++b)
            u |= static_cast<std::uint64_t>(body[8 * i + static_cast<std::size_t>(b)]) << (8 * b);
        std::memcpy(&flat[i], &u, 8);
    }
    return map;
}

void write_feature_map(const std::filesystem::path& path, const FeatureMap& map)
{
    write_file_atomic(path, serialize_feature_map(map));
}

FeatureMap read_feature_map(const std::filesystem::path& path) { return parse_feature_map(read_file(path)); }

} // namespace afb
