#pragma once

// Experiment plumbing: flat key=value configs, seeds, manifests, CSV/JSON
// outputs and the work behind each CLI subcommand.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "acllft/approx.hpp"
#include "acllft/central.hpp"
#include "acllft/envs.hpp"
#include "acllft/error.hpp"
#include "acllft/marl.hpp"
#include "acllft/spectral.hpp"
#include "acllft/theory.hpp"

namespace acllft::harness {

namespace fs = std::filesystem;

inline constexpr std::string_view kVersion = "acllft 0.1.0";

[[nodiscard]] inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

[[nodiscard]] inline std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

/// Shortest round-trippable-enough decimal form used by every CSV.
[[nodiscard]] inline std::string fmt(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", value);
    return buf;
}

// ---------------------------------------------------------------------------
// Text parsing

namespace detail {

inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return out;
}

inline double parse_double(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    acllft::detail::require(used == value.size() && !value.empty() && std::isfinite(out),
                            "config: '" + key + "' expects a number, got '" + value + "'");
    return out;
}

inline long long parse_integer(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    long long out = 0;
    try {
        out = std::stoll(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    acllft::detail::require(used == value.size() && !value.empty(),
                            "config: '" + key + "' expects an integer, got '" + value + "'");
    return out;
}

inline std::size_t parse_count(const std::string& key, const std::string& value) {
    const auto v = parse_integer(key, value);
    acllft::detail::require(v >= 0, "config: '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") {
        return true;
    }
    if (value == "false" || value == "0" || value == "no") {
        return false;
    }
    throw ValidationError("config: '" + key + "' expects true/false, got '" + value + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
    std::vector<T> out;
    if (value.empty()) {
        return out;
    }
    for (const auto& item : split(value, ',')) {
        const auto v = parse_integer(key, item);
        if constexpr (std::is_unsigned_v<T>) {
            acllft::detail::require(v >= 0, "config: '" + key + "' entries must be non-negative");
        }
        out.push_back(static_cast<T>(v));
    }
    return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i > 0) {
            out += ",";
        }
        out += std::to_string(values[i]);
    }
    return out;
}

}  // namespace detail

/// Lines of `key = value`; `#` starts a comment; blank lines ignored.
[[nodiscard]] inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text,
                                                                                      const std::string& source) {
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto end = text.find('\n', start);
        std::string_view line = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        const auto trimmed = detail::trim(line);
        if (!trimmed.empty()) {
            const auto eq = trimmed.find('=');
            acllft::detail::require(eq != std::string::npos, source + ":" + std::to_string(line_no) +
                                                                 ": expected 'key = value', got '" + trimmed + "'");
            auto key = detail::trim(std::string_view(trimmed).substr(0, eq));
            auto value = detail::trim(std::string_view(trimmed).substr(eq + 1));
            acllft::detail::require(!key.empty(), source + ":" + std::to_string(line_no) + ": empty key");
            out.emplace_back(std::move(key), std::move(value));
        }
        if (end == std::string_view::npos) {
            break;
        }
        start = end + 1;
    }
    return out;
}

[[nodiscard]] inline std::string read_text_file(const fs::path& path, std::string_view what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open " + std::string(what) + " '" + path.string() + "': file not found or unreadable");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
    std::string env = "spread";
    envs::SpreadConfig spread{};
    marl::TrainerConfig trainer{};
    theory::RegretConfig theory{};
    std::size_t theory_csv_stride = 1;
    std::size_t spectral_m = 2;
    spectral::WindowMode spectral_mode = spectral::WindowMode::exact;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::string out = "runs";
    std::string tag = "default";
    std::vector<int> compare_lengths{0, 1, 2, 4};
    double compare_window = 0.1;

    void validate() const {
        acllft::detail::require(env == "spread", "config: env must be 'spread'");
        acllft::detail::require(!seeds.empty(), "config: seeds must not be empty");
        acllft::detail::require(compare_window > 0.0 && compare_window <= 1.0, "config: compare.window must lie in (0, 1]");
        acllft::detail::require(theory_csv_stride >= 1, "config: theory.csv_stride must be positive");
        (void)envs::SpreadEnv(spread);
        trainer.validate();
        theory.validate();
    }

    [[nodiscard]] std::string method() const {
        return trainer.adaptive() ? "adaptive" : "fixed_" + std::to_string(trainer.fixed_length);
    }
};

struct ConfigField {
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
    bool hashed = true;
};

[[nodiscard]] inline const std::vector<ConfigField>& config_fields() {
    using C = ExperimentConfig;
    using detail::parse_count;
    using detail::parse_double;
    const auto num = [](double v) { return fmt(v); };
    static const std::vector<ConfigField> fields = {
        {"env", [](C& c, const std::string& v) { c.env = v; }, [](const C& c) { return c.env; }},
        {"tag", [](C& c, const std::string& v) { c.tag = v; }, [](const C& c) { return c.tag; }},
        {"seeds", [](C& c, const std::string& v) { c.seeds = detail::parse_list<std::uint64_t>("seeds", v); },
         [](const C& c) { return detail::join(c.seeds); }, false},
        {"out", [](C& c, const std::string& v) { c.out = v; }, [](const C& c) { return c.out; }, false},

        {"spread.agents", [](C& c, const std::string& v) { c.spread.agents = static_cast<int>(parse_count("spread.agents", v)); },
         [](const C& c) { return std::to_string(c.spread.agents); }},
        {"spread.landmarks", [](C& c, const std::string& v) { c.spread.landmarks = static_cast<int>(parse_count("spread.landmarks", v)); },
         [](const C& c) { return std::to_string(c.spread.landmarks); }},
        {"spread.episode_length", [](C& c, const std::string& v) { c.spread.episode_length = static_cast<int>(parse_count("spread.episode_length", v)); },
         [](const C& c) { return std::to_string(c.spread.episode_length); }},
        {"spread.agent_radius", [](C& c, const std::string& v) { c.spread.agent_radius = parse_double("spread.agent_radius", v); },
         [num](const C& c) { return num(c.spread.agent_radius); }},

        {"train.episodes", [](C& c, const std::string& v) { c.trainer.episodes = parse_count("train.episodes", v); },
         [](const C& c) { return std::to_string(c.trainer.episodes); }},
        {"train.batch_episodes", [](C& c, const std::string& v) { c.trainer.batch_episodes = parse_count("train.batch_episodes", v); },
         [](const C& c) { return std::to_string(c.trainer.batch_episodes); }},
        {"train.eval_interval", [](C& c, const std::string& v) { c.trainer.eval_interval = parse_count("train.eval_interval", v); },
         [](const C& c) { return std::to_string(c.trainer.eval_interval); }},
        {"train.eval_episodes", [](C& c, const std::string& v) { c.trainer.eval_episodes = parse_count("train.eval_episodes", v); },
         [](const C& c) { return std::to_string(c.trainer.eval_episodes); }},
        {"train.gamma", [](C& c, const std::string& v) { c.trainer.gamma = parse_double("train.gamma", v); },
         [num](const C& c) { return num(c.trainer.gamma); }},
        {"train.lambda", [](C& c, const std::string& v) { c.trainer.lambda = parse_double("train.lambda", v); },
         [num](const C& c) { return num(c.trainer.lambda); }},
        {"train.clip", [](C& c, const std::string& v) { c.trainer.clip = parse_double("train.clip", v); },
         [num](const C& c) { return num(c.trainer.clip); }},
        {"train.epochs", [](C& c, const std::string& v) { c.trainer.decentralized_epochs = static_cast<int>(parse_count("train.epochs", v)); },
         [](const C& c) { return std::to_string(c.trainer.decentralized_epochs); }},
        {"train.entropy", [](C& c, const std::string& v) { c.trainer.entropy_coef = parse_double("train.entropy", v); },
         [num](const C& c) { return num(c.trainer.entropy_coef); }},
        {"train.learning_rate", [](C& c, const std::string& v) { c.trainer.learning_rate = parse_double("train.learning_rate", v); },
         [num](const C& c) { return num(c.trainer.learning_rate); }},
        {"train.hidden", [](C& c, const std::string& v) { c.trainer.hidden = detail::parse_list<int>("train.hidden", v); },
         [](const C& c) { return detail::join(c.trainer.hidden); }},

        {"central.slots", [](C& c, const std::string& v) { c.trainer.central.schedule.slots = parse_count("central.slots", v); },
         [](const C& c) { return std::to_string(c.trainer.central.schedule.slots); }},
        {"central.k0", [](C& c, const std::string& v) { c.trainer.central.schedule.k0 = parse_count("central.k0", v); },
         [](const C& c) { return std::to_string(c.trainer.central.schedule.k0); }},
        {"central.threshold", [](C& c, const std::string& v) { c.trainer.central.schedule.threshold = parse_count("central.threshold", v); },
         [](const C& c) { return std::to_string(c.trainer.central.schedule.threshold); }},
        {"central.length_cap_scale", [](C& c, const std::string& v) { c.trainer.central.schedule.length_cap_scale = parse_double("central.length_cap_scale", v); },
         [num](const C& c) { return num(c.trainer.central.schedule.length_cap_scale); }},
        {"central.update", [](C& c, const std::string& v) { c.trainer.central.update.mode = central::parse_update_mode(v); },
         [](const C& c) { return std::string(c.trainer.central.update.mode == central::UpdateMode::td ? "td" : "ppo"); }},
        {"central.epochs", [](C& c, const std::string& v) { c.trainer.central_epochs = static_cast<int>(parse_count("central.epochs", v)); },
         [](const C& c) { return std::to_string(c.trainer.central_epochs); }},
        {"central.hidden", [](C& c, const std::string& v) { c.trainer.central.hidden = detail::parse_list<int>("central.hidden", v); },
         [](const C& c) { return detail::join(c.trainer.central.hidden); }},
        {"central.fixed_length", [](C& c, const std::string& v) { c.trainer.fixed_length = static_cast<int>(detail::parse_integer("central.fixed_length", v)); },
         [](const C& c) { return std::to_string(c.trainer.fixed_length); }},
        {"central.context", [](C& c, const std::string& v) { c.trainer.context_mode = central::parse_context_mode(v); },
         [](const C& c) { return std::string(c.trainer.context_mode == central::ContextMode::lowpass ? "lowpass" : "time_domain"); }},
        {"attention.heads", [](C& c, const std::string& v) { c.trainer.attention_heads = parse_count("attention.heads", v); },
         [](const C& c) { return std::to_string(c.trainer.attention_heads); }},
        {"attention.key_dim", [](C& c, const std::string& v) { c.trainer.attention_key_dim = parse_count("attention.key_dim", v); },
         [](const C& c) { return std::to_string(c.trainer.attention_key_dim); }},

        {"theory.horizon", [](C& c, const std::string& v) { c.theory.horizon = parse_count("theory.horizon", v); },
         [](const C& c) { return std::to_string(c.theory.horizon); }},
        {"theory.period", [](C& c, const std::string& v) { c.theory.schedule.period = parse_count("theory.period", v); },
         [](const C& c) { return std::to_string(c.theory.schedule.period); }},
        {"theory.fast_mean_reversion", [](C& c, const std::string& v) { c.theory.schedule.fast_mean_reversion = parse_double("theory.fast_mean_reversion", v); },
         [num](const C& c) { return num(c.theory.schedule.fast_mean_reversion); }},
        {"theory.mean_reversion", [](C& c, const std::string& v) { c.theory.schedule.base.mean_reversion = parse_double("theory.mean_reversion", v); },
         [num](const C& c) { return num(c.theory.schedule.base.mean_reversion); }},
        {"theory.diffusion", [](C& c, const std::string& v) { c.theory.schedule.base.diffusion = parse_double("theory.diffusion", v); },
         [num](const C& c) { return num(c.theory.schedule.base.diffusion); }},
        {"theory.observation_noise", [](C& c, const std::string& v) { c.theory.schedule.base.observation_noise = parse_double("theory.observation_noise", v); },
         [num](const C& c) { return num(c.theory.schedule.base.observation_noise); }},
        {"theory.dt", [](C& c, const std::string& v) { c.theory.schedule.base.dt = parse_double("theory.dt", v); },
         [num](const C& c) { return num(c.theory.schedule.base.dt); }},
        {"theory.fixed_lengths", [](C& c, const std::string& v) { c.theory.fixed_lengths = detail::parse_list<std::size_t>("theory.fixed_lengths", v); },
         [](const C& c) { return detail::join(c.theory.fixed_lengths); }},
        {"theory.oracle", [](C& c, const std::string& v) { c.theory.include_oracle = detail::parse_bool("theory.oracle", v); },
         [](const C& c) { return std::string(c.theory.include_oracle ? "true" : "false"); }},
        {"theory.learned", [](C& c, const std::string& v) { c.theory.include_learned = detail::parse_bool("theory.learned", v); },
         [](const C& c) { return std::string(c.theory.include_learned ? "true" : "false"); }},
        {"theory.history", [](C& c, const std::string& v) { c.theory.learned.history = parse_count("theory.history", v); },
         [](const C& c) { return std::to_string(c.theory.learned.history); }},
        {"theory.k0", [](C& c, const std::string& v) { c.theory.learned.k0 = parse_count("theory.k0", v); },
         [](const C& c) { return std::to_string(c.theory.learned.k0); }},
        {"theory.hidden", [](C& c, const std::string& v) { c.theory.learned.hidden = detail::parse_list<int>("theory.hidden", v); },
         [](const C& c) { return detail::join(c.theory.learned.hidden); }},
        {"theory.update_interval", [](C& c, const std::string& v) { c.theory.learned.update_interval = parse_count("theory.update_interval", v); },
         [](const C& c) { return std::to_string(c.theory.learned.update_interval); }},
        {"theory.replay_window", [](C& c, const std::string& v) { c.theory.learned.replay_window = parse_count("theory.replay_window", v); },
         [](const C& c) { return std::to_string(c.theory.learned.replay_window); }},
        {"theory.minibatch", [](C& c, const std::string& v) { c.theory.learned.minibatch = parse_count("theory.minibatch", v); },
         [](const C& c) { return std::to_string(c.theory.learned.minibatch); }},
        {"theory.epochs", [](C& c, const std::string& v) { c.theory.learned.epochs = static_cast<int>(parse_count("theory.epochs", v)); },
         [](const C& c) { return std::to_string(c.theory.learned.epochs); }},
        {"theory.learning_rate", [](C& c, const std::string& v) { c.theory.learned.learning_rate = parse_double("theory.learning_rate", v); },
         [num](const C& c) { return num(c.theory.learned.learning_rate); }},
        {"theory.entropy", [](C& c, const std::string& v) { c.theory.learned.entropy_coef = parse_double("theory.entropy", v); },
         [num](const C& c) { return num(c.theory.learned.entropy_coef); }},
        {"theory.csv_stride", [](C& c, const std::string& v) { c.theory_csv_stride = parse_count("theory.csv_stride", v); },
         [](const C& c) { return std::to_string(c.theory_csv_stride); }},

        {"spectral.m", [](C& c, const std::string& v) { c.spectral_m = parse_count("spectral.m", v); },
         [](const C& c) { return std::to_string(c.spectral_m); }},
        {"spectral.mode", [](C& c, const std::string& v) { c.spectral_mode = spectral::parse_window_mode(v); },
         [](const C& c) { return std::string(spectral::to_string(c.spectral_mode)); }},

        {"compare.lengths", [](C& c, const std::string& v) { c.compare_lengths = detail::parse_list<int>("compare.lengths", v); },
         [](const C& c) { return detail::join(c.compare_lengths); }},
        {"compare.window", [](C& c, const std::string& v) { c.compare_window = parse_double("compare.window", v); },
         [num](const C& c) { return num(c.compare_window); }},
    };
    return fields;
}

/// Applies `key = value` pairs on top of the defaults; unknown keys are rejected.
[[nodiscard]] inline ExperimentConfig config_from_text(std::string_view text, const std::string& source = "<config>") {
    ExperimentConfig cfg;
    const auto& fields = config_fields();
    for (const auto& [key, value] : parse_key_values(text, source)) {
        const auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField& f) { return f.key == key; });
        acllft::detail::require(it != fields.end(), source + ": unknown key '" + key + "'");
        it->set(cfg, value);
    }
    cfg.validate();
    return cfg;
}

[[nodiscard]] inline ExperimentConfig load_config(const fs::path& path) {
    return config_from_text(read_text_file(path, "config file"), path.string());
}

/// Every hashed field in table order, one `key = value` per line.
[[nodiscard]] inline std::string canonical_config(const ExperimentConfig& cfg, bool hashed_only = true) {
    std::string out;
    for (const auto& f : config_fields()) {
        if (!hashed_only || f.hashed) {
            out += f.key + " = " + f.get(cfg) + "\n";
        }
    }
    return out;
}

[[nodiscard]] inline std::string config_hash(const ExperimentConfig& cfg) { return hex64(fnv1a64(canonical_config(cfg))); }

/// Precedence: command-line flag, then ACLLFT_SEED, then the config's seed list.
[[nodiscard]] inline std::vector<std::uint64_t> resolve_seeds(const ExperimentConfig& cfg, std::optional<std::uint64_t> flag,
                                                              const char* env_value) {
    if (flag) {
        return {*flag};
    }
    if (env_value != nullptr && *env_value != '\0') {
        const auto parsed = detail::parse_integer("ACLLFT_SEED", env_value);
        acllft::detail::require(parsed >= 0, "ACLLFT_SEED must be non-negative");
        return {static_cast<std::uint64_t>(parsed)};
    }
    return cfg.seeds;
}

// ---------------------------------------------------------------------------
// Files

class CsvWriter {
public:
    CsvWriter(const fs::path& path, const std::vector<std::string>& header) : path_(path) {
        if (path.has_parent_path()) {
            fs::create_directories(path.parent_path());
        }
        out_.open(path, std::ios::binary | std::ios::trunc);
        acllft::detail::require(static_cast<bool>(out_), "cannot write '" + path.string() + "'");
        row(header);
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            out_ << (i ? "," : "") << cells[i];
        }
        out_ << '\n';
    }

private:
    fs::path path_;
    std::ofstream out_;
};

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    acllft::detail::require(static_cast<bool>(out), "cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

[[nodiscard]] inline nlohmann::json read_json(const fs::path& path, std::string_view what) {
    const auto text = read_text_file(path, what);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed " + std::string(what) + " '" + path.string() + "': " + e.what());
    }
}

/// Rows of a CSV with a header line; returns header and cells.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        acllft::detail::require(it != header.end(), "csv: missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

[[nodiscard]] inline CsvTable read_csv(const fs::path& path, std::string_view what, bool has_header = true) {
    const auto text = read_text_file(path, what);
    CsvTable table;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) {
            continue;
        }
        auto cells = detail::split(line, ',');
        if (first && has_header) {
            table.header = std::move(cells);
        } else {
            table.rows.push_back(std::move(cells));
        }
        first = false;
    }
    return table;
}

struct RunManifest {
    std::string config_hash;
    std::string command;
    std::map<std::string, std::string> seed_outputs;
    std::string started_utc;
    std::string finished_utc;
    double wall_seconds = 0.0;

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"config_hash", config_hash},     {"code_version", std::string(kVersion)},
                {"command", command},             {"seed_outputs", seed_outputs},
                {"wall_clock", {{"started_utc", started_utc}, {"finished_utc", finished_utc}, {"seconds", wall_seconds}}}};
    }
};

[[nodiscard]] inline std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Refuses to reuse a directory holding a manifest unless forced.
inline void guard_manifest(const fs::path& manifest_path, const std::string& hash, bool force) {
    if (force || !fs::exists(manifest_path)) {
        return;
    }
    std::string previous;
    try {
        previous = read_json(manifest_path, "manifest").value("config_hash", std::string());
    } catch (const ValidationError&) {
        previous = "unreadable";
    }
    if (previous == hash) {
        throw ValidationError("'" + manifest_path.string() + "' already holds a run with config hash " + hash +
                              "; pass --force to overwrite");
    }
    throw ValidationError("'" + manifest_path.string() + "' holds a run with a different config hash (" + previous +
                          " vs " + hash + "); use another --out or pass --force");
}

// ---------------------------------------------------------------------------
// Checkpoints

[[nodiscard]] inline nlohmann::json trainer_checkpoint(const marl::Trainer& trainer, const std::string& hash,
                                                       std::size_t episodes) {
    const auto& c = trainer.central_agent();
    return {{"config_hash", hash},
            {"episodes_completed", episodes},
            {"policy", approx::checkpoint(trainer.policy(), &trainer.policy_state())},
            {"critic", approx::checkpoint(trainer.critic(), &trainer.critic_state())},
            {"central_policy", approx::checkpoint(c.policy(), &c.policy_state())},
            {"central_critic", approx::checkpoint(c.critic(), &c.critic_state())},
            {"value_normalizer",
             {{"mean", trainer.value_normalizer().mean}, {"var", trainer.value_normalizer().var}, {"count", trainer.value_normalizer().count}}}};
}

inline void load_trainer_checkpoint(marl::Trainer& trainer, const nlohmann::json& j) {
    const auto load = [&j](const char* key, const approx::DenseNet& expected) {
        acllft::detail::require(j.contains(key), std::string("checkpoint: missing '") + key + "'");
        auto loaded = approx::load_checkpoint(j.at(key));
        acllft::detail::require(loaded.net.layer_sizes() == expected.layer_sizes(),
                                std::string("checkpoint: '") + key + "' layer sizes do not match the config");
        return loaded;
    };
    auto p = load("policy", trainer.policy());
    auto c = load("critic", trainer.critic());
    auto cp = load("central_policy", trainer.central_agent().policy());
    auto cc = load("central_critic", trainer.central_agent().critic());
    marl::ValueNormalizer vn;
    if (j.contains("value_normalizer")) {
        const auto& v = j.at("value_normalizer");
        vn.mean = v.at("mean").get<double>();
        vn.var = v.at("var").get<double>();
        vn.count = v.at("count").get<double>();
    }
    trainer.restore({p.net.parameters(), c.net.parameters(), cp.net.parameters(), cc.net.parameters(), p.optimizer,
                     c.optimizer, cp.optimizer, cc.optimizer, vn});
}

// ---------------------------------------------------------------------------
// Subcommand work

struct SeedPaths {
    fs::path dir;
    fs::path metrics;
    fs::path eval;
    fs::path decisions;
    fs::path checkpoint;
    fs::path summary;
};

[[nodiscard]] inline SeedPaths seed_paths(const fs::path& out, const std::string& method, std::uint64_t seed) {
    const fs::path dir = out / method / ("seed_" + std::to_string(seed));
    return {dir, dir / "metrics.csv", dir / "eval.csv", dir / "decisions.csv", dir / "checkpoint.json", dir / "summary.json"};
}

inline void write_decisions(const fs::path& path, const std::vector<marl::DecisionLogRow>& rows) {
    CsvWriter csv(path, {"episode", "step", "t", "action_index", "context_length", "value_estimate"});
    for (const auto& r : rows) {
        csv.row({std::to_string(r.episode), std::to_string(r.decision.step), std::to_string(r.decision.t),
                 std::to_string(r.decision.action_index), std::to_string(r.decision.context_length),
                 fmt(r.decision.value_estimate)});
    }
}

struct TrainOutcome {
    std::uint64_t seed = 0;
    double random_baseline = 0.0;
    double initial_eval = 0.0;
    double final_eval = 0.0;
    double final_central_entropy = 0.0;
    std::map<std::size_t, std::size_t> final_length_counts;
    bool diverged = false;
    std::string message;
};

/// Trains one seed and writes metrics.csv, eval.csv, decisions.csv, checkpoint.json and summary.json.
inline TrainOutcome train_seed(const ExperimentConfig& base, std::uint64_t seed, const fs::path& out,
                               std::ostream* log = nullptr) {
    ExperimentConfig cfg = base;
    cfg.trainer.seed = seed;
    const auto hash = config_hash(cfg);
    const auto paths = seed_paths(out, cfg.method(), seed);
    fs::create_directories(paths.dir);

    envs::SpreadEnv env(cfg.spread);
    auto trainer = marl::Trainer::for_env(cfg.trainer, env);
    const auto eval_seeds = marl::Trainer::eval_seeds(cfg.trainer);
    const auto baseline = marl::evaluate_random(env, eval_seeds, seed + 0x51ed2701ULL);

    CsvWriter metrics(paths.metrics, {"episode", "mean_return", "central_entropy", "clip_fraction", "value_loss", "alignment_sign"});
    auto result = trainer.train(env, [&](const marl::EpisodeMetrics& m) {
        metrics.row({std::to_string(m.episode), fmt(m.mean_return), fmt(m.central_entropy), fmt(m.clip_fraction),
                     fmt(m.value_loss), std::to_string(m.alignment_sign)});
        if (log != nullptr && cfg.trainer.eval_interval > 0 && m.episode % (cfg.trainer.eval_interval * 10) == 0) {
            *log << cfg.method() << " seed " << seed << ": episode " << m.episode << "\n";
        }
    });

    {
        CsvWriter eval(paths.eval, {"episode", "mean_return", "std_return", "central_entropy"});
        for (const auto& e : result.evaluations) {
            eval.row({std::to_string(e.episode), fmt(e.mean_return), fmt(e.std_return), fmt(e.central_entropy)});
        }
    }
    write_decisions(paths.decisions, result.decisions);
    write_json(paths.checkpoint, trainer_checkpoint(trainer, hash, result.episodes_completed));

    TrainOutcome outcome;
    outcome.seed = seed;
    outcome.random_baseline = baseline.mean_return;
    outcome.initial_eval = result.evaluations.front().mean_return;
    outcome.final_eval = result.evaluations.back().mean_return;
    outcome.final_central_entropy = result.final_eval.central_entropy;
    outcome.final_length_counts = result.final_eval.length_counts;
    outcome.diverged = result.diverged;
    outcome.message = result.message;

    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [length, count] : outcome.final_length_counts) {
        counts[std::to_string(length)] = count;
    }
    write_json(paths.summary, {{"config_hash", hash},
                               {"method", cfg.method()},
                               {"seed", seed},
                               {"episodes_completed", result.episodes_completed},
                               {"random_baseline_return", baseline.mean_return},
                               {"random_baseline_std", baseline.std_return},
                               {"initial_eval_return", outcome.initial_eval},
                               {"final_eval_return", outcome.final_eval},
                               {"final_central_entropy", outcome.final_central_entropy},
                               {"final_length_counts", counts},
                               {"diverged", outcome.diverged},
                               {"message", outcome.message}});
    return outcome;
}

struct ComparisonRow {
    std::string method;
    std::uint64_t seed = 0;
    double mean_return = 0.0;
    double std_return = 0.0;
    std::size_t window_points = 0;
};

/// Mean and std of the evaluation returns in the last `window` fraction of evaluation points.
[[nodiscard]] inline ComparisonRow summarize_eval(const fs::path& eval_csv, const std::string& method, std::uint64_t seed,
                                                  double window) {
    acllft::detail::require(window > 0.0 && window <= 1.0, "compare: window must lie in (0, 1]");
    if (!fs::exists(eval_csv)) {
        throw ValidationError("compare: no evaluation log for method '" + method + "' seed " + std::to_string(seed) +
                              " (expected '" + eval_csv.string() + "'); train it first");
    }
    const auto table = read_csv(eval_csv, "evaluation log");
    const auto col = table.column("mean_return");
    std::vector<double> values;
    for (const auto& row : table.rows) {
        values.push_back(detail::parse_double("mean_return", row.at(col)));
    }
    const auto count = static_cast<std::size_t>(std::floor(window * static_cast<double>(values.size())));
    acllft::detail::require(count >= 1, "compare: window " + fmt(window) + " covers no evaluation points for method '" +
                                            method + "' seed " + std::to_string(seed));
    const std::vector<double> tail(values.end() - static_cast<std::ptrdiff_t>(count), values.end());
    const auto summary = marl::summarize_returns(tail);
    return {method, seed, summary.mean_return, summary.std_return, count};
}

[[nodiscard]] inline std::vector<std::string> comparison_methods(const ExperimentConfig& cfg) {
    std::vector<std::string> methods{"adaptive"};
    for (const int l : cfg.compare_lengths) {
        methods.push_back("fixed_" + std::to_string(l));
    }
    return methods;
}

inline std::vector<ComparisonRow> compare_fixed(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                                const fs::path& out) {
    std::vector<ComparisonRow> rows;
    for (const auto& method : comparison_methods(cfg)) {
        for (const auto seed : seeds) {
            rows.push_back(summarize_eval(seed_paths(out, method, seed).eval, method, seed, cfg.compare_window));
        }
    }
    CsvWriter csv(out / "comparison.csv", {"method", "seed", "mean_return", "std_return", "window_points"});
    for (const auto& r : rows) {
        csv.row({r.method, std::to_string(r.seed), fmt(r.mean_return), fmt(r.std_return), std::to_string(r.window_points)});
    }
    return rows;
}

// Spectral demo ---------------------------------------------------------------

/// One column per feature, one row per step; a non-numeric first row is treated as a header.
[[nodiscard]] inline Eigen::MatrixXd read_signal_csv(const fs::path& path) {
    const auto table = read_csv(path, "signal file", false);
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        std::vector<double> values;
        bool numeric = true;
        for (const auto& cell : table.rows[r]) {
            try {
                std::size_t used = 0;
                values.push_back(std::stod(cell, &used));
                numeric = numeric && used == cell.size();
            } catch (const std::exception&) {
                numeric = false;
            }
        }
        if (!numeric) {
            acllft::detail::require(r == 0, "signal file: non-numeric value on data row " + std::to_string(r + 1));
            continue;
        }
        acllft::detail::require(rows.empty() || values.size() == rows.front().size(), "signal file: ragged rows");
        rows.push_back(std::move(values));
    }
    acllft::detail::require(!rows.empty(), "signal file: no data rows");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }
    return out;
}

/// Two tones plus a slow ramp, 64 steps, two channels.
[[nodiscard]] inline Eigen::MatrixXd demo_signal() {
    Eigen::MatrixXd s(64, 2);
    for (Eigen::Index u = 0; u < 64; ++u) {
        const double x = static_cast<double>(u);
        s(u, 0) = std::cos(2.0 * M_PI * 2.0 * x / 64.0) + 0.3 * std::sin(2.0 * M_PI * 21.0 * x / 64.0);
        s(u, 1) = 0.02 * x + 0.5 * std::cos(2.0 * M_PI * 9.0 * x / 64.0);
    }
    return s;
}

struct SpectralDemoResult {
    spectral::WindowBank bank;
    spectral::SpectralDecomposition decomposition;
    double reconstruction_error = 0.0;
};

/// Left-pads to a power of two, decomposes, writes components.csv and summary.json.
inline SpectralDemoResult spectral_demo(const Eigen::MatrixXd& signal, std::size_t m, spectral::WindowMode mode,
                                        const fs::path& dir) {
    // Smallest valid bank for this m has 2^m < t/2.
    const auto t = spectral::next_power_of_two(std::max(static_cast<std::size_t>(signal.rows()), std::size_t{4} << m));
    const spectral::HistoryWindow history(spectral::left_pad(signal, t));
    auto bank = spectral::build_window_bank(t, static_cast<int>(m), mode);
    auto decomposition = spectral::decompose(history, bank);
    const double error = (decomposition.reconstruction() - history.steps()).cwiseAbs().maxCoeff();

    CsvWriter csv(dir / "components.csv", {"band", "step", "feature", "value"});
    const auto emit = [&csv](const std::string& band, const Eigen::MatrixXd& comp) {
        for (Eigen::Index u = 0; u < comp.rows(); ++u) {
            for (Eigen::Index c = 0; c < comp.cols(); ++c) {
                csv.row({band, std::to_string(u), std::to_string(c), fmt(comp(u, c))});
            }
        }
    };
    emit("lowpass", decomposition.lowpass_component);
    for (std::size_t j = 0; j < decomposition.band_components.size(); ++j) {
        emit("band_" + std::to_string(j), decomposition.band_components[j]);
    }
    write_json(dir / "summary.json", {{"t", t},
                                      {"m", m},
                                      {"mode", std::string(spectral::to_string(mode))},
                                      {"residual_indices", bank.residual_set},
                                      {"reconstruction_error", error}});
    return {std::move(bank), std::move(decomposition), error};
}

// Theorem check ---------------------------------------------------------------

[[nodiscard]] inline nlohmann::json regret_summary(const theory::RegretReport& report) {
    nlohmann::json fits = nlohmann::json::object();
    nlohmann::json totals = nlohmann::json::object();
    for (const auto& c : report.curves) {
        const bool linear = c.model == "linear";
        const auto& fit = linear ? c.linear : c.loglog;
        fits[c.name] = {{"model", c.model}, {"slope_or_exponent", fit.slope}, {"r2", fit.r2}};
        totals[c.name] = c.cumulative.back();
    }
    std::string adaptive;
    for (const char* name : {"learned", "oracle"}) {
        for (const auto& c : report.curves) {
            if (adaptive.empty() && c.name == name) {
                adaptive = name;
            }
        }
    }
    const double best_fixed = report.best_fixed_total();
    nlohmann::json out = {{"fits", fits}, {"totals", totals}, {"horizon", report.horizon}, {"best_fixed_total", best_fixed}};
    if (!adaptive.empty()) {
        out["adaptive_policy"] = adaptive;
        out["gap_at_T"] = best_fixed - report.curve(adaptive).cumulative.back();
    } else {
        out["gap_at_T"] = nullptr;
    }
    return out;
}

inline theory::RegretReport theorem_check_seed(const ExperimentConfig& base, std::uint64_t seed, const fs::path& dir) {
    auto rc = base.theory;
    rc.seed = seed;
    const auto report = theory::regret_experiment(rc);
    CsvWriter csv(dir / "theorem.csv", {"t", "policy", "per_step_loss", "cumulative_loss"});
    for (std::size_t i = 0; i < report.horizon; ++i) {
        if ((i + 1) % base.theory_csv_stride != 0 && i + 1 != report.horizon) {
            continue;
        }
        for (const auto& c : report.curves) {
            csv.row({std::to_string(i + 1), c.name, fmt(c.per_step[i]), fmt(c.cumulative[i])});
        }
    }
    auto summary = regret_summary(report);
    summary["seed"] = seed;
    write_json(dir / "summary.json", summary);
    return report;
}

// Case log ----------------------------------------------------------------------

/// Greedy episode from a checkpoint: decision log plus the trajectory dump.
inline marl::Trajectory case_log(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& checkpoint,
                                 std::uint64_t episode_seed, const fs::path& dir) {
    ExperimentConfig local = cfg;
    local.trainer.seed = seed;
    envs::SpreadEnv env(local.spread);
    auto trainer = marl::Trainer::for_env(local.trainer, env);
    load_trainer_checkpoint(trainer, read_json(checkpoint, "checkpoint"));
    auto traj = trainer.run_episode(env, episode_seed, nullptr);
    std::vector<marl::DecisionLogRow> rows;
    for (const auto& d : traj.decisions) {
        rows.push_back({0, d});
    }
    write_decisions(dir / "case_decisions.csv", rows);
    CsvWriter dump(dir / "trajectory.csv", {"step", "agent", "pos_x", "pos_y", "reward"});
    for (std::size_t t = 0; t < traj.length(); ++t) {
        for (std::size_t i = 0; i < traj.agents.size(); ++i) {
            const auto& p = traj.positions[t];
            dump.row({std::to_string(t + 1), std::to_string(i), fmt(p(static_cast<Eigen::Index>(i), 0)),
                      fmt(p(static_cast<Eigen::Index>(i), 1)), fmt(traj.agents[i][t].reward)});
        }
    }
    return traj;
}

}  // namespace acllft::harness
