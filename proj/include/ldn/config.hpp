#pragma once

// Run configuration: a flat `key = value` text format with `#` comments,
// named hyper-parameter presets and a resolved echo that lists every
// effective setting.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ldn/error.hpp"
#include "ldn/trainer.hpp"

namespace ldn {

enum class DatasetKind { mnist, cifar10, synth };

inline std::string to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::mnist: return "mnist";
        case DatasetKind::cifar10: return "cifar10";
        case DatasetKind::synth: return "synth";
    }
    return "?";
}

inline std::optional<DatasetKind> parse_dataset_kind(std::string_view s) {
    if (s == "mnist") return DatasetKind::mnist;
    if (s == "cifar10") return DatasetKind::cifar10;
    if (s == "synth") return DatasetKind::synth;
    return std::nullopt;
}

struct DataConfig {
    DatasetKind kind = DatasetKind::synth;
    std::filesystem::path dir;  // empty: data/mnist or data/cifar-10-batches-bin
    std::size_t train_limit = 0;  // first N samples; 0 = all
    std::size_t test_limit = 0;
    std::size_t synth_per_class = 100;  // per class and per split
    std::size_t synth_classes = 2;
    std::size_t synth_dim = 2;
    double synth_min_sep = 0.15;
    std::uint64_t data_seed = 0;

    std::filesystem::path resolved_dir() const {
        if (!dir.empty()) return dir;
        return kind == DatasetKind::cifar10 ? "data/cifar-10-batches-bin" : "data/mnist";
    }
    std::size_t input_dim() const {
        switch (kind) {
            case DatasetKind::mnist: return 784;
            case DatasetKind::cifar10: return 3072;
            case DatasetKind::synth: return synth_dim;
        }
        return 0;
    }
    std::size_t classes() const { return kind == DatasetKind::synth ? synth_classes : 10; }
};

struct RunConfig {
    std::string preset;
    DataConfig data;
    std::size_t depth = 3;  // distance layers including the output layer
    std::size_t width = 64;
    TrainConfig train;
    std::size_t pgd_steps = 100;

    /// Defaults describe the small synthetic run (2 classes in the plane).
    RunConfig() {
        train.schedule.e1 = 10;
        train.schedule.e2 = 170;
        train.schedule.e3 = 20;
        train.schedule.lambda0 = 0.05;
        train.schedule.lambda_end = 2e-4;
        train.loss = {LossKind::composite_decaying_lambda, 0.3, 0.0};
        train.batch_size = 64;
    }

    std::vector<std::size_t> dims() const {
        std::vector<std::size_t> d{data.input_dim()};
        for (std::size_t l = 0; l + 1 < depth; ++l) d.push_back(width);
        d.push_back(data.classes());
        return d;
    }

    /// Training configuration with dims filled in.
    TrainConfig train_config() const {
        TrainConfig c = train;
        c.dims = dims();
        return c;
    }

    void validate() const {
        if (depth < 1) throw ConfigError("depth must be >= 1");
        if (width < 1) throw ConfigError("width must be >= 1");
        try {
            train_config().validate();
        } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
        }
    }
};

/// Named hyper-parameter preset.
struct Preset {
    std::string name;
    DatasetKind dataset;
    double eps;
    double theta;
    double lambda0;
    double lambda_end;
    std::size_t e1, e2, e3;
    std::size_t pad;
    bool flip;
    std::size_t depth;
};

inline const std::vector<Preset>& presets() {
    static const std::vector<Preset> table{
        {"mnist_0.1", DatasetKind::mnist, 0.1, 0.6, 0.05, 2e-4, 25, 375, 50, 1, false, 5},
        {"mnist_0.3", DatasetKind::mnist, 0.3, 0.9, 0.05, 2e-4, 25, 375, 50, 1, false, 5},
        {"cifar_2_255", DatasetKind::cifar10, 2.0 / 255, 20.0 / 255, 0.05, 2e-3, 100, 1150, 50, 3, true, 6},
        {"cifar_8_255", DatasetKind::cifar10, 8.0 / 255, 48.0 / 255, 0.1, 5e-4, 100, 1150, 50, 3, true, 6},
        {"cifar_16_255", DatasetKind::cifar10, 16.0 / 255, 80.0 / 255, 0.1, 2e-4, 100, 1150, 50, 3, true, 6},
    };
    return table;
}

inline void apply_preset(const Preset& p, RunConfig& c) {
    c.preset = p.name;
    c.data.kind = p.dataset;
    c.depth = p.depth;
    c.width = 5120;
    c.train.eps = p.eps;
    c.train.loss = {LossKind::composite_decaying_lambda, p.theta, 0.0};
    c.train.schedule.e1 = p.e1;
    c.train.schedule.e2 = p.e2;
    c.train.schedule.e3 = p.e3;
    c.train.schedule.p_start = 8.0;
    c.train.schedule.p_end = 1000.0;
    c.train.schedule.lambda0 = p.lambda0;
    c.train.schedule.lambda_end = p.lambda_end;
    c.train.schedule.lr0 = 0.03;
    c.train.batch_size = 512;
    c.train.augment = {p.pad, p.flip};
}

inline const Preset& find_preset(const std::string& name) {
    for (const auto& p : presets())
        if (p.name == name) return p;
    std::string known;
    for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
    throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_double(std::string_view s) {
    const auto slash = s.find('/');
    if (slash != std::string_view::npos) {
        const auto num = parse_double(trim(s.substr(0, slash)));
        const auto den = parse_double(trim(s.substr(slash + 1)));
        if (!num || !den || *den == 0.0) return std::nullopt;
        return *num / *den;
    }
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end || s.empty()) return std::nullopt;
    return v;
}

inline std::optional<std::uint64_t> parse_unsigned(std::string_view s) {
    std::uint64_t v = 0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end || s.empty()) return std::nullopt;
    return v;
}

inline std::optional<bool> parse_bool(std::string_view s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    return std::nullopt;
}

inline std::string exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct KeySpec {
    const char* name;
    const char* type;  // shown in type errors
    std::function<bool(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename Field>
KeySpec unsigned_key(const char* name, Field field) {
    return {name, "a non-negative integer",
            [field](RunConfig& c, std::string_view s) {
                const auto v = parse_unsigned(s);
                if (!v) return false;
                field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(*v);
                return true;
            },
            [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

template <typename Field>
KeySpec double_key(const char* name, Field field) {
    return {name, "a number",
            [field](RunConfig& c, std::string_view s) {
                const auto v = parse_double(s);
                if (!v) return false;
                field(c) = *v;
                return true;
            },
            [field](const RunConfig& c) { return exact(field(c)); }};
}

template <typename Field>
KeySpec bool_key(const char* name, Field field) {
    return {name, "true or false",
            [field](RunConfig& c, std::string_view s) {
                const auto v = parse_bool(s);
                if (!v) return false;
                field(c) = *v;
                return true;
            },
            [field](const RunConfig& c) { return std::string(field(c) ? "true" : "false"); }};
}

inline const std::vector<KeySpec>& key_table() {
    static const std::vector<KeySpec> keys{
        {"dataset", "one of mnist, cifar10, synth",
         [](RunConfig& c, std::string_view s) {
             const auto k = parse_dataset_kind(s);
             if (k) c.data.kind = *k;
             return k.has_value();
         },
         [](const RunConfig& c) { return to_string(c.data.kind); }},
        {"data_dir", "a path",
         [](RunConfig& c, std::string_view s) {
             c.data.dir = std::string(s);
             return true;
         },
         [](const RunConfig& c) { return c.data.dir.string(); }},
        unsigned_key("train_limit", [](auto& c) -> auto& { return c.data.train_limit; }),
        unsigned_key("test_limit", [](auto& c) -> auto& { return c.data.test_limit; }),
        unsigned_key("synth_per_class", [](auto& c) -> auto& { return c.data.synth_per_class; }),
        unsigned_key("synth_classes", [](auto& c) -> auto& { return c.data.synth_classes; }),
        unsigned_key("synth_dim", [](auto& c) -> auto& { return c.data.synth_dim; }),
        double_key("synth_min_sep", [](auto& c) -> auto& { return c.data.synth_min_sep; }),
        unsigned_key("data_seed", [](auto& c) -> auto& { return c.data.data_seed; }),
        unsigned_key("depth", [](auto& c) -> auto& { return c.depth; }),
        unsigned_key("width", [](auto& c) -> auto& { return c.width; }),
        unsigned_key("e1", [](auto& c) -> auto& { return c.train.schedule.e1; }),
        unsigned_key("e2", [](auto& c) -> auto& { return c.train.schedule.e2; }),
        unsigned_key("e3", [](auto& c) -> auto& { return c.train.schedule.e3; }),
        double_key("p_start", [](auto& c) -> auto& { return c.train.schedule.p_start; }),
        double_key("p_end", [](auto& c) -> auto& { return c.train.schedule.p_end; }),
        double_key("lambda0", [](auto& c) -> auto& { return c.train.schedule.lambda0; }),
        double_key("lambda_end", [](auto& c) -> auto& { return c.train.schedule.lambda_end; }),
        double_key("lr", [](auto& c) -> auto& { return c.train.schedule.lr0; }),
        {"loss", "one of hinge, scaled_ce, ce_threshold, composite_fixed_lambda, composite_decaying_lambda",
         [](RunConfig& c, std::string_view s) {
             try {
                 c.train.loss.kind = parse_loss_kind(std::string(s));
                 return true;
             } catch (const InvalidArgument&) {
                 return false;
             }
         },
         [](const RunConfig& c) { return to_string(c.train.loss.kind); }},
        double_key("theta", [](auto& c) -> auto& { return c.train.loss.theta; }),
        double_key("lambda", [](auto& c) -> auto& { return c.train.loss.lambda; }),
        unsigned_key("batch_size", [](auto& c) -> auto& { return c.train.batch_size; }),
        unsigned_key("seed", [](auto& c) -> auto& { return c.train.seed; }),
        unsigned_key("pad", [](auto& c) -> auto& { return c.train.augment.pad; }),
        bool_key("flip", [](auto& c) -> auto& { return c.train.augment.flip; }),
        double_key("eps", [](auto& c) -> auto& { return c.train.eps; }),
        unsigned_key("eval_subset", [](auto& c) -> auto& { return c.train.eval_subset; }),
        bool_key("log_wall_time", [](auto& c) -> auto& { return c.train.log_wall_time; }),
        double_key("init_noise", [](auto& c) -> auto& { return c.train.init_noise; }),
        double_key("temperature_lr_scale", [](auto& c) -> auto& { return c.train.temperature_lr_scale; }),
        unsigned_key("pgd_steps", [](auto& c) -> auto& { return c.pgd_steps; }),
    };
    return keys;
}

inline const KeySpec* find_key(std::string_view name) {
    for (const auto& k : key_table())
        if (name == k.name) return &k;
    return nullptr;
}

}  // namespace detail

/// Names of every accepted key, `preset` first.
inline std::vector<std::string> config_keys() {
    std::vector<std::string> out{"preset"};
    for (const auto& k : detail::key_table()) out.emplace_back(k.name);
    return out;
}

/// One `key = value` assignment and where it came from.
struct ConfigEntry {
    std::string key;
    std::string value;
    std::string where;  // "file:line" or "override"
};

/// Splits text into entries, rejecting malformed lines, unknown keys and duplicates.
inline std::vector<ConfigEntry> parse_config_entries(std::string_view text, const std::string& origin = "<config>") {
    std::vector<ConfigEntry> out;
    std::map<std::string, std::string> seen;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        const auto hash = line.find('#');
        if (hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(line_no);
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value', got '" + std::string(line) + "'");
        const std::string key(detail::trim(line.substr(0, eq)));
        std::string value(detail::trim(line.substr(eq + 1)));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        if (key.empty()) throw ConfigError(where + ": missing key before '='");
        if (key != "preset" && !detail::find_key(key)) throw ConfigError(where + ": unknown key '" + key + "'");
        if (const auto it = seen.find(key); it != seen.end())
            throw ConfigError(where + ": duplicate key '" + key + "' (first set at " + it->second + ")");
        seen[key] = where;
        out.push_back({key, value, where});
    }
    return out;
}

/// Parses `key=value` command-line overrides.
inline std::vector<ConfigEntry> parse_overrides(const std::vector<std::string>& items) {
    std::vector<ConfigEntry> out;
    std::map<std::string, bool> seen;
    for (const auto& item : items) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + item + "' is not of the form key=value");
        const std::string key(detail::trim(std::string_view(item).substr(0, eq)));
        const std::string value(detail::trim(std::string_view(item).substr(eq + 1)));
        if (key != "preset" && !detail::find_key(key)) throw ConfigError("override: unknown key '" + key + "'");
        if (seen[key]) throw ConfigError("override: key '" + key + "' given twice");
        seen[key] = true;
        out.push_back({key, value, "override " + key});
    }
    return out;
}

/// Defaults, then the preset (if any), then file entries, then overrides.
/// Later sources replace earlier ones key by key.
inline RunConfig resolve_config(const std::vector<ConfigEntry>& file, const std::vector<ConfigEntry>& overrides = {}) {
    RunConfig cfg;
    std::optional<std::string> preset;
    for (const auto* src : {&file, &overrides})
        for (const auto& e : *src)
            if (e.key == "preset") preset = e.value;
    if (preset && !preset->empty()) apply_preset(find_preset(*preset), cfg);
    for (const auto* src : {&file, &overrides})
        for (const auto& e : *src) {
            if (e.key == "preset") continue;
            const auto* spec = detail::find_key(e.key);
            if (!spec->set(cfg, e.value))
                throw ConfigError(e.where + ": key '" + e.key + "' expects " + spec->type + ", got '" + e.value + "'");
        }
    cfg.validate();
    return cfg;
}

inline RunConfig parse_config(std::string_view text, const std::string& origin = "<config>") {
    return resolve_config(parse_config_entries(text, origin));
}

/// Every effective setting, one `key = value` per line; parse_config() of the
/// result reproduces the same configuration.
inline std::string echo_config(const RunConfig& cfg) {
    std::string out = "# resolved configuration\n";
    if (!cfg.preset.empty()) out += "preset = " + cfg.preset + "\n";
    for (const auto& k : detail::key_table()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
    return out;
}

}  // namespace ldn
