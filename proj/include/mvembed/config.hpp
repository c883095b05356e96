#pragma once

// key=value run configuration with a closed schema and two presets.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mvembed/dataset.hpp"
#include "mvembed/error.hpp"
#include "mvembed/models.hpp"
#include "mvembed/seed.hpp"

namespace mvembed {

enum class EvalScope { Test, All };

struct RunConfig {
    std::string preset = "desk";

    // corpus
    std::string manifest;  // empty: generate the synthetic corpus
    std::vector<std::string> synth_classes = primitive_classes();
    int synth_instances = 20;
    double synth_scale_min = 0.7;
    double synth_scale_max = 1.3;
    double synth_noise = 0.02;
    double split_train = 0.7, split_val = 0.1, split_test = 0.2;

    // views
    int n_views = kDefaultViews;
    int resolution = kDefaultResolution;
    double elevation = kDefaultElevation;
    bool perturbed = false;
    int k = 3;
    std::vector<int> k_values{2, 3, 4};
    int kmeans_max_iters = 100;

    // model and training
    ModelKind kind = ModelKind::Combined;
    int base_channels = 8;
    int bottleneck_dim = 128;
    int batch_size = 1;
    int iterations_ae = 2000;
    int iterations_cls = 1000;
    int iterations_combined = 2000;
    double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double lambda = 1.0;

    // evaluation and execution
    EvalScope eval_scope = EvalScope::Test;
    std::uint64_t seed = 1;
    int workers = 1;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;

    static RunConfig desk() { return {}; }

    static RunConfig paper_faithful() {
        RunConfig c;
        c.preset = "paper-faithful";
        c.base_channels = 64;
        c.batch_size = 100;
        c.iterations_ae = 50000;
        c.iterations_cls = 20000;
        c.iterations_combined = 50000;
        return c;
    }

    int iterations_for(ModelKind kind_) const {
        switch (kind_) {
        case ModelKind::Autoencoder: return iterations_ae;
        case ModelKind::Classification: return iterations_cls;
        case ModelKind::Combined: return iterations_combined;
        }
        return 0;
    }

    EncoderConfig encoder(int k_) const {
        EncoderConfig e;
        e.resolution = resolution;
        e.in_channels = k_;
        e.base_channels = base_channels;
        e.bottleneck_dim = bottleneck_dim;
        return e;
    }

    /// The three kinds share one seed per k so shared layers start equal.
    TrainConfig train_config(ModelKind kind_, int k_) const {
        TrainConfig t;
        t.batch_size = batch_size;
        t.iterations = iterations_for(kind_);
        t.seed = derive_seed(seed, "train:k" + std::to_string(k_));
        t.adam = {lr, beta1, beta2, eps};
        t.lambda = lambda;
        return t;
    }

    SynthSpec synth_spec() const {
        SynthSpec s;
        s.classes = synth_classes;
        s.instances_per_class = synth_instances;
        s.seed = derive_seed(seed, "synth");
        s.scale_min = synth_scale_min;
        s.scale_max = synth_scale_max;
        s.vertex_noise = synth_noise;
        s.ratios = {split_train, split_val, split_test};
        return s;
    }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto* end = v.data() + v.size();
    const auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError("bad value '" + v + "' for key '" + key + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("bad boolean '" + v + "' for key '" + key + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream s(v);
    while (std::getline(s, item, ',')) out.push_back(item);
    return out;
}

inline std::string fmt_double(double v) {
    std::ostringstream o;
    o << std::setprecision(17) << v;
    return o.str();
}

template <class T>
std::string join(const std::vector<T>& xs) {
    std::ostringstream o;
    for (std::size_t i = 0; i < xs.size(); ++i) o << (i ? "," : "") << xs[i];
    return o.str();
}

struct Field {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define MVEMBED_INT_FIELD(name)                                                                              \
    Field {                                                                                                  \
        #name, [](const RunConfig& c) { return std::to_string(c.name); },                                    \
            [](RunConfig& c, const std::string& v) { c.name = parse_number<decltype(c.name)>(#name, v); } \
    }
#define MVEMBED_REAL_FIELD(name)                                                                 \
    Field {                                                                                      \
        #name, [](const RunConfig& c) { return fmt_double(c.name); },                            \
            [](RunConfig& c, const std::string& v) { c.name = parse_number<double>(#name, v); } \
    }

inline const std::vector<Field>& schema() {
    static const std::vector<Field> fields{
        {"preset", [](const RunConfig& c) { return c.preset; },
         [](RunConfig& c, const std::string& v) { c.preset = v; }},
        {"manifest", [](const RunConfig& c) { return c.manifest; },
         [](RunConfig& c, const std::string& v) { c.manifest = v; }},
        {"synth_classes", [](const RunConfig& c) { return join(c.synth_classes); },
         [](RunConfig& c, const std::string& v) { c.synth_classes = split_list(v); }},
        MVEMBED_INT_FIELD(synth_instances),
        MVEMBED_REAL_FIELD(synth_scale_min),
        MVEMBED_REAL_FIELD(synth_scale_max),
        MVEMBED_REAL_FIELD(synth_noise),
        MVEMBED_REAL_FIELD(split_train),
        MVEMBED_REAL_FIELD(split_val),
        MVEMBED_REAL_FIELD(split_test),
        MVEMBED_INT_FIELD(n_views),
        MVEMBED_INT_FIELD(resolution),
        MVEMBED_REAL_FIELD(elevation),
        {"perturbed", [](const RunConfig& c) { return std::string(c.perturbed ? "true" : "false"); },
         [](RunConfig& c, const std::string& v) { c.perturbed = parse_bool("perturbed", v); }},
        MVEMBED_INT_FIELD(k),
        {"k_values", [](const RunConfig& c) { return join(c.k_values); },
         [](RunConfig& c, const std::string& v) {
             c.k_values.clear();
             for (const auto& s : split_list(v)) c.k_values.push_back(parse_number<int>("k_values", s));
         }},
        MVEMBED_INT_FIELD(kmeans_max_iters),
        {"kind", [](const RunConfig& c) { return to_string(c.kind); },
         [](RunConfig& c, const std::string& v) { c.kind = parse_model_kind(v); }},
        MVEMBED_INT_FIELD(base_channels),
        MVEMBED_INT_FIELD(bottleneck_dim),
        MVEMBED_INT_FIELD(batch_size),
        MVEMBED_INT_FIELD(iterations_ae),
        MVEMBED_INT_FIELD(iterations_cls),
        MVEMBED_INT_FIELD(iterations_combined),
        MVEMBED_REAL_FIELD(lr),
        MVEMBED_REAL_FIELD(beta1),
        MVEMBED_REAL_FIELD(beta2),
        MVEMBED_REAL_FIELD(eps),
        MVEMBED_REAL_FIELD(lambda),
        {"eval_scope", [](const RunConfig& c) { return std::string(c.eval_scope == EvalScope::Test ? "test" : "all"); },
         [](RunConfig& c, const std::string& v) {
             if (v == "test")
                 c.eval_scope = EvalScope::Test;
             else if (v == "all")
                 c.eval_scope = EvalScope::All;
             else
                 throw ConfigError("eval_scope must be 'test' or 'all', got '" + v + "'");
         }},
        MVEMBED_INT_FIELD(seed),
        MVEMBED_INT_FIELD(workers),
    };
    return fields;
}

#undef MVEMBED_INT_FIELD
#undef MVEMBED_REAL_FIELD

inline std::string trim_copy(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace detail

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    for (const auto& f : detail::schema())
        if (key == f.key) return f.set(c, value);
    throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& c, const std::string& key) {
    for (const auto& f : detail::schema())
        if (key == f.key) return f.get(c);
    throw ConfigError("unknown config key '" + key + "'");
}

inline void validate(const RunConfig& c) {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    need(c.n_views >= 1, "n_views must be >= 1");
    need(c.resolution > 0 && c.resolution % 16 == 0 && c.resolution <= kMaxResolution,
         "resolution must be a positive multiple of 16 no larger than " + std::to_string(kMaxResolution));
    need(c.elevation > -90 && c.elevation < 90, "elevation must lie strictly between -90 and 90");
    need(c.k >= 1 && c.k <= c.n_views, "k must be in [1, n_views]");
    need(!c.k_values.empty(), "k_values must not be empty");
    for (int k : c.k_values) need(k >= 1 && k <= c.n_views, "k_values entries must be in [1, n_views]");
    need(c.kmeans_max_iters >= 1, "kmeans_max_iters must be >= 1");
    need(c.base_channels >= 1 && c.bottleneck_dim >= 1, "base_channels and bottleneck_dim must be >= 1");
    need(c.batch_size >= 1, "batch_size must be >= 1");
    need(c.iterations_ae >= 1 && c.iterations_cls >= 1 && c.iterations_combined >= 1, "iterations must be >= 1");
    need(c.lr > 0 && c.eps > 0, "lr and eps must be positive");
    need(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1, "Adam betas must lie in [0, 1)");
    need(c.lambda >= 0, "lambda must be >= 0");
    need(c.workers >= 1, "workers must be >= 1");
    need(c.split_train >= 0 && c.split_val >= 0 && c.split_test >= 0 &&
             std::abs(c.split_train + c.split_val + c.split_test - 1.0) <= 1e-9,
         "split ratios must be non-negative and sum to 1");
    if (c.manifest.empty()) validate(c.synth_spec());
}

/// Applies `key = value` lines on top of `base`. Blank lines and `#` comments
/// are skipped; unknown keys are rejected.
inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim_copy(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
        set_config_value(base, detail::trim_copy(line.substr(0, eq)), detail::trim_copy(line.substr(eq + 1)));
    }
    return base;
}

inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
    std::istringstream in(text);
    return parse_config(in, std::move(base));
}

/// Every schema key, one per line; parse_config(to_text(c)) == c.
inline std::string to_text(const RunConfig& c) {
    std::ostringstream o;
    for (const auto& f : detail::schema()) o << f.key << '=' << f.get(c) << '\n';
    return o.str();
}

/// Sidecar echo for a single training run.
inline std::string to_text(const TrainConfig& t, const EncoderConfig& e, ModelKind kind) {
    std::ostringstream o;
    o << std::setprecision(17) << "kind=" << to_string(kind) << "\nresolution=" << e.resolution
      << "\nin_channels=" << e.in_channels << "\nblocks=" << e.blocks << "\nkernel=" << e.kernel
      << "\nbase_channels=" << e.base_channels << "\nbottleneck_dim=" << e.bottleneck_dim
      << "\nbatch_size=" << t.batch_size << "\niterations=" << t.iterations << "\nseed=" << t.seed
      << "\nlr=" << t.adam.lr << "\nbeta1=" << t.adam.beta1 << "\nbeta2=" << t.adam.beta2 << "\neps=" << t.adam.eps
      << "\nlambda=" << t.lambda << "\nabort_threshold=" << t.abort_threshold << '\n';
    return o.str();
}

} // namespace mvembed
