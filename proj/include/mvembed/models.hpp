#pragma once

// The three embedding networks (autoencoder, classifier, combined), their
// training loop and bottleneck extraction.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mvembed/nn/adam.hpp"
#include "mvembed/nn/ops.hpp"
#include "mvembed/nn/tape.hpp"
#include "mvembed/retrieval.hpp"
#include "mvembed/seed.hpp"
#include "mvembed/view_select.hpp"

namespace mvembed {

struct EncoderConfig {
    int resolution = 64;
    int in_channels = 3;  // k selected views
    int blocks = 4;
    int kernel = 5;
    int base_channels = 8;
    int bottleneck_dim = 128;

    /// Output channels of encoder block b (1-based).
    int block_channels(int b) const { return base_channels << b; }
    int bottom_size() const { return resolution >> blocks; }
    int flatten_dim() const { return block_channels(blocks) * bottom_size() * bottom_size(); }

    void validate() const {
        if (blocks != 4 || kernel != 5) throw ConfigError("encoder uses exactly 4 blocks of 5x5 kernels");
        if (resolution <= 0 || resolution % (1 << blocks) != 0)
            throw ConfigError("resolution must be a positive multiple of " + std::to_string(1 << blocks));
        if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
        if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
        if (bottleneck_dim < 1) throw ConfigError("bottleneck_dim must be >= 1");
    }

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

enum class ModelKind { Autoencoder, Classification, Combined };

inline bool has_decoder(ModelKind k) { return k != ModelKind::Classification; }
inline bool has_classifier(ModelKind k) { return k != ModelKind::Autoencoder; }

inline std::string to_string(ModelKind k) {
    switch (k) {
    case ModelKind::Autoencoder: return "ae";
    case ModelKind::Classification: return "cls";
    case ModelKind::Combined: return "combined";
    }
    return "?";
}

inline std::string display_name(ModelKind k) {
    switch (k) {
    case ModelKind::Autoencoder: return "Autoencoder";
    case ModelKind::Classification: return "Classification";
    case ModelKind::Combined: return "Autoe.+Class.";
    }
    return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "ae" || s == "autoencoder") return ModelKind::Autoencoder;
    if (s == "cls" || s == "classification") return ModelKind::Classification;
    if (s == "combined") return ModelKind::Combined;
    throw ConfigError("unknown model kind '" + s + "' (expected ae, cls or combined)");
}

template <class T>
struct Model {
    ModelKind kind = ModelKind::Autoencoder;
    EncoderConfig encoder;
    int num_classes = 0;
    nn::ParameterSet<T> params;
};

namespace detail {

inline std::string block_name(const char* prefix, int b, const char* layer) {
    return std::string(prefix) + ".b" + std::to_string(b) + "." + layer;
}

template <class T>
void add_he(nn::ParameterSet<T>& ps, const std::string& name, nn::Shape shape, std::size_t fan_in,
            std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, name));
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    nn::Tensor<T> w(std::move(shape));
    for (auto& v : w.data()) v = static_cast<T>(normal(rng));
    ps.add(name, std::move(w));
}

template <class T>
void add_zero(nn::ParameterSet<T>& ps, const std::string& name, std::size_t n) {
    ps.add(name, nn::Tensor<T>(nn::Shape{n}));
}

} // namespace detail

/// Fresh parameters. Each tensor draws from its own stream derived from
/// (seed, tensor name), so shared layers start identical across model kinds.
template <class T>
Model<T> init_model(ModelKind kind, const EncoderConfig& enc, int num_classes, std::uint64_t seed) {
    enc.validate();
    if (has_classifier(kind) && num_classes < 2) throw ConfigError("classification needs at least 2 classes");
    Model<T> m;
    m.kind = kind;
    m.encoder = enc;
    m.num_classes = has_classifier(kind) ? num_classes : 0;
    auto& ps = m.params;
    ps.reserve(64);
    const std::size_t kk = 25;
    auto sz = [](int v) { return static_cast<std::size_t>(v); };

    int in = enc.in_channels;
    for (int b = 1; b <= enc.blocks; ++b) {
        const int ch = enc.block_channels(b);
        detail::add_he(ps, detail::block_name("enc", b, "conv1.w"), {sz(ch), sz(in), 5, 5}, sz(in) * kk, seed);
        detail::add_zero(ps, detail::block_name("enc", b, "conv1.b"), sz(ch));
        detail::add_he(ps, detail::block_name("enc", b, "conv2.w"), {sz(ch), sz(ch), 5, 5}, sz(ch) * kk, seed);
        detail::add_zero(ps, detail::block_name("enc", b, "conv2.b"), sz(ch));
        in = ch;
    }
    detail::add_he(ps, "enc.fc.w", {sz(enc.flatten_dim()), sz(enc.bottleneck_dim)}, sz(enc.flatten_dim()), seed);
    detail::add_zero(ps, "enc.fc.b", sz(enc.bottleneck_dim));

    if (has_decoder(kind)) {
        detail::add_he(ps, "dec.fc.w", {sz(enc.bottleneck_dim), sz(enc.flatten_dim())}, sz(enc.bottleneck_dim), seed);
        detail::add_zero(ps, "dec.fc.b", sz(enc.flatten_dim()));
        int din = enc.block_channels(enc.blocks);
        for (int b = enc.blocks; b >= 1; --b) {
            const int ch = enc.block_channels(b);
            detail::add_he(ps, detail::block_name("dec", b, "deconv.w"), {sz(din), sz(ch), 5, 5}, sz(din) * kk, seed);
            detail::add_zero(ps, detail::block_name("dec", b, "deconv.b"), sz(ch));
            din = ch;
        }
        detail::add_he(ps, "dec.out.w", {sz(din), sz(enc.in_channels), 5, 5}, sz(din) * kk, seed);
        detail::add_zero(ps, "dec.out.b", sz(enc.in_channels));
    }
    if (has_classifier(kind)) {
        detail::add_he(ps, "cls.fc.w", {sz(enc.bottleneck_dim), sz(num_classes)}, sz(enc.bottleneck_dim), seed);
        detail::add_zero(ps, "cls.fc.b", sz(num_classes));
    }
    return m;
}

/// Recovers kind and configuration from a parameter set's tensor shapes.
template <class T>
Model<T> model_from_params(nn::ParameterSet<T> ps) {
    Model<T> m;
    const bool dec = ps.contains("dec.fc.w"), cls = ps.contains("cls.fc.w");
    if (!ps.contains("enc.b1.conv1.w") || !ps.contains("enc.fc.w") || (!dec && !cls))
        throw FormatError("checkpoint does not describe an embedding model");
    m.kind = dec && cls ? ModelKind::Combined : dec ? ModelKind::Autoencoder : ModelKind::Classification;
    const auto& c1 = ps.at("enc.b1.conv1.w").value;
    const auto& fc = ps.at("enc.fc.w").value;
    EncoderConfig enc;
    enc.in_channels = static_cast<int>(c1.dim(1));
    enc.base_channels = static_cast<int>(c1.dim(0) / 2);
    enc.bottleneck_dim = static_cast<int>(fc.dim(1));
    const auto bottom_area = fc.dim(0) / static_cast<std::size_t>(enc.block_channels(4));
    const auto side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(bottom_area))));
    enc.resolution = side * 16;
    enc.validate();
    if (enc.flatten_dim() != static_cast<int>(fc.dim(0))) throw FormatError("inconsistent encoder shapes in checkpoint");
    m.encoder = enc;
    m.num_classes = cls ? static_cast<int>(ps.at("cls.fc.w").value.dim(1)) : 0;
    m.params = std::move(ps);
    // Shape check against a reference layout.
    auto ref = init_model<T>(m.kind, enc, std::max(m.num_classes, 2), 0);
    if (ref.params.size() != m.params.size()) throw FormatError("checkpoint tensor count does not match its model kind");
    for (const auto& p : ref.params)
        if (!m.params.contains(p.name) || m.params.at(p.name).value.shape() != p.value.shape())
            throw FormatError("checkpoint tensor " + p.name + " missing or misshapen");
    return m;
}

struct EncoderOutput {
    nn::Var bottleneck;
    std::vector<nn::PoolIndices> pools;
};

template <class T>
EncoderOutput encoder_forward(nn::Tape<T>& t, Model<T>& m, nn::Var input) {
    const auto& enc = m.encoder;
    const auto& s = t.shape(input);
    if (s.size() != 4 || s[1] != static_cast<std::size_t>(enc.in_channels) ||
        s[2] != static_cast<std::size_t>(enc.resolution) || s[3] != static_cast<std::size_t>(enc.resolution))
        throw ShapeError("encoder input " + nn::to_string(s) + " does not match N x " + std::to_string(enc.in_channels) +
                         " x " + std::to_string(enc.resolution) + " x " + std::to_string(enc.resolution));
    auto P = [&](const std::string& n) { return t.param(m.params.at(n)); };
    EncoderOutput out;
    nn::Var x = input;
    for (int b = 1; b <= enc.blocks; ++b) {
        x = nn::relu(t, nn::conv2d(t, x, P(detail::block_name("enc", b, "conv1.w")),
                                   P(detail::block_name("enc", b, "conv1.b"))));
        x = nn::relu(t, nn::conv2d(t, x, P(detail::block_name("enc", b, "conv2.w")),
                                   P(detail::block_name("enc", b, "conv2.b"))));
        auto pooled = nn::maxpool2(t, x);
        x = pooled.out;
        out.pools.push_back(pooled.indices);
    }
    const auto n = t.shape(x)[0];
    x = nn::reshape(t, x, {n, static_cast<std::size_t>(enc.flatten_dim())});
    out.bottleneck = nn::relu(t, nn::fully_connected(t, x, P("enc.fc.w"), P("enc.fc.b")));
    return out;
}

template <class T>
nn::Var decoder_forward(nn::Tape<T>& t, Model<T>& m, nn::Var bottleneck) {
    if (!has_decoder(m.kind)) throw Error("model kind " + to_string(m.kind) + " has no decoder");
    const auto& enc = m.encoder;
    auto P = [&](const std::string& n) { return t.param(m.params.at(n)); };
    const auto n = t.shape(bottleneck)[0];
    const auto side = static_cast<std::size_t>(enc.bottom_size());
    nn::Var x = nn::relu(t, nn::fully_connected(t, bottleneck, P("dec.fc.w"), P("dec.fc.b")));
    x = nn::reshape(t, x, {n, static_cast<std::size_t>(enc.block_channels(enc.blocks)), side, side});
    for (int b = enc.blocks; b >= 1; --b) {
        x = nn::unpool2(t, x);
        x = nn::relu(t, nn::deconv2d(t, x, P(detail::block_name("dec", b, "deconv.w")),
                                     P(detail::block_name("dec", b, "deconv.b"))));
    }
    return nn::deconv2d(t, x, P("dec.out.w"), P("dec.out.b"));
}

template <class T>
nn::Var classifier_forward(nn::Tape<T>& t, Model<T>& m, nn::Var bottleneck) {
    if (!has_classifier(m.kind)) throw Error("model kind " + to_string(m.kind) + " has no classifier head");
    return nn::fully_connected(t, bottleneck, t.param(m.params.at("cls.fc.w")), t.param(m.params.at("cls.fc.b")));
}

/// recon + lambda * class_loss.
inline double combined_loss(double recon_loss, double class_loss, double lambda = 1.0) {
    return recon_loss + lambda * class_loss;
}

struct TrainConfig {
    int batch_size = 100;
    int iterations = 50000;
    std::uint64_t seed = 1;
    nn::AdamConfig adam{};
    double lambda = 1.0;
    double abort_threshold = 1e6;
};

/// Called after each forward pass, before the parameter update.
template <class T>
using TrainObserver =
    std::function<void(std::size_t iteration, std::span<const std::size_t> batch, const nn::Tensor<T>& bottleneck)>;

template <class T>
struct TrainedModel {
    Model<T> model;
    TrainConfig config;
    std::vector<double> loss_curve;
    std::vector<double> accuracy_curve;  // batch accuracy; classifier kinds only
};

/// Copies the selected stacks into an N x k x H x W tensor.
template <class T>
nn::Tensor<T> make_batch(std::span<const ViewStack> stacks, std::span<const std::size_t> which) {
    if (which.empty()) throw Error("empty batch");
    const auto& f = stacks[which[0]];
    const std::size_t per = f.pixels.size();
    nn::Tensor<T> x(nn::Shape{which.size(), static_cast<std::size_t>(f.k), static_cast<std::size_t>(f.height),
                              static_cast<std::size_t>(f.width)});
    for (std::size_t i = 0; i < which.size(); ++i) {
        const auto& s = stacks[which[i]];
        if (s.pixels.size() != per || s.k != f.k) throw ShapeError("stack '" + s.model_id + "' differs in shape");
        std::copy(s.pixels.begin(), s.pixels.end(), x.raw() + i * per);
    }
    return x;
}

/// Seeded per-epoch permutation, consumed with wrap-around.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(derive_seed(seed, "batch-order")) {}

    std::vector<std::size_t> next(std::size_t batch) {
        std::vector<std::size_t> out;
        out.reserve(batch);
        while (out.size() < batch) {
            if (pos_ == perm_.size()) {
                perm_.resize(n_);
                for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
                std::shuffle(perm_.begin(), perm_.end(), rng_);
                pos_ = 0;
            }
            out.push_back(perm_[pos_++]);
        }
        return out;
    }

private:
    std::size_t n_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> perm_;
    std::size_t pos_ = 0;
};

template <class T>
TrainedModel<T> train(ModelKind kind, std::span<const ViewStack> stacks, std::span<const int> labels,
                      int num_classes, const TrainConfig& cfg, const EncoderConfig& enc,
                      const TrainObserver<T>& observer = {}) {
    if (stacks.empty()) throw TrainingError("empty training set");
    if (cfg.batch_size < 1 || cfg.iterations < 1) throw ConfigError("batch_size and iterations must be >= 1");
    for (const auto& s : stacks)
        if (s.k != enc.in_channels || s.height != enc.resolution || s.width != enc.resolution)
            throw ShapeError("stack '" + s.model_id + "' does not match encoder k=" + std::to_string(enc.in_channels) +
                             " resolution=" + std::to_string(enc.resolution));
    if (has_classifier(kind)) {
        if (labels.size() != stacks.size()) throw TrainingError("labels do not match stacks");
        for (int l : labels)
            if (l < 0 || l >= num_classes)
                throw TrainingError("label " + std::to_string(l) + " outside " + std::to_string(num_classes) +
                                    " classes");
    }

    TrainedModel<T> out;
    out.config = cfg;
    out.model = init_model<T>(kind, enc, num_classes, cfg.seed);
    auto& model = out.model;
    nn::AdamState<T> adam(model.params, cfg.adam);
    BatchSampler sampler(stacks.size(), cfg.seed);
    out.loss_curve.reserve(static_cast<std::size_t>(cfg.iterations));

    for (int it = 0; it < cfg.iterations; ++it) {
        const auto batch = sampler.next(static_cast<std::size_t>(cfg.batch_size));
        model.params.zero_grad();
        nn::Tape<T> tape;
        auto input_tensor = make_batch<T>(stacks, batch);
        const nn::Var x = tape.constant(input_tensor);
        const auto enc_out = encoder_forward(tape, model, x);

        std::optional<nn::Var> recon, ce;
        std::vector<int> batch_labels;
        if (has_decoder(kind)) {
            const auto y = decoder_forward(tape, model, enc_out.bottleneck);
            recon = nn::l2_reconstruction_loss(tape, y, input_tensor);
        }
        if (has_classifier(kind)) {
            for (auto i : batch) batch_labels.push_back(labels[i]);
            const auto logits = classifier_forward(tape, model, enc_out.bottleneck);
            ce = nn::softmax_cross_entropy<T>(tape, logits, batch_labels);
            const auto& z = tape.value(logits);
            std::size_t correct = 0;
            const auto C = static_cast<std::size_t>(model.num_classes);
            for (std::size_t s = 0; s < batch.size(); ++s) {
                const T* row = z.raw() + s * C;
                const auto pred = static_cast<int>(std::max_element(row, row + C) - row);
                correct += pred == batch_labels[s];
            }
            out.accuracy_curve.push_back(static_cast<double>(correct) / static_cast<double>(batch.size()));
        }
        nn::Var loss = kind == ModelKind::Autoencoder      ? *recon
                       : kind == ModelKind::Classification ? *ce
                                                           : nn::add_scaled(tape, *recon, *ce, static_cast<T>(cfg.lambda));
        const double lv = static_cast<double>(tape.value(loss)[0]);
        if (!std::isfinite(lv) || lv > cfg.abort_threshold)
            throw TrainingError(to_string(kind) + " training diverged at iteration " + std::to_string(it) +
                                ": loss = " + std::to_string(lv));
        if (observer) observer(static_cast<std::size_t>(it), batch, tape.value(enc_out.bottleneck));
        tape.backward(loss);
        nn::adam_step(model.params, adam);
        out.loss_curve.push_back(lv);
    }
    return out;
}

/// Bottleneck activations for a batch of stacks, computed sample by sample.
template <class T>
std::vector<std::vector<T>> bottlenecks(Model<T>& m, std::span<const ViewStack> stacks, std::size_t chunk = 16) {
    std::vector<std::vector<T>> out;
    out.reserve(stacks.size());
    const auto D = static_cast<std::size_t>(m.encoder.bottleneck_dim);
    for (std::size_t start = 0; start < stacks.size(); start += chunk) {
        std::vector<std::size_t> which;
        for (std::size_t i = start; i < std::min(stacks.size(), start + chunk); ++i) which.push_back(i);
        nn::Tape<T> t;
        const auto x = t.constant(make_batch<T>(stacks, which));
        const auto& z = t.value(encoder_forward(t, m, x).bottleneck);
        for (std::size_t i = 0; i < which.size(); ++i) out.emplace_back(z.raw() + i * D, z.raw() + (i + 1) * D);
    }
    return out;
}

template <class T>
Embedding embed(Model<T>& m, const ViewStack& stack) {
    auto z = bottlenecks(m, std::span<const ViewStack>(&stack, 1));
    return {stack.model_id, std::vector<float>(z[0].begin(), z[0].end())};
}

template <class T>
std::vector<Embedding> embed_all(Model<T>& m, std::span<const ViewStack> stacks) {
    auto z = bottlenecks(m, stacks);
    std::vector<Embedding> out;
    out.reserve(stacks.size());
    for (std::size_t i = 0; i < stacks.size(); ++i)
        out.push_back({stacks[i].model_id, std::vector<float>(z[i].begin(), z[i].end())});
    return out;
}

/// Arg-max class predictions from the classifier head.
template <class T>
std::vector<int> predict(Model<T>& m, std::span<const ViewStack> stacks, std::size_t chunk = 16) {
    std::vector<int> out;
    const auto C = static_cast<std::size_t>(m.num_classes);
    for (std::size_t start = 0; start < stacks.size(); start += chunk) {
        std::vector<std::size_t> which;
        for (std::size_t i = start; i < std::min(stacks.size(), start + chunk); ++i) which.push_back(i);
        nn::Tape<T> t;
        const auto x = t.constant(make_batch<T>(stacks, which));
        const auto& z = t.value(classifier_forward(t, m, encoder_forward(t, m, x).bottleneck));
        for (std::size_t i = 0; i < which.size(); ++i) {
            const T* row = z.raw() + i * C;
            out.push_back(static_cast<int>(std::max_element(row, row + C) - row));
        }
    }
    return out;
}

} // namespace mvembed
