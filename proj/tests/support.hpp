#pragma once

// Fixtures and independent oracles shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mvembed/geometry.hpp"
#include "mvembed/models.hpp"
#include "mvembed/nn/ops.hpp"
#include "mvembed/nn/tape.hpp"

namespace testsupport {

using namespace mvembed;

inline std::string tetra_obj() {
    return "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
           "f 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n";
}

/// Axis-aligned cube with corners (0,0,0)..(1,1,1).
inline Mesh unit_cube() {
    Mesh m;
    for (int i = 0; i < 8; ++i) m.vertices.push_back({double(i & 1), double((i >> 1) & 1), double((i >> 2) & 1)});
    auto quad = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t d) {
        m.faces.push_back({a, b, c});
        m.faces.push_back({a, c, d});
    };
    quad(0, 1, 3, 2);
    quad(4, 6, 7, 5);
    quad(0, 4, 5, 1);
    quad(2, 3, 7, 6);
    quad(0, 2, 6, 4);
    quad(1, 5, 7, 3);
    return m;
}

/// Geodesic sphere: a subdivided octahedron pushed onto the unit sphere.
inline Mesh unit_sphere(int subdivisions) {
    Mesh m;
    m.vertices = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    m.faces = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4}, {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
    for (int s = 0; s < subdivisions; ++s) {
        std::vector<Face> next;
        std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
        auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
            auto key = std::minmax(a, b);
            auto it = mid.find(key);
            if (it != mid.end()) return it->second;
            m.vertices.push_back(normalized((m.vertices[a] + m.vertices[b]) * 0.5));
            const auto id = static_cast<std::uint32_t>(m.vertices.size() - 1);
            mid.emplace(key, id);
            return id;
        };
        for (const auto& f : m.faces) {
            const auto ab = midpoint(f[0], f[1]), bc = midpoint(f[1], f[2]), ca = midpoint(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({ab, f[1], bc});
            next.push_back({ca, bc, f[2]});
            next.push_back({ab, bc, ca});
        }
        m.faces = std::move(next);
    }
    return m;
}

inline Mesh random_mesh(std::mt19937_64& rng, int n_vertices, int n_faces) {
    std::normal_distribution<double> g;
    std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(n_vertices - 1));
    Mesh m;
    for (int i = 0; i < n_vertices; ++i) m.vertices.push_back({g(rng), g(rng), g(rng)});
    for (int i = 0; i < n_faces; ++i) m.faces.push_back({pick(rng), pick(rng), pick(rng)});
    return m;
}

template <class T>
nn::Tensor<T> random_tensor(std::mt19937_64& rng, nn::Shape s, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    nn::Tensor<T> t(std::move(s));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(g(rng));
    return t;
}

// ---- finite-difference gradient checks --------------------------------------------

/// Reference precision for the numeric side of a gradient check. The analytic
/// gradients under test are computed in double.
using Ref = long double;

/// Builds a scalar loss from parameter leaves on a fresh tape.
template <class T>
using LossFnT = std::function<nn::Var(nn::Tape<T>&, nn::ParameterSet<T>&)>;
using LossFn = LossFnT<double>;

template <class T>
T scalar_of(const nn::Tape<T>&);

template <class U, class T>
nn::ParameterSet<U> cast_params(const nn::ParameterSet<T>& ps) {
    nn::ParameterSet<U> out;
    out.reserve(ps.size());
    for (const auto& p : ps) out.add(p.name, p.value.template cast<U>());
    return out;
}

struct GradCheckResult {
    double max_rel_error = 0;
    std::size_t coords = 0;
    std::size_t kinks = 0;  // probes rejected because the loss is not smooth there
    std::string worst;
};

/// |a - n| / max(|a|, |n|, floor)
inline double rel_error(double a, double n, double floor = 1e-6) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Compares the double-precision backward() of `loss` on `ps` against
/// central differences of `ref_loss` evaluated in extended precision on
/// `ref_ps`, which must mirror `ps`. At most `per_tensor` randomly chosen
/// coordinates of each parameter are probed.
///
/// A probe whose interval [x-h, x+h] straddles a relu or max-pool switch has
/// one-sided slopes that disagree; it is counted as a kink and another
/// coordinate is drawn. A kink that slips under the 1e-5 slope test can move
/// the central difference by at most half that, so it cannot mask an error at
/// the 1e-4 level.
inline GradCheckResult gradcheck(nn::ParameterSet<double>& ps, const LossFn& loss, nn::ParameterSet<Ref>& ref_ps,
                                 const LossFnT<Ref>& ref_loss, std::mt19937_64& rng, Ref h,
                                 std::size_t per_tensor = static_cast<std::size_t>(-1)) {
    ps.zero_grad();
    {
        nn::Tape<double> t;
        t.backward(loss(t, ps));
    }
    auto eval = [&] {
        nn::Tape<Ref> t;
        return t.value(ref_loss(t, ref_ps))[0];
    };
    const Ref base = eval();
    GradCheckResult r;
    for (std::size_t k = 0; k < ps.size(); ++k) {
        auto& p = ps[k];
        auto& q = ref_ps[k];
        std::vector<std::size_t> idx(p.value.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        std::size_t accepted = 0;
        for (auto i : idx) {
            if (accepted == per_tensor) break;
            const Ref keep = q.value[i];
            q.value[i] = keep + h;
            const Ref up = eval();
            q.value[i] = keep - h;
            const Ref down = eval();
            q.value[i] = keep;
            const auto forward = static_cast<double>((up - base) / h);
            const auto backward = static_cast<double>((base - down) / h);
            if (rel_error(forward, backward) > 1e-5) {
                ++r.kinks;
                continue;
            }
            ++accepted;
            const auto numeric = static_cast<double>((up - down) / (2 * h));
            const double e = rel_error(p.grad[i], numeric);
            ++r.coords;
            if (e > r.max_rel_error) {
                r.max_rel_error = e;
                r.worst = p.name + "[" + std::to_string(i) + "] analytic " + std::to_string(p.grad[i]) +
                          " numeric " + std::to_string(numeric);
            }
        }
    }
    return r;
}

/// Random fixed projection so a tensor-valued op becomes a scalar loss with
/// a generic upstream gradient.
template <class T>
nn::Var project(nn::Tape<T>& t, nn::Var y, std::uint64_t seed) {
    const auto n = t.value(y).size();
    std::mt19937_64 r(seed);
    const auto flat = nn::reshape(t, y, {1, n});
    const auto w = t.constant(random_tensor<T>(r, {n, 1}));
    const auto b = t.constant(nn::Tensor<T>(nn::Shape{1}));
    return nn::reshape(t, nn::fully_connected(t, flat, w, b), {1});
}

struct OpCase {
    std::string name;
    std::function<void(nn::ParameterSet<double>&, std::mt19937_64&)> setup;
    LossFn loss;
    LossFnT<Ref> ref_loss;
};

/// One gradient-check case per nn op, on small random shapes.
inline std::vector<OpCase> op_cases(std::mt19937_64& rng) {
    std::vector<OpCase> cases;
    auto add = [&](std::string name, auto setup, auto f) { cases.push_back({std::move(name), setup, f, f}); };
    const std::uint64_t s = rng();

    add("conv2d",
        [](auto& ps, auto& r) {
            ps.add("x", random_tensor<double>(r, {2, 3, 6, 5}));
            ps.add("w", random_tensor<double>(r, {4, 3, 5, 5}, 0.3));
            ps.add("b", random_tensor<double>(r, {4}));
        },
        [=](auto& t, auto& ps) {
            return project(t, nn::conv2d(t, t.param(ps.at("x")), t.param(ps.at("w")), t.param(ps.at("b"))), s);
        });
    add("deconv2d",
        [](auto& ps, auto& r) {
            ps.add("x", random_tensor<double>(r, {2, 3, 4, 6}));
            ps.add("w", random_tensor<double>(r, {3, 2, 5, 5}, 0.3));
            ps.add("b", random_tensor<double>(r, {2}));
        },
        [=](auto& t, auto& ps) {
            return project(t, nn::deconv2d(t, t.param(ps.at("x")), t.param(ps.at("w")), t.param(ps.at("b"))), s + 1);
        });
    add("relu", [](auto& ps, auto& r) { ps.add("x", random_tensor<double>(r, {3, 7})); },
        [=](auto& t, auto& ps) { return project(t, nn::relu(t, t.param(ps.at("x"))), s + 2); });
    add("maxpool2", [](auto& ps, auto& r) { ps.add("x", random_tensor<double>(r, {2, 2, 4, 6})); },
        [=](auto& t, auto& ps) { return project(t, nn::maxpool2(t, t.param(ps.at("x"))).out, s + 3); });
    add("unpool2", [](auto& ps, auto& r) { ps.add("x", random_tensor<double>(r, {2, 2, 3, 2})); },
        [=](auto& t, auto& ps) { return project(t, nn::unpool2(t, t.param(ps.at("x"))), s + 4); });
    add("reshape", [](auto& ps, auto& r) { ps.add("x", random_tensor<double>(r, {2, 3, 2, 2})); },
        [=](auto& t, auto& ps) { return project(t, nn::reshape(t, t.param(ps.at("x")), {2, 12}), s + 5); });
    add("fully_connected",
        [](auto& ps, auto& r) {
            ps.add("x", random_tensor<double>(r, {3, 5}));
            ps.add("w", random_tensor<double>(r, {5, 4}));
            ps.add("b", random_tensor<double>(r, {4}));
        },
        [=](auto& t, auto& ps) {
            return project(
                t, nn::fully_connected(t, t.param(ps.at("x")), t.param(ps.at("w")), t.param(ps.at("b"))), s + 6);
        });
    add("softmax_cross_entropy", [](auto& ps, auto& r) { ps.add("z", random_tensor<double>(r, {4, 5}, 2.0)); },
        [](auto& t, auto& ps) {
            using T = decltype(scalar_of(t));
            const std::vector<int> labels{0, 3, 4, 3};
            return nn::softmax_cross_entropy<T>(t, t.param(ps.at("z")), labels);
        });
    add("l2_reconstruction_loss", [](auto& ps, auto& r) { ps.add("y", random_tensor<double>(r, {2, 2, 3, 3})); },
        [=](auto& t, auto& ps) {
            using T = decltype(scalar_of(t));
            std::mt19937_64 r(s + 7);
            return nn::l2_reconstruction_loss(t, t.param(ps.at("y")), random_tensor<T>(r, {2, 2, 3, 3}));
        });
    add("add_scaled",
        [](auto& ps, auto& r) {
            ps.add("a", random_tensor<double>(r, {1}));
            ps.add("b", random_tensor<double>(r, {1}));
        },
        [](auto& t, auto& ps) {
            using T = decltype(scalar_of(t));
            const auto a = nn::reshape(t, t.param(ps.at("a")), {1, 1});
            const auto b = nn::reshape(t, t.param(ps.at("b")), {1, 1});
            // squaring makes the gradient depend on the values
            const auto a2 = nn::fully_connected(t, a, a, t.constant(nn::Tensor<T>(nn::Shape{1})));
            return nn::reshape(t, nn::add_scaled(t, a2, b, T(0.7)), {1});
        });
    return cases;
}

/// The miniature end-to-end configuration.
inline EncoderConfig mini_encoder(int k = 2) {
    EncoderConfig e;
    e.resolution = 16;
    e.in_channels = k;
    e.base_channels = 2;
    e.bottleneck_dim = 8;
    return e;
}

/// Full training loss of `m` on a fixed batch. The returned function reads
/// m.params and ignores its parameter-set argument, so checks must perturb
/// m.params itself.
template <class T>
LossFnT<T> model_loss(Model<T>& m, nn::Tensor<T> batch, std::vector<int> labels) {
    return [&m, batch = std::move(batch), labels = std::move(labels)](nn::Tape<T>& t, nn::ParameterSet<T>&) {
        const auto x = t.constant(batch);
        const auto z = encoder_forward(t, m, x);
        std::optional<nn::Var> recon, ce;
        if (has_decoder(m.kind)) recon = nn::l2_reconstruction_loss(t, decoder_forward(t, m, z.bottleneck), batch);
        if (has_classifier(m.kind)) ce = nn::softmax_cross_entropy<T>(t, classifier_forward(t, m, z.bottleneck), labels);
        if (m.kind == ModelKind::Autoencoder) return *recon;
        if (m.kind == ModelKind::Classification) return *ce;
        return nn::add_scaled(t, *recon, *ce, T(1));
    };
}

/// Gradient check of a whole model: double backward against an
/// extended-precision copy of the same parameters.
inline GradCheckResult model_gradcheck(Model<double>& m, const nn::Tensor<double>& batch, const std::vector<int>& labels,
                                       std::mt19937_64& rng, Ref h, std::size_t per_tensor) {
    Model<Ref> ref;
    ref.kind = m.kind;
    ref.encoder = m.encoder;
    ref.num_classes = m.num_classes;
    ref.params = cast_params<Ref>(m.params);
    const auto loss = model_loss<double>(m, batch, labels);
    const auto ref_loss = model_loss<Ref>(ref, batch.cast<Ref>(), labels);
    return gradcheck(m.params, loss, ref.params, ref_loss, rng, h, per_tensor);
}

/// Gradient check of one op case.
inline GradCheckResult op_gradcheck(const OpCase& c, std::mt19937_64& rng, Ref h) {
    nn::ParameterSet<double> ps;
    c.setup(ps, rng);
    auto ref = cast_params<Ref>(ps);
    return gradcheck(ps, c.loss, ref, c.ref_loss, rng, h);
}

} // namespace testsupport
