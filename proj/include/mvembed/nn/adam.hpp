#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mvembed/nn/tape.hpp"

namespace mvembed::nn {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    AdamConfig cfg;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::uint64_t t = 0;

    AdamState() = default;
    AdamState(const ParameterSet<T>& params, AdamConfig c) : cfg(c) {
        for (const auto& p : params) {
            m.emplace_back(p.value.shape());
            v.emplace_back(p.value.shape());
        }
    }
};

/// One bias-corrected Adam update over every parameter, using each
/// parameter's accumulated grad.
template <class T>
void adam_step(ParameterSet<T>& params, AdamState<T>& st) {
    if (st.m.size() != params.size()) throw ShapeError("Adam state does not match parameter set");
    ++st.t;
    const T b1 = static_cast<T>(st.cfg.beta1), b2 = static_cast<T>(st.cfg.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.t)));
    const T c2 = static_cast<T>(1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.t)));
    const T lr = static_cast<T>(st.cfg.lr), eps = static_cast<T>(st.cfg.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& m = st.m[i];
        auto& v = st.v[i];
        if (m.shape() != p.value.shape()) throw ShapeError("Adam moment shape mismatch for " + p.name);
        T* __restrict pv = p.value.raw();
        const T* __restrict gv = p.grad.raw();
        T* __restrict mv = m.raw();
        T* __restrict vv = v.raw();
        const std::size_t n = p.value.size();
        for (std::size_t j = 0; j < n; ++j) {
            const T g = gv[j];
            mv[j] = b1 * mv[j] + (T{1} - b1) * g;
            vv[j] = b2 * vv[j] + (T{1} - b2) * g * g;
            pv[j] -= lr * (mv[j] / c1) / (std::sqrt(vv[j] / c2) + eps);
        }
    }
}

} // namespace mvembed::nn
