#pragma once

// Adam with bias correction over a named parameter list. Moments are tensors
// so they serialize through the checkpoint container bitwise.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "vilu/tensor.hpp"

namespace vilu {

template <class T>
struct AdamConfig {
    T lr = T(0.005);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

template <class T>
struct AdamState {
    std::size_t step = 0;
    std::vector<std::pair<std::string, Tensor<T>>> m, v;  // aligned with the param list
};

template <class T>
AdamState<T> make_adam_state(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
    AdamState<T> s;
    for (const auto& [name, t] : params) {
        s.m.emplace_back("adam.m." + name, Tensor<T>::zeros(t.shape()));
        s.v.emplace_back("adam.v." + name, Tensor<T>::zeros(t.shape()));
    }
    return s;
}

// One update over every parameter; reads the accumulated gradients in place.
template <class T>
void adam_step(std::vector<std::pair<std::string, Tensor<T>>>& params, AdamState<T>& state,
               const AdamConfig<T>& cfg) {
    if (state.m.size() != params.size())
        throw ConfigError("adam: moment count does not match parameter count");
    if (!(cfg.lr > 0)) throw ConfigError("adam: lr must be > 0");
    ++state.step;
    T bc1 = T(1) - std::pow(cfg.beta1, T(state.step));
    T bc2 = T(1) - std::pow(cfg.beta2, T(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, p] = params[i];
        if (!p.has_grad())
            throw NumericError("adam: parameter '" + name + "' has no gradient");
        auto g = p.grad();
        auto th = p.mutable_data();
        auto m = state.m[i].second.mutable_data();
        auto v = state.v[i].second.mutable_data();
        for (std::size_t j = 0; j < th.size(); ++j) {
            if (!std::isfinite(g[j]))
                throw NumericError("adam: non-finite gradient in parameter '" + name + "'");
            m[j] = cfg.beta1 * m[j] + (T(1) - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (T(1) - cfg.beta2) * g[j] * g[j];
            th[j] -= cfg.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.eps);
        }
    }
}

// Global-norm gradient clipping; returns the pre-clip norm.
template <class T>
T clip_grad_norm(std::vector<std::pair<std::string, Tensor<T>>>& params, T max_norm) {
    T sq = T(0);
    for (auto& [name, p] : params)
        if (p.has_grad())
            for (T g : p.grad()) sq += g * g;
    T norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        T s = max_norm / norm;
        for (auto& [name, p] : params)
            if (p.has_grad())
                for (T& g : p.mutable_grad()) g *= s;
    }
    return norm;
}

}  // namespace vilu
