#pragma once

// Shared test helpers: finite-difference gradient checking and small RNG
// utilities. Everything here is independent of the autodiff implementation it
// verifies: expected gradients come from central differences on the forward
// value alone.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "vilu/tensor.hpp"

namespace vilutest {

// Central finite differences vs autodiff on a scalar-valued forward builder.
// `forward` must rebuild the graph from the given leaves on every call (leaf
// values are perturbed in place between calls). Returns the max relative
// error over every leaf entry.
inline double gradcheck(const std::function<vilu::Tensor<double>()>& forward,
                        std::vector<vilu::Tensor<double>*> leaves, double h = 1e-5,
                        double floor_ = 1e-3) {
    for (auto* l : leaves) {
        l->set_requires_grad(true);
        l->zero_grad();
    }
    vilu::Tensor<double> loss = forward();
    backward(loss);
    double worst = 0.0;
    for (auto* l : leaves) {
        auto vals = l->mutable_data();
        auto grads = l->grad();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            double orig = vals[i];
            vals[i] = orig + h;
            double fp = forward().item();
            vals[i] = orig - h;
            double fm = forward().item();
            vals[i] = orig;
            double fd = (fp - fm) / (2.0 * h);
            double ad = grads[i];
            double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor_});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

template <class T, class Rng>
vilu::Tensor<T> randn(vilu::Shape shape, Rng& rng, double std_ = 1.0) {
    std::normal_distribution<double> d(0.0, std_);
    auto t = vilu::Tensor<T>::zeros(std::move(shape));
    for (auto& v : t.mutable_data()) v = T(d(rng));
    return t;
}

}  // namespace vilutest
