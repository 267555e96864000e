#pragma once

// Training objective: soft Dice + cross-entropy with unit weights, consuming
// logits. Targets are flat class-id grids matching the logits' non-channel
// extents (batch-major).

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vilu/tensor.hpp"

namespace vilu {

namespace detail {

template <class T>
void check_loss_layout(const Tensor<T>& logits, const std::vector<int>& target,
                       std::size_t& batch, std::size_t& classes, std::size_t& sp) {
    if (logits.rank() < 3)
        throw DimensionError("loss: logits must be [B, K, spatial...], got " +
                             shape_str(logits.shape()));
    batch = logits.dim(0);
    classes = logits.dim(1);
    sp = logits.size() / (batch * classes);
    if (target.size() != batch * sp)
        throw DimensionError("loss: target has " + std::to_string(target.size()) +
                             " entries, expected " + std::to_string(batch * sp));
    for (int t : target)
        if (t < 0 || std::size_t(t) >= classes)
            throw LabelError("loss: class index " + std::to_string(t) + " outside [0, " +
                             std::to_string(classes) + ")");
}

}  // namespace detail

// Mean pixelwise negative log softmax probability of the true class.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& target) {
    std::size_t batch, classes, sp;
    detail::check_loss_layout(logits, target, batch, classes, sp);
    std::size_t n = batch * sp;
    const T* v = logits.data().data();
    // softmax probabilities cached for the backward pass
    auto probs = std::make_shared<std::vector<T>>(logits.size());
    T loss = T(0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < sp; ++i) {
            std::size_t base = b * classes * sp + i;
            T mx = v[base];
            for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, v[base + c * sp]);
            T z = T(0);
            for (std::size_t c = 0; c < classes; ++c) z += std::exp(v[base + c * sp] - mx);
            T logz = std::log(z) + mx;
            for (std::size_t c = 0; c < classes; ++c)
                (*probs)[base + c * sp] = std::exp(v[base + c * sp] - logz);
            loss -= (v[base + std::size_t(target[b * sp + i]) * sp] - logz);
        }
    loss /= T(n);
    if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
    auto ln = logits.node();
    auto tgt = std::make_shared<std::vector<int>>(target);
    return Tensor<T>::make_op(
        Shape{}, std::vector<T>{loss},
        [ln, probs, tgt, batch, classes, sp, n](detail::Node<T>& node) {
            T g = node.grad[0] / T(n);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < sp; ++i) {
                    std::size_t base = b * classes * sp + i;
                    int t = (*tgt)[b * sp + i];
                    for (std::size_t c = 0; c < classes; ++c) {
                        T p = (*probs)[base + c * sp];
                        ln->grad[base + c * sp] += g * (p - (int(c) == t ? T(1) : T(0)));
                    }
                }
        },
        logits);
}

// 1 - mean over classes of (2 sum(p*g) + eps) / (sum(p) + sum(g) + eps),
// sums pooled over batch and space, one-hot g, soft p.
template <class T>
Tensor<T> soft_dice_loss(const Tensor<T>& probs, const std::vector<int>& target, T eps = T(1e-5)) {
    std::size_t batch, classes, sp;
    detail::check_loss_layout(probs, target, batch, classes, sp);
    const T* v = probs.data().data();
    std::vector<T> inter(classes, T(0)), psum(classes, T(0)), gsum(classes, T(0));
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < sp; ++i) {
            int t = target[b * sp + i];
            gsum[t] += T(1);
            for (std::size_t c = 0; c < classes; ++c) {
                T p = v[b * classes * sp + c * sp + i];
                psum[c] += p;
                if (int(c) == t) inter[c] += p;
            }
        }
    T loss = T(1);
    auto num = std::make_shared<std::vector<T>>(classes);
    auto den = std::make_shared<std::vector<T>>(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        (*num)[c] = T(2) * inter[c] + eps;
        (*den)[c] = psum[c] + gsum[c] + eps;
        loss -= (*num)[c] / (*den)[c] / T(classes);
    }
    if (!std::isfinite(loss)) throw NumericError("soft_dice_loss: non-finite loss");
    auto pn = probs.node();
    auto tgt = std::make_shared<std::vector<int>>(target);
    return Tensor<T>::make_op(
        Shape{}, std::vector<T>{loss},
        [pn, tgt, num, den, batch, classes, sp](detail::Node<T>& node) {
            T g = node.grad[0];
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < sp; ++i) {
                    int t = (*tgt)[b * sp + i];
                    for (std::size_t c = 0; c < classes; ++c) {
                        T gk = int(c) == t ? T(1) : T(0);
                        T d = (*den)[c];
                        // d/dp of num/den; loss carries -1/K
                        T grad = -(T(2) * gk * d - (*num)[c]) / (d * d) / T(classes);
                        pn->grad[b * classes * sp + c * sp + i] += g * grad;
                    }
                }
        },
        probs);
}

// L = L_dice + L_ce with unit weights; consumes logits.
template <class T>
Tensor<T> combined_loss(const Tensor<T>& logits, const std::vector<int>& target) {
    return add(soft_dice_loss(softmax(logits, 1), target), cross_entropy(logits, target));
}

}  // namespace vilu
