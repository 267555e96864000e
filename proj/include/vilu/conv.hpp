#pragma once

// NCHW convolutions via direct loops, plus the causal depthwise 1-D
// convolution used along the token axis inside ViL blocks.

#include <cstddef>
#include <vector>

#include "vilu/tensor.hpp"

namespace vilu {

// x: [B, C, H, W], w: [O, C, kh, kw], b: [O]
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride,
                 std::size_t padding) {
    if (x.rank() != 4 || w.rank() != 4)
        throw DimensionError("conv2d: expected 4-D input and weight, got " + shape_str(x.shape()) +
                             " and " + shape_str(w.shape()));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin)
        throw DimensionError("conv2d: weight expects " + std::to_string(w.dim(1)) +
                             " input channels, input has " + std::to_string(cin));
    if (b.size() != cout) throw DimensionError("conv2d: bias length != output channels");
    if (kh > h + 2 * padding || kw > wd + 2 * padding)
        throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                             " larger than padded input " + std::to_string(h + 2 * padding) + "x" +
                             std::to_string(wd + 2 * padding));
    std::size_t ho = (h + 2 * padding - kh) / stride + 1;
    std::size_t wo = (wd + 2 * padding - kw) / stride + 1;

    std::vector<T> out(batch * cout * ho * wo);
    const T* px = x.data().data();
    const T* pw = w.data().data();
    const T* pb = b.data().data();
    auto xi = [&](std::size_t n, std::size_t c, std::size_t i, std::size_t j) {
        return ((n * cin + c) * h + i) * wd + j;
    };
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    T acc = pb[o];
                    for (std::size_t c = 0; c < cin; ++c)
                        for (std::size_t ki = 0; ki < kh; ++ki) {
                            std::ptrdiff_t ii = std::ptrdiff_t(i * stride + ki) -
                                                std::ptrdiff_t(padding);
                            if (ii < 0 || ii >= std::ptrdiff_t(h)) continue;
                            for (std::size_t kj = 0; kj < kw; ++kj) {
                                std::ptrdiff_t jj = std::ptrdiff_t(j * stride + kj) -
                                                    std::ptrdiff_t(padding);
                                if (jj < 0 || jj >= std::ptrdiff_t(wd)) continue;
                                acc += px[xi(n, c, ii, jj)] *
                                       pw[((o * cin + c) * kh + ki) * kw + kj];
                            }
                        }
                    out[((n * cout + o) * ho + i) * wo + j] = acc;
                }

    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return Tensor<T>::make_op(
        Shape{batch, cout, ho, wo}, std::move(out),
        [xn, wn, bn, batch, cin, cout, h, wd, kh, kw, ho, wo, stride,
         padding](detail::Node<T>& node) {
            const T* g = node.grad.data();
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t o = 0; o < cout; ++o)
                    for (std::size_t i = 0; i < ho; ++i)
                        for (std::size_t j = 0; j < wo; ++j) {
                            T go = g[((n * cout + o) * ho + i) * wo + j];
                            if (go == T(0)) continue;
                            if (bn->needs_grad) bn->grad[o] += go;
                            for (std::size_t c = 0; c < cin; ++c)
                                for (std::size_t ki = 0; ki < kh; ++ki) {
                                    std::ptrdiff_t ii = std::ptrdiff_t(i * stride + ki) -
                                                        std::ptrdiff_t(padding);
                                    if (ii < 0 || ii >= std::ptrdiff_t(h)) continue;
                                    for (std::size_t kj = 0; kj < kw; ++kj) {
                                        std::ptrdiff_t jj = std::ptrdiff_t(j * stride + kj) -
                                                            std::ptrdiff_t(padding);
                                        if (jj < 0 || jj >= std::ptrdiff_t(wd)) continue;
                                        std::size_t xo = ((n * cin + c) * h + ii) * wd + jj;
                                        std::size_t wo_ = ((o * cin + c) * kh + ki) * kw + kj;
                                        if (xn->needs_grad)
                                            xn->grad[xo] += go * wn->value[wo_];
                                        if (wn->needs_grad)
                                            wn->grad[wo_] += go * xn->value[xo];
                                    }
                                }
                        }
        },
        x, w, b);
}

// Adjoint of a stride-s conv with kernel == stride and no padding, so output
// extents are exactly input extents * stride. x: [B, C, H, W],
// w: [C, O, k, k] (input-major, matching the conv it transposes), b: [O].
template <class T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                            std::size_t stride) {
    if (x.rank() != 4 || w.rank() != 4)
        throw DimensionError("transposed_conv2d: expected 4-D input and weight");
    if (stride < 1) throw ConfigError("transposed_conv2d: stride must be >= 1");
    std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    std::size_t cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(0) != cin)
        throw DimensionError("transposed_conv2d: weight expects " + std::to_string(w.dim(0)) +
                             " input channels, input has " + std::to_string(cin));
    if (b.size() != cout) throw DimensionError("transposed_conv2d: bias length != output channels");
    std::size_t ho = (h - 1) * stride + kh;
    std::size_t wo = (wd - 1) * stride + kw;

    std::vector<T> out(batch * cout * ho * wo, T(0));
    const T* px = x.data().data();
    const T* pw = w.data().data();
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < wd; ++j) {
                    T xv = px[((n * cin + c) * h + i) * wd + j];
                    for (std::size_t o = 0; o < cout; ++o)
                        for (std::size_t ki = 0; ki < kh; ++ki)
                            for (std::size_t kj = 0; kj < kw; ++kj)
                                out[((n * cout + o) * ho + i * stride + ki) * wo + j * stride +
                                    kj] += xv * pw[((c * cout + o) * kh + ki) * kw + kj];
                }
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t s = 0; s < ho * wo; ++s)
                out[(n * cout + o) * ho * wo + s] += b.data()[o];

    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return Tensor<T>::make_op(
        Shape{batch, cout, ho, wo}, std::move(out),
        [xn, wn, bn, batch, cin, cout, h, wd, kh, kw, ho, wo, stride](detail::Node<T>& node) {
            const T* g = node.grad.data();
            if (bn->needs_grad)
                for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t o = 0; o < cout; ++o)
                        for (std::size_t s = 0; s < ho * wo; ++s)
                            bn->grad[o] += g[(n * cout + o) * ho * wo + s];
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t i = 0; i < h; ++i)
                        for (std::size_t j = 0; j < wd; ++j) {
                            std::size_t xidx = ((n * cin + c) * h + i) * wd + j;
                            for (std::size_t o = 0; o < cout; ++o)
                                for (std::size_t ki = 0; ki < kh; ++ki)
                                    for (std::size_t kj = 0; kj < kw; ++kj) {
                                        T go = g[((n * cout + o) * ho + i * stride + ki) * wo +
                                                 j * stride + kj];
                                        std::size_t widx = ((c * cout + o) * kh + ki) * kw + kj;
                                        if (xn->needs_grad) xn->grad[xidx] += go * wn->value[widx];
                                        if (wn->needs_grad)
                                            wn->grad[widx] += go * xn->value[xidx];
                                    }
                        }
        },
        x, w, b);
}

// Causal depthwise conv over the leading (token) axis. x: [T, C],
// w: [C, k] with tap j reaching back j tokens, b: [C].
template <class T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
        throw DimensionError("causal_conv1d: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(w.shape()));
    std::size_t tokens = x.dim(0), ch = x.dim(1), k = w.dim(1);
    if (b.size() != ch) throw DimensionError("causal_conv1d: bias length != channels");
    std::vector<T> out(tokens * ch);
    const T* px = x.data().data();
    const T* pw = w.data().data();
    for (std::size_t t = 0; t < tokens; ++t)
        for (std::size_t c = 0; c < ch; ++c) {
            T acc = b.data()[c];
            for (std::size_t j = 0; j < k && j <= t; ++j)
                acc += pw[c * k + j] * px[(t - j) * ch + c];
            out[t * ch + c] = acc;
        }
    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return Tensor<T>::make_op(
        Shape{tokens, ch}, std::move(out),
        [xn, wn, bn, tokens, ch, k](detail::Node<T>& node) {
            const T* g = node.grad.data();
            for (std::size_t t = 0; t < tokens; ++t)
                for (std::size_t c = 0; c < ch; ++c) {
                    T go = g[t * ch + c];
                    if (go == T(0)) continue;
                    if (bn->needs_grad) bn->grad[c] += go;
                    for (std::size_t j = 0; j < k && j <= t; ++j) {
                        if (xn->needs_grad) xn->grad[(t - j) * ch + c] += go * wn->value[c * k + j];
                        if (wn->needs_grad) wn->grad[c * k + j] += go * xn->value[(t - j) * ch + c];
                    }
                }
        },
        x, w, b);
}

}  // namespace vilu
