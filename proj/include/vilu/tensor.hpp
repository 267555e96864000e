#pragma once

// Dense row-major tensors with reverse-mode autodiff. The graph is dynamic:
// every op records its parents and a backward closure on the node it creates,
// and backward() replays the tape in reverse topological order. No views,
// no strides; every op materializes its output.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "vilu/errors.hpp"

namespace vilu {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

namespace detail {

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same length as value
    bool is_leaf_param = false;
    bool needs_grad = false;  // true for grad-requiring leaves and their descendants
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

}  // namespace detail

template <class T>
class Tensor {
    using Node = detail::Node<T>;

public:
    Tensor() = default;

    static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }

    static Tensor filled(Shape shape, T v) {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->value.assign(numel(shape), v);
        t.node_->shape = std::move(shape);
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<T> data) {
        if (numel(shape) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        return t;
    }

    static Tensor scalar(T v) { return filled({}, v); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }

    std::span<const T> data() const { return node_->value; }
    // Direct mutation is for leaf initialization and optimizer updates only;
    // mutating an interior graph node invalidates recorded backward closures.
    std::span<T> mutable_data() { return node_->value; }

    T item() const {
        if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->is_leaf_param; }
    void set_requires_grad(bool b) {
        node_->is_leaf_param = b;
        node_->needs_grad = b;
    }

    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Detached value copy (no graph edge).
    Tensor detach() const { return from_data(shape(), {node_->value.begin(), node_->value.end()}); }

    std::shared_ptr<Node> node() const { return node_; }

    // --- graph construction helpers (used by op implementations) ---

    template <class... Parents>
    static Tensor make_op(Shape shape, std::vector<T> value, std::function<void(Node&)> backprop,
                          const Parents&... parents) {
        Tensor t = from_data(std::move(shape), std::move(value));
        (t.attach_parent(parents), ...);
        if (t.node_->needs_grad) t.node_->backprop = std::move(backprop);
        return t;
    }

    void attach_parent(const Tensor& p) {
        node_->parents.push_back(p.node_);
        node_->needs_grad = node_->needs_grad || p.node_->needs_grad;
    }

    friend void backward(const Tensor& loss) {
        if (loss.size() != 1)
            throw Error("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
        // Reverse topological order over the recorded tape.
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, std::size_t>> stack{{loss.node_.get(), 0}};
        seen.insert(loss.node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node* p = n->parents[next++].get();
                if (p->needs_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        loss.node_->ensure_grad();
        loss.node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backprop) {
                for (auto& p : n->parents)
                    if (p->needs_grad) p->ensure_grad();
                n->backprop(*n);
            }
        }
    }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

// Broadcast support: identical shapes, scalar operand, or b's shape a trailing
// suffix of a's shape (bias patterns). Returns the repeat count of b in a.
template <class T>
inline std::size_t broadcast_reps(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sb.size() > sa.size())
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " onto " +
                             shape_str(sa));
    std::size_t off = sa.size() - sb.size();
    for (std::size_t i = 0; i < sb.size(); ++i)
        if (sa[off + i] != sb[i])
            throw DimensionError(std::string(op) + ": shapes " + shape_str(sa) + " and " +
                                 shape_str(sb) + " are not broadcast-compatible");
    std::size_t nb = numel(sb);
    return nb == 0 ? 0 : numel(sa) / nb;
}

}  // namespace detail

// ---- binary elementwise ----

template <class T, class Fwd, class BwdA, class BwdB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd f, BwdA dfa,
                    BwdB dfb) {
    detail::broadcast_reps(a, b, name);
    const auto va = a.data();
    const auto vb = b.data();
    std::size_t nb = vb.size();
    std::vector<T> out(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = f(va[i], vb[i % nb]);
    auto an = a.node();
    auto bn = b.node();
    return Tensor<T>::make_op(
        a.shape(), std::move(out),
        [an, bn, nb, dfa, dfb](detail::Node<T>& n) {
            for (std::size_t i = 0; i < n.value.size(); ++i) {
                T g = n.grad[i];
                T x = an->value[i], y = bn->value[i % nb];
                if (an->needs_grad) an->grad[i] += g * dfa(x, y);
                if (bn->needs_grad) bn->grad[i % nb] += g * dfb(x, y);
            }
        },
        a, b);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <class T>
Tensor<T> max_elem(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "max_elem", [](T x, T y) { return std::max(x, y); },
        [](T x, T y) { return x >= y ? T(1) : T(0); }, [](T x, T y) { return x >= y ? T(0) : T(1); });
}

// ---- unary elementwise ----

template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(const Tensor<T>& a, Fwd f, Bwd df) {
    const auto va = a.data();
    std::vector<T> out(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = f(va[i]);
    auto an = a.node();
    return Tensor<T>::make_op(
        a.shape(), std::move(out),
        [an, df](detail::Node<T>& n) {
            for (std::size_t i = 0; i < n.value.size(); ++i)
                an->grad[i] += n.grad[i] * df(an->value[i], n.value[i]);
        },
        a);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    return unary_op(
        a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, T(-1));
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary_op(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
    return unary_op(
        a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> silu(const Tensor<T>& a) {
    return unary_op(
        a, [](T x) { return x / (T(1) + std::exp(-x)); },
        [](T x, T) {
            T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) + x * (T(1) - s));
        });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
    return unary_op(
        a, [slope](T x) { return x >= T(0) ? x : slope * x; },
        [slope](T x, T) { return x >= T(0) ? T(1) : slope; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
    return unary_op(
        a, [](T x) { return std::abs(x); },
        [](T x, T) { return x >= T(0) ? T(1) : T(-1); });
}

template <class T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
    return unary_op(
        a, [lo](T x) { return std::max(x, lo); }, [lo](T x, T) { return x >= lo ? T(1) : T(0); });
}

// ---- reductions ----

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = std::accumulate(a.data().begin(), a.data().end(), T(0));
    auto an = a.node();
    return Tensor<T>::make_op(
        Shape{}, std::vector<T>{s},
        [an](detail::Node<T>& n) {
            for (auto& g : an->grad) g += n.grad[0];
        },
        a);
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / T(a.size()));
}

// ---- shape ops ----

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.size())
        throw DimensionError("reshape: " + shape_str(a.shape()) + " has " +
                             std::to_string(a.size()) + " elements, target " + shape_str(shape));
    auto an = a.node();
    return Tensor<T>::make_op(
        std::move(shape), {a.data().begin(), a.data().end()},
        [an](detail::Node<T>& n) {
            for (std::size_t i = 0; i < n.value.size(); ++i) an->grad[i] += n.grad[i];
        },
        a);
}

// Reverse the leading axis (token-sequence flip).
template <class T>
Tensor<T> flip_axis0(const Tensor<T>& a) {
    if (a.rank() == 0) throw DimensionError("flip_axis0: scalar input");
    std::size_t rows = a.dim(0);
    std::size_t stride = a.size() / std::max<std::size_t>(rows, 1);
    std::vector<T> out(a.size());
    const auto v = a.data();
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(v.begin() + r * stride, stride, out.begin() + (rows - 1 - r) * stride);
    auto an = a.node();
    return Tensor<T>::make_op(
        a.shape(), std::move(out),
        [an, rows, stride](detail::Node<T>& n) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < stride; ++i)
                    an->grad[r * stride + i] += n.grad[(rows - 1 - r) * stride + i];
        },
        a);
}

// ---- matmul / linear ----

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            T av = pa[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * pb[p * n + j];
        }
    auto an = a.node();
    auto bn = b.node();
    return Tensor<T>::make_op(
        Shape{m, n}, std::move(out),
        [an, bn, m, k, n](detail::Node<T>& node) {
            const T* gc = node.grad.data();
            if (an->needs_grad) {  // dA = dC * B^T
                const T* pb = bn->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        T acc = T(0);
                        for (std::size_t j = 0; j < n; ++j) acc += gc[i * n + j] * pb[p * n + j];
                        an->grad[i * k + p] += acc;
                    }
            }
            if (bn->needs_grad) {  // dB = A^T * dC
                const T* pa = an->value.data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        T av = pa[i * k + p];
                        for (std::size_t j = 0; j < n; ++j)
                            bn->grad[p * n + j] += av * gc[i * n + j];
                    }
            }
        },
        a, b);
}

// y[r,o] = sum_i x[r,i] * w[o,i] + b[o]; weight stored out-major like the
// projection matrices it implements.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(w.shape()));
    std::size_t rows = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    if (b.size() != out_dim)
        throw DimensionError("linear: bias " + shape_str(b.shape()) + " vs out dim " +
                             std::to_string(out_dim));
    std::vector<T> out(rows * out_dim);
    const T* px = x.data().data();
    const T* pw = w.data().data();
    const T* pb = b.data().data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_dim; ++o) {
            T acc = pb[o];
            const T* xr = px + r * in;
            const T* wo = pw + o * in;
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wo[i];
            out[r * out_dim + o] = acc;
        }
    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return Tensor<T>::make_op(
        Shape{rows, out_dim}, std::move(out),
        [xn, wn, bn, rows, in, out_dim](detail::Node<T>& node) {
            const T* g = node.grad.data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < out_dim; ++o) {
                    T go = g[r * out_dim + o];
                    if (go == T(0)) continue;
                    if (xn->needs_grad) {
                        const T* wo = wn->value.data() + o * in;
                        for (std::size_t i = 0; i < in; ++i) xn->grad[r * in + i] += go * wo[i];
                    }
                    if (wn->needs_grad) {
                        const T* xr = xn->value.data() + r * in;
                        for (std::size_t i = 0; i < in; ++i) wn->grad[o * in + i] += go * xr[i];
                    }
                    if (bn->needs_grad) bn->grad[o] += go;
                }
        },
        x, w, b);
}

// ---- softmax / normalization ----

template <class T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
    if (axis >= a.rank()) throw DimensionError("softmax: axis out of range");
    std::size_t ax = a.dim(axis);
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    std::size_t outer = a.size() / (ax * inner);
    std::vector<T> out(a.size());
    const T* v = a.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            std::size_t base = o * ax * inner + i;
            T mx = v[base];
            for (std::size_t c = 1; c < ax; ++c) mx = std::max(mx, v[base + c * inner]);
            T z = T(0);
            for (std::size_t c = 0; c < ax; ++c) {
                T e = std::exp(v[base + c * inner] - mx);
                out[base + c * inner] = e;
                z += e;
            }
            for (std::size_t c = 0; c < ax; ++c) out[base + c * inner] /= z;
        }
    auto an = a.node();
    return Tensor<T>::make_op(
        a.shape(), std::move(out),
        [an, outer, ax, inner](detail::Node<T>& n) {
            // dx = y * (dy - sum(dy * y)) per slice
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    std::size_t base = o * ax * inner + i;
                    T dot = T(0);
                    for (std::size_t c = 0; c < ax; ++c)
                        dot += n.grad[base + c * inner] * n.value[base + c * inner];
                    for (std::size_t c = 0; c < ax; ++c) {
                        std::size_t idx = base + c * inner;
                        an->grad[idx] += n.value[idx] * (n.grad[idx] - dot);
                    }
                }
        },
        a);
}

namespace detail {

// Shared normalization kernel: independent slices of length `len`, slice s
// occupying indices slice_base(s) + j*slice_stride(s). We only need the two
// layouts used here (contiguous rows for layer norm, strided channels handled
// by contiguous spatial blocks for instance norm), so slices are contiguous.
template <class T>
struct NormCache {
    std::vector<T> mean, inv_std;
};

}  // namespace detail

// Normalizes over the last axis; gamma/beta have the last-axis length.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (eps <= T(0)) throw ConfigError("layer_norm: eps must be > 0");
    if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
    std::size_t len = x.dim(x.rank() - 1);
    if (gamma.size() != len || beta.size() != len)
        throw DimensionError("layer_norm: affine params must have length " + std::to_string(len));
    std::size_t slices = x.size() / len;
    std::vector<T> out(x.size());
    auto cache = std::make_shared<detail::NormCache<T>>();
    cache->mean.resize(slices);
    cache->inv_std.resize(slices);
    const T* v = x.data().data();
    const T* g = gamma.data().data();
    const T* b = beta.data().data();
    for (std::size_t s = 0; s < slices; ++s) {
        const T* row = v + s * len;
        T mu = T(0);
        for (std::size_t j = 0; j < len; ++j) mu += row[j];
        mu /= T(len);
        T var = T(0);
        for (std::size_t j = 0; j < len; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= T(len);
        T is = T(1) / std::sqrt(var + eps);
        cache->mean[s] = mu;
        cache->inv_std[s] = is;
        for (std::size_t j = 0; j < len; ++j) out[s * len + j] = (row[j] - mu) * is * g[j] + b[j];
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return Tensor<T>::make_op(
        x.shape(), std::move(out),
        [xn, gn, bn, cache, slices, len](detail::Node<T>& n) {
            for (std::size_t s = 0; s < slices; ++s) {
                T mu = cache->mean[s], is = cache->inv_std[s];
                const T* row = xn->value.data() + s * len;
                const T* dy = n.grad.data() + s * len;
                T m1 = T(0), m2 = T(0);
                for (std::size_t j = 0; j < len; ++j) {
                    T xh = (row[j] - mu) * is;
                    T dyh = dy[j] * gn->value[j];
                    m1 += dyh;
                    m2 += dyh * xh;
                    if (gn->needs_grad) gn->grad[j] += dy[j] * xh;
                    if (bn->needs_grad) bn->grad[j] += dy[j];
                }
                if (!xn->needs_grad) continue;
                m1 /= T(len);
                m2 /= T(len);
                for (std::size_t j = 0; j < len; ++j) {
                    T xh = (row[j] - mu) * is;
                    xn->grad[s * len + j] += is * (dy[j] * gn->value[j] - m1 - xh * m2);
                }
            }
        },
        x, gamma, beta);
}

// Instance norm over [B, C, spatial...]: each (b, c) slice normalized over its
// spatial extent; gamma/beta per channel.
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    if (eps <= T(0)) throw ConfigError("instance_norm: eps must be > 0");
    if (x.rank() < 3) throw DimensionError("instance_norm: expected [B,C,spatial...] input");
    std::size_t batch = x.dim(0), ch = x.dim(1);
    std::size_t sp = x.size() / (batch * ch);
    if (gamma.size() != ch || beta.size() != ch)
        throw DimensionError("instance_norm: affine params must have length " + std::to_string(ch));
    std::size_t slices = batch * ch;
    std::vector<T> out(x.size());
    auto cache = std::make_shared<detail::NormCache<T>>();
    cache->mean.resize(slices);
    cache->inv_std.resize(slices);
    const T* v = x.data().data();
    for (std::size_t s = 0; s < slices; ++s) {
        std::size_t c = s % ch;
        const T* row = v + s * sp;
        T mu = T(0);
        for (std::size_t j = 0; j < sp; ++j) mu += row[j];
        mu /= T(sp);
        T var = T(0);
        for (std::size_t j = 0; j < sp; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= T(sp);
        T is = T(1) / std::sqrt(var + eps);
        cache->mean[s] = mu;
        cache->inv_std[s] = is;
        T gc = gamma.data()[c], bc = beta.data()[c];
        for (std::size_t j = 0; j < sp; ++j) out[s * sp + j] = (row[j] - mu) * is * gc + bc;
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return Tensor<T>::make_op(
        x.shape(), std::move(out),
        [xn, gn, bn, cache, slices, sp, ch](detail::Node<T>& n) {
            for (std::size_t s = 0; s < slices; ++s) {
                std::size_t c = s % ch;
                T mu = cache->mean[s], is = cache->inv_std[s];
                T gc = gn->value[c];
                const T* row = xn->value.data() + s * sp;
                const T* dy = n.grad.data() + s * sp;
                T m1 = T(0), m2 = T(0);
                for (std::size_t j = 0; j < sp; ++j) {
                    T xh = (row[j] - mu) * is;
                    T dyh = dy[j] * gc;
                    m1 += dyh;
                    m2 += dyh * xh;
                    if (gn->needs_grad) gn->grad[c] += dy[j] * xh;
                    if (bn->needs_grad) bn->grad[c] += dy[j];
                }
                if (!xn->needs_grad) continue;
                m1 /= T(sp);
                m2 /= T(sp);
                for (std::size_t j = 0; j < sp; ++j) {
                    T xh = (row[j] - mu) * is;
                    xn->grad[s * sp + j] += is * (dy[j] * gc - m1 - xh * m2);
                }
            }
        },
        x, gamma, beta);
}

template <class T>
inline void check_finite(const Tensor<T>& t, const char* where) {
    for (T v : t.data())
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + where);
}

}  // namespace vilu
