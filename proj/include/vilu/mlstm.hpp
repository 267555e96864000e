#pragma once

// Matrix-memory LSTM cell: exponential input/forget gates stabilized in the
// log domain, a covariance (rank-1 outer product) cell update, a normalizer
// state, and a sigmoid output gate. Three evaluation routes:
//   - mlstm_step / sequential fold: the defining recurrence, value-only
//   - mlstm_sequence: autodiff path built on a fused scan with analytic
//     backward
//   - mlstm_sequence_chunked: chunkwise-parallel form, value-only
// plus the residual ViL block that wraps the cell.

#include <cmath>
#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "vilu/conv.hpp"
#include "vilu/tensor.hpp"

namespace vilu {

// Log-domain stand-in for the m = -inf initial stabilizer.
template <class T>
constexpr T kStabilizerSentinel = T(-1e30);

namespace detail {

// The stabilized states carry an implicit exp(m) factor, so the literal
// max(|n^T q|, 1) denominator of the readout becomes max(|n~^T q|, exp(-m))
// in the stabilized frame. Clamped to stay finite.
template <class T>
inline T readout_denominator(T s, T m) {
    constexpr T kMaxExpArg = sizeof(T) == 4 ? T(80) : T(700);
    return std::max(std::abs(s), std::exp(std::min(-m, kMaxExpArg)));
}

}  // namespace detail

template <class T>
struct MlstmParams {
    std::size_t num_heads = 1;
    std::size_t head_dim = 1;
    Tensor<T> w_q, w_k, w_v;  // [H*hd, model_dim], rows grouped by head
    Tensor<T> w_i, w_f;       // [H, model_dim] gate pre-activation weights
    Tensor<T> b_i, b_f;       // [H]
    Tensor<T> w_o, b_o;       // output gate projection [model_dim, model_dim], [model_dim]

    std::size_t model_dim() const { return num_heads * head_dim; }
};

template <class T>
struct MlstmState {
    std::size_t num_heads = 0;
    std::size_t head_dim = 0;
    std::vector<T> cell;        // H * hd * hd, value-major rows: C[i][j] = cell[h*hd*hd + i*hd + j]
    std::vector<T> normalizer;  // H * hd
    std::vector<T> stabilizer;  // H

    static MlstmState initial(std::size_t heads, std::size_t hd) {
        MlstmState s;
        s.num_heads = heads;
        s.head_dim = hd;
        s.cell.assign(heads * hd * hd, T(0));
        s.normalizer.assign(heads * hd, T(0));
        s.stabilizer.assign(heads, kStabilizerSentinel<T>);
        return s;
    }
};

template <class T>
MlstmParams<T> make_mlstm_params(std::size_t num_heads, std::size_t head_dim,
                                 std::size_t model_dim) {
    if (model_dim != num_heads * head_dim)
        throw ConfigError("mlstm: model_dim " + std::to_string(model_dim) +
                          " != num_heads * head_dim");
    MlstmParams<T> p;
    p.num_heads = num_heads;
    p.head_dim = head_dim;
    p.w_q = Tensor<T>::zeros({model_dim, model_dim});
    p.w_k = Tensor<T>::zeros({model_dim, model_dim});
    p.w_v = Tensor<T>::zeros({model_dim, model_dim});
    p.w_i = Tensor<T>::zeros({num_heads, model_dim});
    p.w_f = Tensor<T>::zeros({num_heads, model_dim});
    p.b_i = Tensor<T>::zeros({num_heads});
    p.b_f = Tensor<T>::zeros({num_heads});
    p.w_o = Tensor<T>::zeros({model_dim, model_dim});
    p.b_o = Tensor<T>::zeros({model_dim});
    return p;
}

template <class T, class Rng>
void init_mlstm_params(MlstmParams<T>& p, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    auto fill = [&](Tensor<T>& t, double std) {
        for (auto& v : t.mutable_data()) v = T(dist(rng) * std);
    };
    double s = 1.0 / std::sqrt(double(p.model_dim()));
    fill(p.w_q, s);
    fill(p.w_k, s);
    fill(p.w_v, s);
    fill(p.w_i, 0.1 * s);
    fill(p.w_f, 0.1 * s);
    fill(p.w_o, s);
    // Forget gates start strongly open, input gates slightly closed; keeps the
    // normalizer well-conditioned on long scans.
    auto bf = p.b_f.mutable_data();
    for (std::size_t h = 0; h < p.num_heads; ++h)
        bf[h] = T(3) + (p.num_heads > 1 ? T(3) * T(h) / T(p.num_heads - 1) : T(0));
    for (auto& v : p.b_i.mutable_data()) v = T(-1);
}

// One token through the defining stabilized recurrence. Value-only; this is
// the sequential contract the fused/chunked paths must reproduce.
// x_t has model_dim entries; h_t is written to `out` (model_dim entries).
template <class T>
void mlstm_step(const MlstmParams<T>& p, MlstmState<T>& state, const T* x_t, T* out,
                std::size_t token_index = 0) {
    std::size_t heads = p.num_heads, hd = p.head_dim, dm = p.model_dim();
    std::vector<T> q(hd), k(hd), v(hd);
    const T* wq = p.w_q.data().data();
    const T* wk = p.w_k.data().data();
    const T* wv = p.w_v.data().data();
    const T* wo = p.w_o.data().data();
    T key_scale = T(1) / std::sqrt(T(hd));
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < hd; ++i) {
            std::size_t row = h * hd + i;
            T aq = 0, ak = 0, av = 0;
            for (std::size_t c = 0; c < dm; ++c) {
                aq += wq[row * dm + c] * x_t[c];
                ak += wk[row * dm + c] * x_t[c];
                av += wv[row * dm + c] * x_t[c];
            }
            q[i] = aq;
            k[i] = ak * key_scale;
            v[i] = av;
        }
        T ipre = p.b_i.data()[h], fpre = p.b_f.data()[h];
        for (std::size_t c = 0; c < dm; ++c) {
            ipre += p.w_i.data()[h * dm + c] * x_t[c];
            fpre += p.w_f.data()[h * dm + c] * x_t[c];
        }
        T m_prev = state.stabilizer[h];
        T m = (fpre + m_prev >= ipre) ? fpre + m_prev : ipre;
        T iw = std::exp(std::min(ipre - m, T(0)));
        T fw = std::exp(fpre + m_prev - m);
        T* C = state.cell.data() + h * hd * hd;
        T* n = state.normalizer.data() + h * hd;
        for (std::size_t i = 0; i < hd; ++i) {
            for (std::size_t j = 0; j < hd; ++j) C[i * hd + j] = fw * C[i * hd + j] + iw * v[i] * k[j];
            n[i] = fw * n[i] + iw * k[i];
        }
        state.stabilizer[h] = m;
        T s = 0;
        for (std::size_t i = 0; i < hd; ++i) s += n[i] * q[i];
        T denom = detail::readout_denominator(s, m);
        for (std::size_t i = 0; i < hd; ++i) {
            T acc = 0;
            for (std::size_t j = 0; j < hd; ++j) acc += C[i * hd + j] * q[j];
            T ht = acc / denom;
            if (!std::isfinite(ht))
                throw NumericError("mlstm_step: non-finite hidden state at token " +
                                   std::to_string(token_index));
            out[h * hd + i] = ht;
        }
    }
    // Output gate over the concatenated heads.
    for (std::size_t r = 0; r < dm; ++r) {
        T acc = p.b_o.data()[r];
        for (std::size_t c = 0; c < dm; ++c) acc += wo[r * dm + c] * x_t[c];
        out[r] *= T(1) / (T(1) + std::exp(-acc));
    }
}

namespace detail {

template <class T>
struct ScanCache {
    std::vector<T> cell;  // (T+1) * H * hd * hd
    std::vector<T> norm;  // (T+1) * H * hd
    std::vector<T> stab;  // (T+1) * H
};

}  // namespace detail

// Fused stabilized scan over precomputed per-token projections.
// q, k, v: [T, H*hd] (k already scaled), igate/fgate pre-activations: [T, H].
// Returns the normalized readout h~ per token, heads concatenated: [T, H*hd].
template <class T>
Tensor<T> mlstm_scan(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                     const Tensor<T>& igate, const Tensor<T>& fgate, std::size_t num_heads) {
    if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape())
        throw DimensionError("mlstm_scan: q/k/v must share a [T, model_dim] shape");
    std::size_t tokens = q.dim(0), dm = q.dim(1);
    if (tokens == 0) throw DimensionError("mlstm_scan: empty sequence");
    if (num_heads == 0 || dm % num_heads != 0)
        throw ConfigError("mlstm_scan: model_dim not divisible by num_heads");
    std::size_t hd = dm / num_heads;
    if (igate.rank() != 2 || igate.dim(0) != tokens || igate.dim(1) != num_heads ||
        igate.shape() != fgate.shape())
        throw DimensionError("mlstm_scan: gate pre-activations must be [T, num_heads]");

    auto cache = std::make_shared<detail::ScanCache<T>>();
    cache->cell.assign((tokens + 1) * num_heads * hd * hd, T(0));
    cache->norm.assign((tokens + 1) * num_heads * hd, T(0));
    cache->stab.assign((tokens + 1) * num_heads, kStabilizerSentinel<T>);

    std::vector<T> out(tokens * dm);
    const T* pq = q.data().data();
    const T* pk = k.data().data();
    const T* pv = v.data().data();
    const T* pi = igate.data().data();
    const T* pf = fgate.data().data();
    std::size_t cs = num_heads * hd * hd, nsz = num_heads * hd;
    for (std::size_t t = 0; t < tokens; ++t) {
        for (std::size_t h = 0; h < num_heads; ++h) {
            const T* qt = pq + t * dm + h * hd;
            const T* kt = pk + t * dm + h * hd;
            const T* vt = pv + t * dm + h * hd;
            T a = pi[t * num_heads + h], b = pf[t * num_heads + h];
            T m_prev = cache->stab[t * num_heads + h];
            T m = (b + m_prev >= a) ? b + m_prev : a;
            T iw = std::exp(std::min(a - m, T(0)));
            T fw = std::exp(b + m_prev - m);
            const T* Cp = cache->cell.data() + t * cs + h * hd * hd;
            const T* np = cache->norm.data() + t * nsz + h * hd;
            T* Cc = cache->cell.data() + (t + 1) * cs + h * hd * hd;
            T* nc = cache->norm.data() + (t + 1) * nsz + h * hd;
            for (std::size_t i = 0; i < hd; ++i) {
                for (std::size_t j = 0; j < hd; ++j)
                    Cc[i * hd + j] = fw * Cp[i * hd + j] + iw * vt[i] * kt[j];
                nc[i] = fw * np[i] + iw * kt[i];
            }
            cache->stab[(t + 1) * num_heads + h] = m;
            T s = 0;
            for (std::size_t i = 0; i < hd; ++i) s += nc[i] * qt[i];
            T denom = detail::readout_denominator(s, m);
            for (std::size_t i = 0; i < hd; ++i) {
                T acc = 0;
                for (std::size_t j = 0; j < hd; ++j) acc += Cc[i * hd + j] * qt[j];
                T ht = acc / denom;
                if (!std::isfinite(ht))
                    throw NumericError("mlstm_scan: non-finite readout at token " +
                                       std::to_string(t));
                out[t * dm + h * hd + i] = ht;
            }
        }
    }

    auto qn = q.node();
    auto kn = k.node();
    auto vn = v.node();
    auto in_ = igate.node();
    auto fn = fgate.node();
    return Tensor<T>::make_op(
        Shape{tokens, dm}, std::move(out),
        [qn, kn, vn, in_, fn, cache, tokens, dm, num_heads, hd, cs, nsz](detail::Node<T>& node) {
            const T* g = node.grad.data();
            std::vector<T> gC(hd * hd), gn(hd), u(hd);
            for (std::size_t h = 0; h < num_heads; ++h) {
                std::fill(gC.begin(), gC.end(), T(0));
                std::fill(gn.begin(), gn.end(), T(0));
                T gm_carry = T(0);
                for (std::size_t t = tokens; t-- > 0;) {
                    const T* qt = qn->value.data() + t * dm + h * hd;
                    const T* kt = kn->value.data() + t * dm + h * hd;
                    const T* vt = vn->value.data() + t * dm + h * hd;
                    T a = in_->value[t * num_heads + h];
                    T b = fn->value[t * num_heads + h];
                    T m = cache->stab[(t + 1) * num_heads + h];
                    T m_prev = cache->stab[t * num_heads + h];
                    T iw = std::exp(std::min(a - m, T(0)));
                    T fw = std::exp(b + m_prev - m);
                    const T* Ct = cache->cell.data() + (t + 1) * cs + h * hd * hd;
                    const T* Cprev = cache->cell.data() + t * cs + h * hd * hd;
                    const T* nt = cache->norm.data() + (t + 1) * nsz + h * hd;
                    const T* nprev = cache->norm.data() + t * nsz + h * hd;
                    const T* gh = g + t * dm + h * hd;

                    T s = 0;
                    for (std::size_t i = 0; i < hd; ++i) s += nt[i] * qt[i];
                    constexpr T kMaxExpArg = sizeof(T) == 4 ? T(80) : T(700);
                    T dexp = std::exp(std::min(-m, kMaxExpArg));
                    T denom = std::max(std::abs(s), dexp);
                    for (std::size_t i = 0; i < hd; ++i) {
                        T acc = 0;
                        for (std::size_t j = 0; j < hd; ++j) acc += Ct[i * hd + j] * qt[j];
                        u[i] = acc;
                    }
                    // Readout: h~ = (C q) / denom, denom = max(|n.q|, exp(-m)).
                    T ghu = 0;
                    for (std::size_t i = 0; i < hd; ++i) ghu += gh[i] * u[i];
                    T gdenom = -ghu / (denom * denom);
                    T gs = T(0), gm_readout = T(0);
                    if (std::abs(s) > dexp)
                        gs = (s >= T(0)) ? gdenom : -gdenom;
                    else
                        gm_readout = -dexp * gdenom;
                    T* gq = qn->needs_grad ? qn->grad.data() + t * dm + h * hd : nullptr;
                    for (std::size_t i = 0; i < hd; ++i) {
                        if (gq) {
                            T acc = 0;
                            for (std::size_t j = 0; j < hd; ++j)
                                acc += Ct[j * hd + i] * gh[j];  // C^T gh
                            gq[i] += acc / denom + gs * nt[i];
                        }
                        gn[i] += gs * qt[i];
                        for (std::size_t j = 0; j < hd; ++j)
                            gC[i * hd + j] += gh[i] * qt[j] / denom;
                    }
                    // Recurrence: C_t = fw C_{t-1} + iw v k^T, n_t = fw n_{t-1} + iw k.
                    T gfw = 0, giw = 0;
                    for (std::size_t i = 0; i < hd; ++i) {
                        gfw += gn[i] * nprev[i];
                        giw += gn[i] * kt[i];
                        for (std::size_t j = 0; j < hd; ++j) {
                            gfw += gC[i * hd + j] * Cprev[i * hd + j];
                            giw += gC[i * hd + j] * vt[i] * kt[j];
                        }
                    }
                    if (vn->needs_grad || kn->needs_grad) {
                        T* gv = vn->needs_grad ? vn->grad.data() + t * dm + h * hd : nullptr;
                        T* gk = kn->needs_grad ? kn->grad.data() + t * dm + h * hd : nullptr;
                        for (std::size_t i = 0; i < hd; ++i) {
                            if (gv) {
                                T acc = 0;
                                for (std::size_t j = 0; j < hd; ++j) acc += gC[i * hd + j] * kt[j];
                                gv[i] += iw * acc;
                            }
                            if (gk) {
                                T acc = 0;
                                for (std::size_t j = 0; j < hd; ++j) acc += gC[j * hd + i] * vt[j];
                                gk[i] += iw * (acc + gn[i]);
                            }
                        }
                    }
                    for (std::size_t i = 0; i < hd * hd; ++i) gC[i] *= fw;
                    for (std::size_t i = 0; i < hd; ++i) gn[i] *= fw;
                    // Gates through the stabilizer: iw = exp(a - m),
                    // fw = exp(b + m_prev - m), m = max(b + m_prev, a).
                    T ga = iw * giw;
                    T gb = fw * gfw;
                    T gm = gm_carry + gm_readout - iw * giw - fw * gfw;
                    T gm_prev = fw * gfw;
                    if (b + m_prev >= a) {
                        gb += gm;
                        gm_prev += gm;
                    } else {
                        ga += gm;
                    }
                    if (in_->needs_grad) in_->grad[t * num_heads + h] += ga;
                    if (fn->needs_grad) fn->grad[t * num_heads + h] += gb;
                    gm_carry = gm_prev;  // discarded at t == 0 (sentinel state)
                }
            }
        },
        q, k, v, igate, fgate);
}

// Full cell over a token sequence on the autodiff path: projections as graph
// matmuls, the recurrence as the fused scan, sigmoid output gate.
template <class T>
Tensor<T> mlstm_sequence(const MlstmParams<T>& p, const Tensor<T>& x, bool reverse) {
    if (x.rank() != 2 || x.dim(1) != p.model_dim())
        throw DimensionError("mlstm_sequence: expected [T, " + std::to_string(p.model_dim()) +
                             "], got " + shape_str(x.shape()));
    if (x.dim(0) == 0) throw DimensionError("mlstm_sequence: empty sequence");
    Tensor<T> xs = reverse ? flip_axis0(x) : x;
    Tensor<T> q = matmul(xs, transpose_values(p.w_q));
    Tensor<T> k = scale(matmul(xs, transpose_values(p.w_k)), T(1) / std::sqrt(T(p.head_dim)));
    Tensor<T> v = matmul(xs, transpose_values(p.w_v));
    Tensor<T> ig = linear(xs, p.w_i, p.b_i);
    Tensor<T> fg = linear(xs, p.w_f, p.b_f);
    Tensor<T> ht = mlstm_scan(q, k, v, ig, fg, p.num_heads);
    Tensor<T> o = sigmoid(linear(xs, p.w_o, p.b_o));
    Tensor<T> h = mul(o, ht);
    return reverse ? flip_axis0(h) : h;
}

// Value-preserving transpose used to feed [out,in] projection weights to
// matmul as [in,out]; keeps the gradient flowing to the original layout.
template <class T>
Tensor<T> transpose_values(const Tensor<T>& a) {
    if (a.rank() != 2) throw DimensionError("transpose: expected 2-D tensor");
    std::size_t r = a.dim(0), c = a.dim(1);
    std::vector<T> out(a.size());
    const T* v = a.data().data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
    auto an = a.node();
    return Tensor<T>::make_op(
        Shape{c, r}, std::move(out),
        [an, r, c](detail::Node<T>& n) {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += n.grad[j * r + i];
        },
        a);
}

// Sequential fold of mlstm_step over a raw value sequence; the reference the
// fused and chunked routes are checked against.
template <class T>
std::vector<T> mlstm_sequence_stepwise(const MlstmParams<T>& p, const std::vector<T>& x,
                                       std::size_t tokens, bool reverse) {
    std::size_t dm = p.model_dim();
    if (tokens == 0) throw DimensionError("mlstm_sequence_stepwise: empty sequence");
    std::vector<T> out(tokens * dm);
    auto state = MlstmState<T>::initial(p.num_heads, p.head_dim);
    for (std::size_t t = 0; t < tokens; ++t) {
        std::size_t src = reverse ? tokens - 1 - t : t;
        mlstm_step(p, state, x.data() + src * dm, out.data() + src * dm, t);
    }
    return out;
}

// Chunkwise evaluation: within each chunk the cell/normalizer/readout are
// reconstructed from cumulative log-forget sums and a shared stabilizer
// rather than by stepping token by token; chunk boundary state is carried
// exactly. Value-only.
template <class T>
std::vector<T> mlstm_sequence_chunked(const MlstmParams<T>& p, const std::vector<T>& x,
                                      std::size_t tokens, bool reverse, std::size_t chunk) {
    std::size_t dm = p.model_dim(), heads = p.num_heads, hd = p.head_dim;
    if (tokens == 0) throw DimensionError("mlstm_sequence_chunked: empty sequence");
    if (chunk == 0) throw ConfigError("mlstm_sequence_chunked: chunk must be >= 1");
    // Pre-project every token.
    std::vector<T> q(tokens * dm), k(tokens * dm), v(tokens * dm);
    std::vector<T> a(tokens * heads), b(tokens * heads), ogate(tokens * dm);
    T key_scale = T(1) / std::sqrt(T(hd));
    for (std::size_t t = 0; t < tokens; ++t) {
        std::size_t src = reverse ? tokens - 1 - t : t;
        const T* xt = x.data() + src * dm;
        for (std::size_t r = 0; r < dm; ++r) {
            T aq = 0, ak = 0, av = 0, ao = p.b_o.data()[r];
            for (std::size_t c = 0; c < dm; ++c) {
                aq += p.w_q.data()[r * dm + c] * xt[c];
                ak += p.w_k.data()[r * dm + c] * xt[c];
                av += p.w_v.data()[r * dm + c] * xt[c];
                ao += p.w_o.data()[r * dm + c] * xt[c];
            }
            q[t * dm + r] = aq;
            k[t * dm + r] = ak * key_scale;
            v[t * dm + r] = av;
            ogate[t * dm + r] = T(1) / (T(1) + std::exp(-ao));
        }
        for (std::size_t h = 0; h < heads; ++h) {
            T ipre = p.b_i.data()[h], fpre = p.b_f.data()[h];
            for (std::size_t c = 0; c < dm; ++c) {
                ipre += p.w_i.data()[h * dm + c] * xt[c];
                fpre += p.w_f.data()[h * dm + c] * xt[c];
            }
            a[t * heads + h] = ipre;
            b[t * heads + h] = fpre;
        }
    }

    std::vector<T> out(tokens * dm);
    for (std::size_t h = 0; h < heads; ++h) {
        std::vector<T> C0(hd * hd, T(0)), n0(hd, T(0));
        T m0 = kStabilizerSentinel<T>;
        for (std::size_t start = 0; start < tokens; start += chunk) {
            std::size_t len = std::min(chunk, tokens - start);
            // Cumulative log-forget F_j and running stabilizer X_j inside the chunk.
            std::vector<T> F(len + 1, T(0)), M(len + 1);
            M[0] = m0;
            for (std::size_t j = 1; j <= len; ++j) {
                F[j] = F[j - 1] + b[(start + j - 1) * heads + h];
                T cand = a[(start + j - 1) * heads + h] - F[j];
                M[j] = std::max(M[j - 1], cand);
            }
            for (std::size_t j = 1; j <= len; ++j) {
                std::size_t t = start + j - 1;
                T m_j = F[j] + M[j];
                const T* qt = q.data() + t * dm + h * hd;
                T inter = std::exp(std::min(m0 + F[j] - m_j, T(0)));
                std::vector<T> cq(hd, T(0));
                T nq = 0;
                for (std::size_t i = 0; i < hd; ++i) {
                    T acc = 0;
                    for (std::size_t jj = 0; jj < hd; ++jj) acc += C0[i * hd + jj] * qt[jj];
                    cq[i] = inter * acc;
                    nq += inter * n0[i] * qt[i];
                }
                for (std::size_t s = 1; s <= j; ++s) {
                    std::size_t ts = start + s - 1;
                    T w = std::exp(a[ts * heads + h] + F[j] - F[s] - m_j);
                    const T* ks = k.data() + ts * dm + h * hd;
                    const T* vs = v.data() + ts * dm + h * hd;
                    T kq = 0;
                    for (std::size_t i = 0; i < hd; ++i) kq += ks[i] * qt[i];
                    for (std::size_t i = 0; i < hd; ++i) cq[i] += w * vs[i] * kq;
                    nq += w * kq;
                }
                T denom = detail::readout_denominator(nq, m_j);
                for (std::size_t i = 0; i < hd; ++i) out[t * dm + h * hd + i] = cq[i] / denom;
            }
            // Carry state across the chunk boundary.
            T m_end = F[len] + M[len];
            T inter = std::exp(std::min(m0 + F[len] - m_end, T(0)));
            std::vector<T> Cn(hd * hd), nn(hd);
            for (std::size_t i = 0; i < hd * hd; ++i) Cn[i] = inter * C0[i];
            for (std::size_t i = 0; i < hd; ++i) nn[i] = inter * n0[i];
            for (std::size_t s = 1; s <= len; ++s) {
                std::size_t ts = start + s - 1;
                T w = std::exp(a[ts * heads + h] + F[len] - F[s] - m_end);
                const T* ks = k.data() + ts * dm + h * hd;
                const T* vs = v.data() + ts * dm + h * hd;
                for (std::size_t i = 0; i < hd; ++i) {
                    for (std::size_t jj = 0; jj < hd; ++jj) Cn[i * hd + jj] += w * vs[i] * ks[jj];
                    nn[i] += w * ks[i];
                }
            }
            C0 = std::move(Cn);
            n0 = std::move(nn);
            m0 = m_end;
        }
    }
    // Output gate, then undo the traversal flip.
    for (std::size_t t = 0; t < tokens; ++t)
        for (std::size_t r = 0; r < dm; ++r) out[t * dm + r] *= ogate[t * dm + r];
    if (reverse) {
        std::vector<T> flipped(tokens * dm);
        for (std::size_t t = 0; t < tokens; ++t)
            std::copy_n(out.begin() + t * dm, dm, flipped.begin() + (tokens - 1 - t) * dm);
        return flipped;
    }
    return out;
}

// ---- ViL block ----

template <class T>
struct MlstmBlockParams {
    std::size_t model_dim = 0;
    std::size_t expansion = 2;
    std::size_t conv_kernel = 4;
    Tensor<T> ln_gamma, ln_beta;      // [D] pre-norm
    Tensor<T> w_up_m, b_up_m;         // [E*D, D], [E*D] mlstm branch
    Tensor<T> w_up_g, b_up_g;         // [E*D, D], [E*D] gate branch
    Tensor<T> conv_w, conv_b;         // [E*D, k], [E*D] causal depthwise conv
    MlstmParams<T> cell;              // over E*D
    Tensor<T> hn_gamma, hn_beta;      // [E*D] per-head norm affine
    Tensor<T> w_down, b_down;         // [D, E*D], [D]

    std::size_t inner_dim() const { return model_dim * expansion; }
};

template <class T>
MlstmBlockParams<T> make_mlstm_block_params(std::size_t model_dim, std::size_t num_heads,
                                            std::size_t expansion, std::size_t conv_kernel) {
    std::size_t inner = model_dim * expansion;
    if (num_heads == 0 || inner % num_heads != 0)
        throw ConfigError("vil block: expanded dim " + std::to_string(inner) +
                          " not divisible by " + std::to_string(num_heads) + " heads");
    MlstmBlockParams<T> p;
    p.model_dim = model_dim;
    p.expansion = expansion;
    p.conv_kernel = conv_kernel;
    p.ln_gamma = Tensor<T>::filled({model_dim}, T(1));
    p.ln_beta = Tensor<T>::zeros({model_dim});
    p.w_up_m = Tensor<T>::zeros({inner, model_dim});
    p.b_up_m = Tensor<T>::zeros({inner});
    p.w_up_g = Tensor<T>::zeros({inner, model_dim});
    p.b_up_g = Tensor<T>::zeros({inner});
    p.conv_w = Tensor<T>::zeros({inner, conv_kernel});
    p.conv_b = Tensor<T>::zeros({inner});
    p.cell = make_mlstm_params<T>(num_heads, inner / num_heads, inner);
    p.hn_gamma = Tensor<T>::filled({inner}, T(1));
    p.hn_beta = Tensor<T>::zeros({inner});
    p.w_down = Tensor<T>::zeros({model_dim, inner});
    p.b_down = Tensor<T>::zeros({model_dim});
    return p;
}

template <class T, class Rng>
void init_mlstm_block_params(MlstmBlockParams<T>& p, Rng& rng, bool zero_down_proj) {
    std::normal_distribution<double> dist(0.0, 1.0);
    auto fill = [&](Tensor<T>& t, double std) {
        for (auto& v : t.mutable_data()) v = T(dist(rng) * std);
    };
    fill(p.w_up_m, 1.0 / std::sqrt(double(p.model_dim)));
    fill(p.w_up_g, 1.0 / std::sqrt(double(p.model_dim)));
    fill(p.conv_w, 1.0 / std::sqrt(double(p.conv_kernel)));
    init_mlstm_params(p.cell, rng);
    if (!zero_down_proj) fill(p.w_down, 1.0 / std::sqrt(double(p.inner_dim())));
}

// Residual ViL block: y = x + down( headnorm(cell(silu(conv(up_m(ln(x)))))) *
// silu(up_g(ln(x))) ). reverse flips the whole token order around the body so
// the causal conv and the scan both run in the flipped direction.
template <class T>
Tensor<T> mlstm_block(const MlstmBlockParams<T>& p, const Tensor<T>& x, bool reverse) {
    if (x.rank() != 2 || x.dim(1) != p.model_dim)
        throw DimensionError("mlstm_block: expected [T, " + std::to_string(p.model_dim) +
                             "], got " + shape_str(x.shape()));
    Tensor<T> xs = reverse ? flip_axis0(x) : x;
    std::size_t tokens = xs.dim(0), inner = p.inner_dim();
    std::size_t heads = p.cell.num_heads, hd = p.cell.head_dim;

    Tensor<T> ln = layer_norm(xs, p.ln_gamma, p.ln_beta, T(1e-5));
    Tensor<T> path = silu(causal_conv1d(linear(ln, p.w_up_m, p.b_up_m), p.conv_w, p.conv_b));
    Tensor<T> h = mlstm_sequence(p.cell, path, /*reverse=*/false);
    // Per-head normalization, channel-wise affine.
    Tensor<T> hg = reshape(h, Shape{tokens * heads, hd});
    Tensor<T> hn = layer_norm(hg, Tensor<T>::filled({hd}, T(1)), Tensor<T>::zeros({hd}), T(1e-5));
    hn = reshape(hn, Shape{tokens, inner});
    hn = add(mul(hn, p.hn_gamma), p.hn_beta);
    Tensor<T> gate = silu(linear(ln, p.w_up_g, p.b_up_g));
    Tensor<T> y = add(xs, linear(mul(hn, gate), p.w_down, p.b_down));
    return reverse ? flip_axis0(y) : y;
}

}  // namespace vilu
