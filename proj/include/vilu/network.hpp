#pragma once

// U-shaped segmentation network: convolutional stem, alternating-direction
// mLSTM token-mixing stages with strided-conv downsampling on the way in,
// transposed-conv upsampling with additive skips on the way out, and a 1x1
// convolution head. Feature maps are [B, C, H, W]; each stage flattens H*W
// row-major into a token sequence per batch element.

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vilu/conv.hpp"
#include "vilu/mlstm.hpp"
#include "vilu/tensor.hpp"

namespace vilu {

struct NetworkConfig {
    std::size_t in_channels = 1;
    std::size_t num_classes = 2;
    std::size_t base_channels = 16;
    std::size_t num_stages = 4;
    std::size_t vil_blocks_per_stage = 2;
    std::size_t num_heads = 4;
    std::size_t expansion = 2;
    std::size_t block_conv_kernel = 4;  // causal conv inside each token-mixing block
    std::size_t stem_kernel = 3;
    std::size_t sampler_kernel = 2;  // down/up sampler kernel == stride
    double leaky_slope = 0.01;
    std::size_t spatial_rank = 2;

    void validate() const {
        if (spatial_rank != 2)
            throw ConfigError("network: only spatial rank 2 is implemented, got " +
                              std::to_string(spatial_rank));
        if (num_stages < 2) throw ConfigError("network: num_stages must be >= 2");
        if (num_classes < 2) throw ConfigError("network: num_classes must be >= 2");
        if (base_channels == 0 || in_channels == 0)
            throw ConfigError("network: channel counts must be positive");
        if (vil_blocks_per_stage == 0 || vil_blocks_per_stage % 2 != 0)
            throw ConfigError("network: vil_blocks_per_stage must be a positive even number");
        if (stem_kernel % 2 != 1) throw ConfigError("network: stem kernel must be odd");
        for (std::size_t l = 0; l < num_stages; ++l) {
            std::size_t inner = (base_channels << l) * expansion;
            if (inner % num_heads != 0)
                throw ConfigError("network: stage " + std::to_string(l) + " expanded width " +
                                  std::to_string(inner) + " not divisible by " +
                                  std::to_string(num_heads) + " heads");
        }
    }

    std::size_t stage_channels(std::size_t l) const { return base_channels << l; }
};

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
    j = {{"in_channels", c.in_channels},
         {"num_classes", c.num_classes},
         {"base_channels", c.base_channels},
         {"num_stages", c.num_stages},
         {"vil_blocks_per_stage", c.vil_blocks_per_stage},
         {"num_heads", c.num_heads},
         {"expansion", c.expansion},
         {"block_conv_kernel", c.block_conv_kernel},
         {"stem_kernel", c.stem_kernel},
         {"sampler_kernel", c.sampler_kernel},
         {"leaky_slope", c.leaky_slope},
         {"spatial_rank", c.spatial_rank}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
    c.in_channels = j.value("in_channels", c.in_channels);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.num_stages = j.value("num_stages", c.num_stages);
    c.vil_blocks_per_stage = j.value("vil_blocks_per_stage", c.vil_blocks_per_stage);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.expansion = j.value("expansion", c.expansion);
    c.block_conv_kernel = j.value("block_conv_kernel", c.block_conv_kernel);
    c.stem_kernel = j.value("stem_kernel", c.stem_kernel);
    c.sampler_kernel = j.value("sampler_kernel", c.sampler_kernel);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.spatial_rank = j.value("spatial_rank", c.spatial_rank);
}

// ---- token <-> map plumbing ----

// Row-major tokens of one batch element: [B,C,H,W] -> [H*W, C].
template <class T>
Tensor<T> map_to_tokens(const Tensor<T>& x, std::size_t b) {
    if (x.rank() != 4) throw DimensionError("map_to_tokens: expected [B,C,H,W]");
    std::size_t C = x.dim(1), S = x.dim(2) * x.dim(3);
    const T* v = x.data().data();
    std::vector<T> out(S * C);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < S; ++t) out[t * C + c] = v[(b * C + c) * S + t];
    auto xn = x.node();
    return Tensor<T>::make_op(
        Shape{S, C}, std::move(out),
        [xn, b, C, S](detail::Node<T>& node) {
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < S; ++t)
                    xn->grad[(b * C + c) * S + t] += node.grad[t * C + c];
        },
        x);
}

// Inverse of map_to_tokens over the whole batch.
template <class T>
Tensor<T> tokens_to_map(const std::vector<Tensor<T>>& ys, Shape map_shape) {
    std::size_t B = map_shape[0], C = map_shape[1], S = map_shape[2] * map_shape[3];
    if (ys.size() != B) throw DimensionError("tokens_to_map: batch size mismatch");
    std::vector<T> out(B * C * S);
    std::vector<std::shared_ptr<detail::Node<T>>> nodes;
    for (std::size_t b = 0; b < B; ++b) {
        if (ys[b].dim(0) != S || ys[b].dim(1) != C)
            throw DimensionError("tokens_to_map: token shape mismatch");
        const T* v = ys[b].data().data();
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < S; ++t) out[(b * C + c) * S + t] = v[t * C + c];
        nodes.push_back(ys[b].node());
    }
    Tensor<T> r = Tensor<T>::from_data(std::move(map_shape), std::move(out));
    for (const auto& y : ys) r.attach_parent(y);
    if (r.node()->needs_grad)
        r.node()->backprop = [nodes, C, S](detail::Node<T>& node) {
            for (std::size_t b = 0; b < nodes.size(); ++b) {
                if (!nodes[b]->needs_grad) continue;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t t = 0; t < S; ++t)
                        nodes[b]->grad[t * C + c] += node.grad[(b * C + c) * S + t];
            }
        };
    return r;
}

// ---- network parameters ----

template <class T>
struct ConvLayer {
    Tensor<T> w, b;
};

template <class T>
struct NormAffine {
    Tensor<T> gamma, beta;
};

template <class T>
struct Network {
    NetworkConfig cfg;
    ConvLayer<T> stem;
    NormAffine<T> stem_norm;
    std::vector<std::vector<MlstmBlockParams<T>>> enc;  // num_stages entries
    std::vector<ConvLayer<T>> down;                     // num_stages-1
    std::vector<NormAffine<T>> down_norm;
    std::vector<ConvLayer<T>> up;  // num_stages-1, index l maps C_{l+1} -> C_l
    std::vector<NormAffine<T>> up_norm;
    std::vector<std::vector<MlstmBlockParams<T>>> dec;  // num_stages-1
    ConvLayer<T> head;

    std::vector<std::pair<std::string, Tensor<T>>> params;  // shared handles

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params) n += t.size();
        return n;
    }

    Tensor<T>* find_param(const std::string& name) {
        for (auto& [n, t] : params)
            if (n == name) return &t;
        return nullptr;
    }
};

namespace detail {

template <class T>
void register_param(Network<T>& net, const std::string& name, Tensor<T>& t) {
    t.set_requires_grad(true);
    net.params.emplace_back(name, t);
}

template <class T>
void register_block(Network<T>& net, const std::string& prefix, MlstmBlockParams<T>& p) {
    register_param(net, prefix + ".ln_gamma", p.ln_gamma);
    register_param(net, prefix + ".ln_beta", p.ln_beta);
    register_param(net, prefix + ".w_up_m", p.w_up_m);
    register_param(net, prefix + ".b_up_m", p.b_up_m);
    register_param(net, prefix + ".w_up_g", p.w_up_g);
    register_param(net, prefix + ".b_up_g", p.b_up_g);
    register_param(net, prefix + ".conv_w", p.conv_w);
    register_param(net, prefix + ".conv_b", p.conv_b);
    register_param(net, prefix + ".cell.w_q", p.cell.w_q);
    register_param(net, prefix + ".cell.w_k", p.cell.w_k);
    register_param(net, prefix + ".cell.w_v", p.cell.w_v);
    register_param(net, prefix + ".cell.w_i", p.cell.w_i);
    register_param(net, prefix + ".cell.b_i", p.cell.b_i);
    register_param(net, prefix + ".cell.w_f", p.cell.w_f);
    register_param(net, prefix + ".cell.b_f", p.cell.b_f);
    register_param(net, prefix + ".cell.w_o", p.cell.w_o);
    register_param(net, prefix + ".cell.b_o", p.cell.b_o);
    register_param(net, prefix + ".hn_gamma", p.hn_gamma);
    register_param(net, prefix + ".hn_beta", p.hn_beta);
    register_param(net, prefix + ".w_down", p.w_down);
    register_param(net, prefix + ".b_down", p.b_down);
}

}  // namespace detail

// Builds and initializes a network. zero_down_proj starts every token-mixing
// block at the residual identity, so training begins from the convolutional
// skeleton.
template <class T>
Network<T> make_network(const NetworkConfig& cfg, std::uint64_t seed, bool zero_down_proj = true) {
    cfg.validate();
    Network<T> net;
    net.cfg = cfg;
    std::mt19937 rng{std::uint32_t(seed)};
    std::normal_distribution<double> dist(0.0, 1.0);
    auto he_fill = [&](Tensor<T>& t, std::size_t fan_in) {
        double s = std::sqrt(2.0 / double(fan_in));
        for (auto& v : t.mutable_data()) v = T(dist(rng) * s);
    };
    std::size_t S = cfg.num_stages, k = cfg.stem_kernel, sk = cfg.sampler_kernel;

    net.stem.w = Tensor<T>::zeros({cfg.base_channels, cfg.in_channels, k, k});
    he_fill(net.stem.w, cfg.in_channels * k * k);
    net.stem.b = Tensor<T>::zeros({cfg.base_channels});
    net.stem_norm = {Tensor<T>::filled({cfg.base_channels}, T(1)),
                     Tensor<T>::zeros({cfg.base_channels})};
    detail::register_param(net, "stem.w", net.stem.w);
    detail::register_param(net, "stem.b", net.stem.b);
    detail::register_param(net, "stem.in_gamma", net.stem_norm.gamma);
    detail::register_param(net, "stem.in_beta", net.stem_norm.beta);

    for (std::size_t l = 0; l < S; ++l) {
        std::size_t C = cfg.stage_channels(l);
        net.enc.emplace_back();
        for (std::size_t i = 0; i < cfg.vil_blocks_per_stage; ++i) {
            auto blk = make_mlstm_block_params<T>(C, cfg.num_heads, cfg.expansion,
                                                  cfg.block_conv_kernel);
            init_mlstm_block_params(blk, rng, zero_down_proj);
            net.enc[l].push_back(std::move(blk));
            detail::register_block(net, "enc" + std::to_string(l) + ".blk" + std::to_string(i),
                                   net.enc[l].back());
        }
        if (l + 1 < S) {
            std::size_t C2 = cfg.stage_channels(l + 1);
            ConvLayer<T> d;
            d.w = Tensor<T>::zeros({C2, C, sk, sk});
            he_fill(d.w, C * sk * sk);
            d.b = Tensor<T>::zeros({C2});
            net.down.push_back(std::move(d));
            net.down_norm.push_back({Tensor<T>::filled({C2}, T(1)), Tensor<T>::zeros({C2})});
            std::string p = "down" + std::to_string(l);
            detail::register_param(net, p + ".w", net.down.back().w);
            detail::register_param(net, p + ".b", net.down.back().b);
            detail::register_param(net, p + ".in_gamma", net.down_norm.back().gamma);
            detail::register_param(net, p + ".in_beta", net.down_norm.back().beta);
        }
    }
    for (std::size_t l = 0; l + 1 < S; ++l) {
        std::size_t C = cfg.stage_channels(l), C2 = cfg.stage_channels(l + 1);
        ConvLayer<T> u;
        u.w = Tensor<T>::zeros({C2, C, sk, sk});  // transposed conv: [C_in, C_out, k, k]
        he_fill(u.w, C2 * sk * sk);
        u.b = Tensor<T>::zeros({C});
        net.up.push_back(std::move(u));
        net.up_norm.push_back({Tensor<T>::filled({C}, T(1)), Tensor<T>::zeros({C})});
        std::string p = "up" + std::to_string(l);
        detail::register_param(net, p + ".w", net.up.back().w);
        detail::register_param(net, p + ".b", net.up.back().b);
        detail::register_param(net, p + ".in_gamma", net.up_norm.back().gamma);
        detail::register_param(net, p + ".in_beta", net.up_norm.back().beta);

        net.dec.emplace_back();
        for (std::size_t i = 0; i < cfg.vil_blocks_per_stage; ++i) {
            auto blk = make_mlstm_block_params<T>(C, cfg.num_heads, cfg.expansion,
                                                  cfg.block_conv_kernel);
            init_mlstm_block_params(blk, rng, zero_down_proj);
            net.dec[l].push_back(std::move(blk));
            detail::register_block(net, "dec" + std::to_string(l) + ".blk" + std::to_string(i),
                                   net.dec[l].back());
        }
    }
    net.head.w = Tensor<T>::zeros({cfg.num_classes, cfg.base_channels, 1, 1});
    he_fill(net.head.w, cfg.base_channels);
    net.head.b = Tensor<T>::zeros({cfg.num_classes});
    detail::register_param(net, "head.w", net.head.w);
    detail::register_param(net, "head.b", net.head.b);
    return net;
}

// Alternating forward/backward token-mixing blocks over a feature map.
template <class T>
Tensor<T> vil_stage(const std::vector<MlstmBlockParams<T>>& blocks, const Tensor<T>& x) {
    std::size_t B = x.dim(0);
    std::vector<Tensor<T>> ys;
    ys.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
        Tensor<T> t = map_to_tokens(x, b);
        for (std::size_t i = 0; i < blocks.size(); ++i)
            t = mlstm_block(blocks[i], t, /*reverse=*/i % 2 == 1);
        ys.push_back(std::move(t));
    }
    return tokens_to_map(ys, x.shape());
}

// Logits head: [B, C_in, H, W] -> [B, num_classes, H, W]. skip_vil_blocks
// bypasses every token-mixing stage, leaving the convolutional skeleton.
template <class T>
Tensor<T> forward(const Network<T>& net, const Tensor<T>& x, bool skip_vil_blocks = false) {
    const NetworkConfig& cfg = net.cfg;
    if (x.rank() != 4 || x.dim(1) != cfg.in_channels)
        throw DimensionError("network: expected [B, " + std::to_string(cfg.in_channels) +
                             ", H, W], got " + shape_str(x.shape()));
    std::size_t div = std::size_t(1) << (cfg.num_stages - 1);
    for (std::size_t i = 2; i < 4; ++i)
        if (x.dim(i) % div != 0)
            throw ConfigError("network: spatial extent " + std::to_string(x.dim(i)) +
                              " not divisible by " + std::to_string(div));
    T slope = T(cfg.leaky_slope);
    auto conv_in_act = [&](const Tensor<T>& f, const ConvLayer<T>& c, const NormAffine<T>& n,
                           std::size_t stride, std::size_t pad) {
        return leaky_relu(instance_norm(conv2d(f, c.w, c.b, stride, pad), n.gamma, n.beta, T(1e-5)),
                          slope);
    };
    Tensor<T> f = conv_in_act(x, net.stem, net.stem_norm, 1, cfg.stem_kernel / 2);
    std::vector<Tensor<T>> skips;
    for (std::size_t l = 0; l + 1 < cfg.num_stages; ++l) {
        if (!skip_vil_blocks) f = vil_stage(net.enc[l], f);
        skips.push_back(f);
        f = conv_in_act(f, net.down[l], net.down_norm[l], cfg.sampler_kernel, 0);
    }
    if (!skip_vil_blocks) f = vil_stage(net.enc[cfg.num_stages - 1], f);
    for (std::size_t l = cfg.num_stages - 1; l-- > 0;) {
        Tensor<T> u = leaky_relu(
            instance_norm(transposed_conv2d(f, net.up[l].w, net.up[l].b, cfg.sampler_kernel),
                          net.up_norm[l].gamma, net.up_norm[l].beta, T(1e-5)),
            slope);
        f = add(u, skips[l]);
        if (!skip_vil_blocks) f = vil_stage(net.dec[l], f);
    }
    return conv2d(f, net.head.w, net.head.b, 1, 0);
}

// Inference probabilities; per pixel these sum to 1.
template <class T>
Tensor<T> predict(const Network<T>& net, const Tensor<T>& x) {
    return softmax(forward(net, x), 1);
}

}  // namespace vilu
