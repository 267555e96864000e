// Acceptance suite: one test per acceptance criterion, each printing a single
// PASS/FAIL line. Oracles here are written independently of the library code
// they verify.

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <vector>

#include "vilu/checkpoint.hpp"
#include "vilu/loss.hpp"
#include "vilu/metrics.hpp"
#include "vilu/mlstm.hpp"
#include "vilu/network.hpp"
#include "vilu/preprocess.hpp"
#include "vilu/synth.hpp"
#include "vilu/train.hpp"

namespace fs = std::filesystem;
using vilu::LabelMap;
using vilu::MlstmParams;
using vilu::Network;
using vilu::NetworkConfig;
using vilu::Sample;
using vilu::Tensor;

namespace {

void report(int n, const std::string& name, bool ok) {
    std::cout << "[ACCEPTANCE] criterion " << n << " (" << name << "): "
              << (ok ? "PASS" : "FAIL") << std::endl;
    EXPECT_TRUE(ok) << "criterion " << n << " (" << name << ")";
}

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("vilu_accept_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

MlstmParams<double> bounded_params(std::size_t heads, std::size_t hd, std::mt19937& rng) {
    auto p = vilu::make_mlstm_params<double>(heads, hd, heads * hd);
    std::normal_distribution<double> d(0.0, 1.0);
    auto fill = [&](Tensor<double>& t, double s) {
        for (auto& v : t.mutable_data()) v = d(rng) * s;
    };
    std::size_t dm = heads * hd;
    fill(p.w_q, 1.0 / std::sqrt(double(dm)));
    fill(p.w_k, 1.0 / std::sqrt(double(dm)));
    fill(p.w_v, 1.0 / std::sqrt(double(dm)));
    fill(p.w_i, 0.3 / std::sqrt(double(dm)));
    fill(p.w_f, 0.3 / std::sqrt(double(dm)));
    fill(p.b_i, 1.0);
    fill(p.b_f, 1.0);
    fill(p.w_o, 1.0 / std::sqrt(double(dm)));
    fill(p.b_o, 0.5);
    return p;
}

}  // namespace

// 1. End-to-end finite differences (64-bit, h=1e-5) on a 2-stage network at
// 1x1x16x16, sampling hundreds of parameter entries; fourth-order central
// differences suppress truncation error from the exponential gates.
TEST(Acceptance, C1_GradientFidelity) {
    auto t0 = std::chrono::steady_clock::now();
    NetworkConfig cfg;
    cfg.base_channels = 2;
    cfg.num_stages = 2;
    cfg.num_heads = 2;
    auto net = vilu::make_network<double>(cfg, 2, /*zero_down_proj=*/false);
    std::mt19937 rng(6789);
    std::normal_distribution<double> d(0.0, 0.5);
    auto x = Tensor<double>::zeros({1, 1, 16, 16});
    for (auto& v : x.mutable_data()) v = d(rng);
    std::vector<int> target(256);
    for (std::size_t i = 0; i < 256; ++i) target[i] = int(i % 2);
    auto loss_fn = [&] { return vilu::combined_loss(vilu::forward(net, x), target); };
    for (auto& [name, p] : net.params) p.zero_grad();
    auto loss = loss_fn();
    backward(loss);

    const double h = 1e-5;
    double worst = 0;
    std::size_t sampled = 0;
    std::mt19937 pick(99);
    for (auto& [name, p] : net.params) {
        auto vals = p.mutable_data();
        std::size_t stride = std::max<std::size_t>(1, vals.size() / 3);
        for (std::size_t i = pick() % stride; i < vals.size(); i += stride) {
            double orig = vals[i];
            auto at = [&](double dx) {
                vals[i] = orig + dx;
                double r = loss_fn().item();
                vals[i] = orig;
                return r;
            };
            double fd = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
            double ad = p.grad()[i];
            worst = std::max(worst, std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-3}));
            ++sampled;
        }
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "  sampled " << sampled << " parameter entries, max rel err " << worst << ", "
              << secs << " s" << std::endl;
    report(1, "gradient fidelity", sampled >= 200 && worst < 1e-4 && secs < 300.0);
}

// 2. Stabilized cell output vs the literal unstabilized recurrence
// (i = exp(i~), f = exp(f~), denominator max(|n.q|, 1)) with gate
// pre-activations drawn from [-5, 5].
TEST(Acceptance, C2_StabilizationEquivalence) {
    std::mt19937 rng(101);
    std::uniform_real_distribution<double> gate(-5.0, 5.0);
    std::normal_distribution<double> d(0.0, 1.0);
    const std::size_t T = 32, hd = 8, heads = 2, dm = heads * hd;
    double worst = 0;
    for (int trial = 0; trial < 10; ++trial) {
        auto q = Tensor<double>::zeros({T, dm});
        auto k = Tensor<double>::zeros({T, dm});
        auto v = Tensor<double>::zeros({T, dm});
        auto ig = Tensor<double>::zeros({T, heads});
        auto fg = Tensor<double>::zeros({T, heads});
        for (auto& e : q.mutable_data()) e = d(rng);
        for (auto& e : k.mutable_data()) e = d(rng);
        for (auto& e : v.mutable_data()) e = d(rng);
        for (auto& e : ig.mutable_data()) e = gate(rng);
        for (auto& e : fg.mutable_data()) e = gate(rng);

        auto got = vilu::mlstm_scan(q, k, v, ig, fg, heads);

        // independent unstabilized oracle over the same projections
        std::vector<double> C(heads * hd * hd, 0.0), n(heads * hd, 0.0);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t h = 0; h < heads; ++h) {
                double igv = std::exp(ig.data()[t * heads + h]);
                double fgv = std::exp(fg.data()[t * heads + h]);
                const double* kt = k.data().data() + t * dm + h * hd;
                const double* vt = v.data().data() + t * dm + h * hd;
                const double* qt = q.data().data() + t * dm + h * hd;
                double* Ch = C.data() + h * hd * hd;
                double* nh = n.data() + h * hd;
                for (std::size_t i = 0; i < hd; ++i) {
                    for (std::size_t j = 0; j < hd; ++j)
                        Ch[i * hd + j] = fgv * Ch[i * hd + j] + igv * vt[i] * kt[j];
                    nh[i] = fgv * nh[i] + igv * kt[i];
                }
                double s = 0;
                for (std::size_t i = 0; i < hd; ++i) s += nh[i] * qt[i];
                double denom = std::max(std::abs(s), 1.0);
                for (std::size_t i = 0; i < hd; ++i) {
                    double acc = 0;
                    for (std::size_t j = 0; j < hd; ++j) acc += Ch[i * hd + j] * qt[j];
                    double ref = acc / denom;
                    worst = std::max(worst,
                                     std::abs(got.data()[t * dm + h * hd + i] - ref) /
                                         std::max(1.0, std::abs(ref)));
                }
            }
    }
    std::cout << "  max rel-to-unit err " << worst << std::endl;
    report(2, "stabilization equivalence", worst < 1e-10);
}

// 3. Chunkwise-parallel evaluation equals the sequential fold on 100 random
// sequences.
TEST(Acceptance, C3_ChunkedEqualsSequential) {
    std::mt19937 rng(313);
    std::normal_distribution<double> d(0.0, 1.0);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t heads = 1 + rng() % 3;
        std::size_t hd = 2 + rng() % 6;
        std::size_t tokens = 1 + rng() % 40;
        std::size_t chunk = 1 + rng() % tokens;
        bool reverse = rng() % 2;
        auto p = bounded_params(heads, hd, rng);
        std::size_t dm = heads * hd;
        std::vector<double> x(tokens * dm);
        for (auto& v : x) v = d(rng);
        auto a = vilu::mlstm_sequence_stepwise(p, x, tokens, reverse);
        auto b = vilu::mlstm_sequence_chunked(p, x, tokens, reverse, chunk);
        for (std::size_t i = 0; i < a.size(); ++i)
            worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    std::cout << "  max abs err " << worst << std::endl;
    report(3, "chunked vs sequential", worst < 1e-10);
}

// 4. Shape pyramid: encoder stage l has extents H/2^l and channels C0*2^l;
// forward output extents equal input extents. Exact.
TEST(Acceptance, C4_ShapeInvariants) {
    bool ok = true;
    std::mt19937 rng(41);
    std::normal_distribution<float> d(0.0f, 1.0f);
    for (std::size_t stages : {2u, 3u, 4u}) {
        for (std::size_t base : {4u, 8u, 16u}) {
            NetworkConfig cfg;
            cfg.base_channels = base;
            cfg.num_stages = stages;
            cfg.num_heads = 4;
            auto net = vilu::make_network<float>(cfg, 7);
            std::size_t ext = std::size_t(2) << (stages - 1);  // smallest divisible extent * 2
            ext *= 2;
            auto x = Tensor<float>::zeros({1, 1, ext, ext});
            for (auto& v : x.mutable_data()) v = d(rng);
            // walk the encoder explicitly
            auto f = leaky_relu(instance_norm(conv2d(x, net.stem.w, net.stem.b, 1, 1),
                                              net.stem_norm.gamma, net.stem_norm.beta, 1e-5f),
                                0.01f);
            for (std::size_t l = 0; l < stages; ++l) {
                f = vilu::vil_stage(net.enc[l], f);
                vilu::Shape want{1, base << l, ext >> l, ext >> l};
                ok = ok && f.shape() == want;
                if (l + 1 < stages)
                    f = leaky_relu(
                        instance_norm(conv2d(f, net.down[l].w, net.down[l].b, 2, 0),
                                      net.down_norm[l].gamma, net.down_norm[l].beta, 1e-5f),
                        0.01f);
            }
            auto logits = vilu::forward(net, x);
            ok = ok && logits.shape() == vilu::Shape{1, cfg.num_classes, ext, ext};
        }
    }
    report(4, "shape invariants", ok);
}

// 5. DSC/IoU/NSD/HD/HD95 vs brute-force oracles on 50 random 16^3 pairs.
TEST(Acceptance, C5_MetricOracleEquivalence) {
    std::mt19937 rng(512);
    std::vector<double> spacing = {1.5, 1.0, 0.75};
    bool ok = true;
    double worst_mm = 0;
    auto brute = [&](const std::vector<vilu::SurfacePoint>& a,
                     const std::vector<vilu::SurfacePoint>& b) {
        std::vector<double> out;
        for (const auto& pa : a) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& pb : b) {
                double dz = (double(pa[0]) - double(pb[0])) * spacing[0];
                double dy = (double(pa[1]) - double(pb[1])) * spacing[1];
                double dx = (double(pa[2]) - double(pb[2])) * spacing[2];
                best = std::min(best, dz * dz + dy * dy + dx * dx);
            }
            out.push_back(std::sqrt(best));
        }
        return out;
    };
    auto pct = [](std::vector<double> v, double p) {
        std::sort(v.begin(), v.end());
        double pos = p / 100.0 * double(v.size() - 1);
        std::size_t lo = std::size_t(pos);
        std::size_t hi = std::min(lo + 1, v.size() - 1);
        return v[lo] * (1.0 - (pos - double(lo))) + v[hi] * (pos - double(lo));
    };
    for (int trial = 0; trial < 50; ++trial) {
        LabelMap a, b;
        a.dims = b.dims = {16, 16, 16};
        a.spacing = b.spacing = spacing;
        a.num_classes = b.num_classes = 2;
        a.data.resize(16 * 16 * 16);
        b.data.resize(16 * 16 * 16);
        double pa = 0.05 + 0.4 * double(rng() % 100) / 100.0;
        std::bernoulli_distribution da(pa), db(pa);
        for (auto& v : a.data) v = da(rng) ? 1 : 0;
        for (auto& v : b.data) v = db(rng) ? 1 : 0;

        // overlap metrics: exact counting oracle
        std::size_t inter = 0, ca = 0, cb = 0;
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            ca += a.data[i] == 1;
            cb += b.data[i] == 1;
            inter += a.data[i] == 1 && b.data[i] == 1;
        }
        auto ov = vilu::dsc_iou(a, b, 1);
        if (ca + cb == 0) {
            ok = ok && ov.dsc == 1.0 && ov.iou == 1.0;
        } else {
            ok = ok && ov.dsc == 2.0 * double(inter) / double(ca + cb);
            ok = ok && ov.iou == double(inter) / double(ca + cb - inter);
        }

        auto sa = vilu::surface_extract(a, 1);
        auto sb = vilu::surface_extract(b, 1);
        auto hd = vilu::hausdorff(sa, sb, spacing);
        auto ns = vilu::nsd(sa, sb, spacing, 1.0);
        if (sa.empty() || sb.empty()) continue;  // conventions covered elsewhere
        auto dab = brute(sa, sb);
        auto dba = brute(sb, sa);
        double ref_hd = std::max(*std::max_element(dab.begin(), dab.end()),
                                 *std::max_element(dba.begin(), dba.end()));
        double ref_hd95 = std::max(pct(dab, 95.0), pct(dba, 95.0));
        std::size_t hit = 0;
        for (double x : dab) hit += x <= 1.0;
        for (double x : dba) hit += x <= 1.0;
        double ref_nsd = double(hit) / double(dab.size() + dba.size());
        worst_mm = std::max({worst_mm, std::abs(hd.hd - ref_hd), std::abs(hd.hd95 - ref_hd95)});
        ok = ok && std::abs(hd.hd - ref_hd) < 1e-9 && std::abs(hd.hd95 - ref_hd95) < 1e-9 &&
             std::abs(ns.nsd - ref_nsd) < 1e-9;
    }
    std::cout << "  max distance disagreement " << worst_mm << " mm" << std::endl;
    report(5, "metric oracle equivalence", ok);
}

// 6. Overfit sanity: 8 synthetic 64x64 training cases, 2 held-out; train
// DSC > 0.95 within 200 steps, val DSC > 0.85, under 10 minutes.
TEST(Acceptance, C6_OverfitSanity) {
    auto t0 = std::chrono::steady_clock::now();
    vilu::SynthConfig sc;
    sc.seed = 6;
    sc.n_cases = 10;
    sc.dims = {64, 64};
    auto samples = vilu::synth_dataset(sc);
    for (auto& s : samples) vilu::clip_normalize(s.image);
    std::vector<Sample> train_set(samples.begin(), samples.begin() + 8);
    std::vector<Sample> val_set(samples.begin() + 8, samples.end());

    NetworkConfig ncfg;
    ncfg.base_channels = 8;
    ncfg.num_stages = 2;
    ncfg.num_heads = 2;
    auto net = vilu::make_network<float>(ncfg, 6);
    vilu::TrainConfig tcfg;
    tcfg.epochs = 50;  // 8 cases / batch 2 -> 4 steps per epoch -> 200 steps
    tcfg.seed = 6;
    tcfg.val_interval = 0;
    auto dir = temp_dir("overfit");
    tcfg.checkpoint_dir = (dir / "ckpt").string();
    auto res = vilu::train(net, train_set, {}, tcfg, (dir / "log.csv").string());
    double train_dsc = vilu::evaluate(net, train_set).mean_dsc;
    double val_dsc = vilu::evaluate(net, val_set).mean_dsc;
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "  steps " << res.steps << " train DSC " << train_dsc << " val DSC " << val_dsc
              << " in " << secs << " s" << std::endl;
    report(6, "overfit sanity",
           res.steps <= 200 && train_dsc > 0.95 && val_dsc > 0.85 && secs < 600.0);
}

// 7. clip_normalize anchor points map exactly; respace identity is exact
// within 1e-6.
TEST(Acceptance, C7_PreprocessingExactness) {
    vilu::Volume v;
    v.dims = {1, 5};
    v.spacing = {1.0, 1.0};
    v.origin = {0.0, 0.0};
    v.data = {-200.0f, -125.0f, 75.0f, 275.0f, 400.0f};
    vilu::clip_normalize(v);
    bool ok = v.data[0] == 0.0f && v.data[1] == 0.0f && v.data[2] == 0.5f && v.data[3] == 1.0f &&
              v.data[4] == 1.0f;

    vilu::Volume w;
    w.dims = {3, 4};
    w.spacing = {1.25, 0.5};
    w.origin = {0.0, 0.0};
    w.data.resize(12);
    for (std::size_t i = 0; i < 12; ++i) w.data[i] = 0.3f * float(i) - 1.0f;
    auto r = vilu::respace(w, w.spacing);
    ok = ok && r.dims == w.dims;
    for (std::size_t i = 0; i < 12 && ok; ++i) ok = std::abs(r.data[i] - w.data[i]) < 1e-6f;
    report(7, "preprocessing exactness", ok);
}

// 8. Determinism: two seed-fixed synth -> preprocess -> train(1 epoch, f64)
// runs produce bit-identical logs and checkpoints.
TEST(Acceptance, C8_Determinism) {
    auto pipeline = [&](const fs::path& dir) {
        vilu::SynthConfig sc;
        sc.seed = 8;
        sc.n_cases = 4;
        sc.dims = {16, 16};
        auto samples = vilu::synth_dataset(sc);
        vilu::write_dataset((dir / "raw").string(), samples);
        // preprocess from the files, as the CLI pipeline does
        std::string manifest = (dir / "raw" / "manifest.json").string();
        std::vector<Sample> prepped;
        for (const auto& e : vilu::read_manifest(manifest)) {
            Sample s = vilu::load_sample(manifest, e, 2);
            vilu::clip_normalize(s.image);
            s.image = vilu::respace(s.image, {1.0, 1.0});
            s.label = vilu::respace_labels(s.label, {1.0, 1.0});
            prepped.push_back(std::move(s));
        }
        NetworkConfig ncfg;
        ncfg.base_channels = 2;
        ncfg.num_stages = 2;
        ncfg.num_heads = 2;
        auto net = vilu::make_network<double>(ncfg, 8);
        vilu::TrainConfig tcfg;
        tcfg.epochs = 1;
        tcfg.seed = 8;
        tcfg.precision = "f64";
        tcfg.val_interval = 0;
        tcfg.checkpoint_dir = (dir / "ckpt").string();
        vilu::train(net, prepped, {}, tcfg, (dir / "log.csv").string());
    };
    auto a = temp_dir("det_a");
    auto b = temp_dir("det_b");
    pipeline(a);
    pipeline(b);
    bool ok = read_file(a / "log.csv") == read_file(b / "log.csv") &&
              read_file(a / "ckpt" / "last.ckpt") == read_file(b / "ckpt" / "last.ckpt") &&
              !read_file(a / "log.csv").empty();
    report(8, "determinism", ok);
}

// 9. With zero-initialized down-projections the full network equals the
// blocks-removed convolutional skeleton bitwise.
TEST(Acceptance, C9_ResidualReduction) {
    std::mt19937 rng(91);
    std::normal_distribution<double> d(0.0, 1.0);
    bool ok = true;
    for (std::size_t stages : {2u, 3u}) {
        NetworkConfig cfg;
        cfg.base_channels = 4;
        cfg.num_stages = stages;
        cfg.num_heads = 2;
        auto net = vilu::make_network<double>(cfg, 9, /*zero_down_proj=*/true);
        std::size_t ext = std::size_t(4) << (stages - 1);
        auto x = Tensor<double>::zeros({1, 1, ext, ext});
        for (auto& v : x.mutable_data()) v = d(rng);
        auto full = vilu::forward(net, x, /*skip_vil_blocks=*/false);
        auto skel = vilu::forward(net, x, /*skip_vil_blocks=*/true);
        for (std::size_t i = 0; i < full.size(); ++i)
            ok = ok && full.data()[i] == skel.data()[i];
    }
    report(9, "residual reduction", ok);
}
