#pragma once

// Training loop: Dice+CE objective, Adam, deterministic per-epoch shuffling,
// periodic validation with best-DSC checkpointing, CSV curve logging, and
// exact resume. The batch order for epoch e is a pure function of (seed, e),
// so resuming from a saved step replays the identical schedule.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "vilu/checkpoint.hpp"
#include "vilu/loss.hpp"
#include "vilu/metrics.hpp"
#include "vilu/network.hpp"
#include "vilu/optimizer.hpp"
#include "vilu/volume.hpp"

namespace vilu {

struct TrainConfig {
    double lr = 0.005;
    std::size_t batch_size = 2;
    std::size_t epochs = 50;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::uint64_t seed = 0;
    std::size_t val_interval = 50;  // steps between validation passes
    std::string checkpoint_dir = "checkpoints";
    std::string precision = "f32";  // f32 | f64
    double clip_norm = 0.0;        // 0 disables clipping
    std::size_t max_steps = 0;     // 0 means run all epochs
    double nsd_tolerance_mm = 1.0;

    void validate() const {
        if (!(lr > 0)) throw ConfigError("train: lr must be > 0");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (precision != "f32" && precision != "f64")
            throw ConfigError("train: precision must be f32 or f64");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"lr", c.lr},           {"batch_size", c.batch_size},
         {"epochs", c.epochs},   {"beta1", c.beta1},
         {"beta2", c.beta2},     {"eps", c.eps},
         {"seed", c.seed},       {"val_interval", c.val_interval},
         {"checkpoint_dir", c.checkpoint_dir}, {"precision", c.precision},
         {"clip_norm", c.clip_norm}, {"max_steps", c.max_steps},
         {"nsd_tolerance_mm", c.nsd_tolerance_mm}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.seed = j.value("seed", c.seed);
    c.val_interval = j.value("val_interval", c.val_interval);
    c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
    c.precision = j.value("precision", c.precision);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.nsd_tolerance_mm = j.value("nsd_tolerance_mm", c.nsd_tolerance_mm);
}

namespace detail {

// Stacks sample images into [B, 1, H, W] and labels into a flat target grid.
template <class T>
Tensor<T> batch_images(const std::vector<const Sample*>& batch) {
    std::size_t H = batch[0]->image.dims[0], W = batch[0]->image.dims[1];
    auto x = Tensor<T>::zeros({batch.size(), 1, H, W});
    auto d = x.mutable_data();
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& img = batch[b]->image;
        if (img.dims.size() != 2 || img.dims[0] != H || img.dims[1] != W)
            throw DimensionError("train: case " + batch[b]->case_id +
                                 " does not match batch extents");
        for (std::size_t i = 0; i < img.data.size(); ++i) d[b * H * W + i] = T(img.data[i]);
    }
    return x;
}

inline std::vector<int> batch_targets(const std::vector<const Sample*>& batch) {
    std::vector<int> t;
    for (const auto* s : batch)
        for (auto v : s->label.data) t.push_back(int(v));
    return t;
}

}  // namespace detail

// Argmax of the class probabilities as a label map aligned with `like`.
template <class T>
LabelMap predict_labels(const Network<T>& net, const Sample& s) {
    std::vector<const Sample*> one{&s};
    Tensor<T> p = predict(net, detail::batch_images<T>(one));
    std::size_t K = p.dim(1), sp = p.dim(2) * p.dim(3);
    LabelMap out;
    out.dims = s.label.dims;
    out.spacing = s.label.spacing;
    out.origin = s.label.origin;
    out.num_classes = int(K);
    out.data.resize(sp);
    for (std::size_t i = 0; i < sp; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < K; ++c)
            if (p.data()[c * sp + i] > p.data()[best * sp + i]) best = c;
        out.data[i] = std::uint8_t(best);
    }
    return out;
}

struct EvalSummary {
    std::vector<std::pair<std::string, MetricsReport>> per_case;
    double mean_dsc = 0.0, mean_iou = 0.0, mean_nsd = 0.0, mean_hd = 0.0, mean_hd95 = 0.0;
};

// Per-case metric reports plus unweighted means over cases.
template <class T>
EvalSummary evaluate(const Network<T>& net, const std::vector<Sample>& samples,
                     double nsd_tolerance_mm = 1.0) {
    EvalSummary s;
    for (const auto& smp : samples) {
        LabelMap pred = predict_labels(net, smp);
        MetricsReport r = evaluate_pair(pred, smp.label, nsd_tolerance_mm);
        s.mean_dsc += r.mean_dsc;
        s.mean_iou += r.mean_iou;
        s.mean_nsd += r.mean_nsd;
        s.mean_hd += r.mean_hd;
        s.mean_hd95 += r.mean_hd95;
        s.per_case.emplace_back(smp.case_id, std::move(r));
    }
    if (!s.per_case.empty()) {
        double n = double(s.per_case.size());
        s.mean_dsc /= n;
        s.mean_iou /= n;
        s.mean_nsd /= n;
        s.mean_hd /= n;
        s.mean_hd95 /= n;
    }
    return s;
}

struct TrainResult {
    std::size_t steps = 0;
    double final_loss = 0.0;
    double best_val_dsc = -1.0;
    double final_train_dsc = 0.0;
    std::string best_checkpoint, last_checkpoint;
};

// Epoch-e batch order; pure in (seed, e) so resume replays it exactly.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937 rng{std::uint32_t(seed * 2654435761ull + epoch + 1)};
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

template <class T>
TrainResult train(Network<T>& net, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg,
                  const std::string& log_path, AdamState<T>* resume_state = nullptr,
                  std::size_t resume_step = 0, double resume_best = -1.0) {
    cfg.validate();
    if (train_set.empty()) throw ConfigError("train: empty training set");
    namespace fs = std::filesystem;
    fs::create_directories(cfg.checkpoint_dir);

    AdamState<T> state = resume_state ? *resume_state : make_adam_state(net.params);
    state.step = resume_step;
    AdamConfig<T> acfg{T(cfg.lr), T(cfg.beta1), T(cfg.beta2), T(cfg.eps)};

    std::ofstream log(log_path, resume_step ? std::ios::app : std::ios::trunc);
    if (!log) throw FormatError("train: cannot write log " + log_path);
    if (!resume_step) log << "step,epoch,loss,val_dsc\n";

    std::size_t steps_per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
    std::size_t total = cfg.epochs * steps_per_epoch;
    if (cfg.max_steps) total = std::min(total, cfg.max_steps);

    TrainResult res;
    res.best_val_dsc = resume_best;
    res.best_checkpoint = (fs::path(cfg.checkpoint_dir) / "best.ckpt").string();
    res.last_checkpoint = (fs::path(cfg.checkpoint_dir) / "last.ckpt").string();

    auto save_with_state = [&](const std::string& path, double best) {
        auto tensors = net.params;
        for (std::size_t i = 0; i < state.m.size(); ++i) {
            tensors.push_back(state.m[i]);
            tensors.push_back(state.v[i]);
        }
        TrainConfig saved = cfg;
        saved.checkpoint_dir.clear();  // keep checkpoints path-independent
        nlohmann::json extra = {{"step", state.step},
                                {"best_val_dsc", best},
                                {"train", nlohmann::json(saved)}};
        save_checkpoint_tensors(path, tensors, nlohmann::json(net.cfg), extra);
    };

    auto validate_now = [&]() {
        if (val_set.empty()) return -1.0;
        return evaluate(net, val_set, cfg.nsd_tolerance_mm).mean_dsc;
    };

    for (std::size_t step = resume_step; step < total; ++step) {
        std::size_t epoch = step / steps_per_epoch;
        std::size_t bi = step % steps_per_epoch;
        auto order = epoch_order(train_set.size(), cfg.seed, epoch);
        std::vector<const Sample*> batch;
        for (std::size_t j = bi * cfg.batch_size;
             j < std::min((bi + 1) * cfg.batch_size, train_set.size()); ++j)
            batch.push_back(&train_set[order[j]]);

        for (auto& [name, p] : net.params) p.zero_grad();
        Tensor<T> x = detail::batch_images<T>(batch);
        Tensor<T> loss = combined_loss(forward(net, x), detail::batch_targets(batch));
        double lv = double(loss.item());
        if (!std::isfinite(lv))
            throw NumericError("train: non-finite loss at step " + std::to_string(step + 1) +
                               "; last checkpoint retained");
        backward(loss);
        if (cfg.clip_norm > 0) clip_grad_norm(net.params, T(cfg.clip_norm));
        adam_step(net.params, state, acfg);
        res.final_loss = lv;
        res.steps = state.step;

        bool do_val = cfg.val_interval && (state.step % cfg.val_interval == 0 ||
                                           state.step == total);
        double vd = do_val ? validate_now() : -1.0;
        log << state.step << "," << epoch << "," << lv << ",";
        if (vd >= 0) log << vd;
        log << "\n";
        if (vd >= 0 && vd > res.best_val_dsc) {
            res.best_val_dsc = vd;
            save_with_state(res.best_checkpoint, res.best_val_dsc);
        }
    }
    save_with_state(res.last_checkpoint, res.best_val_dsc);
    res.final_train_dsc = evaluate(net, train_set, cfg.nsd_tolerance_mm).mean_dsc;
    log.flush();
    return res;
}

// Loads params + Adam moments saved by train(); returns (step, best_val_dsc).
template <class T>
std::pair<std::size_t, double> load_train_checkpoint(const std::string& path, Network<T>& net,
                                                     AdamState<T>& state) {
    auto tensors = net.params;
    if (state.m.empty()) state = make_adam_state(net.params);
    for (std::size_t i = 0; i < state.m.size(); ++i) {
        tensors.push_back(state.m[i]);
        tensors.push_back(state.v[i]);
    }
    nlohmann::json header = load_checkpoint_tensors(path, tensors);
    // copy payloads back: load filled the copies in `tensors`, which share
    // nodes with net.params / state, so nothing further to do
    nlohmann::json extra = header.value("extra", nlohmann::json::object());
    std::size_t step = extra.value("step", std::size_t(0));
    state.step = step;
    return {step, extra.value("best_val_dsc", -1.0)};
}

}  // namespace vilu
