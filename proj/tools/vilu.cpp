// Command-line front end: dataset synthesis, preprocessing, training,
// evaluation, gradient verification, and overlay rendering.
//
// Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric
// failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "vilu/checkpoint.hpp"
#include "vilu/loss.hpp"
#include "vilu/network.hpp"
#include "vilu/png.hpp"
#include "vilu/preprocess.hpp"
#include "vilu/synth.hpp"
#include "vilu/train.hpp"

namespace fs = std::filesystem;

namespace {

std::size_t thread_cap() {
    if (const char* env = std::getenv("VILU_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return std::size_t(v);
    }
    std::size_t hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

// Runs fn(i) for i in [0, n) on up to thread_cap() workers. Tasks must be
// independent; output files per task keep the result deterministic.
template <class Fn>
void parallel_for(std::size_t n, Fn fn) {
    std::size_t workers = std::min(thread_cap(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

std::vector<std::size_t> parse_shape(const std::string& s) {
    std::string body = s;
    std::replace(body.begin(), body.end(), 'x', ' ');
    std::replace(body.begin(), body.end(), ',', ' ');
    std::istringstream is(body);
    std::vector<std::size_t> dims;
    std::size_t d;
    while (is >> d) dims.push_back(d);
    if (dims.size() != 2 && dims.size() != 3)
        throw vilu::ConfigError("shape must have 2 or 3 extents, got '" + s + "'");
    return dims;
}

std::vector<double> parse_spacing(const std::string& s) {
    std::string body = s;
    std::replace(body.begin(), body.end(), ',', ' ');
    std::istringstream is(body);
    std::vector<double> v;
    double d;
    while (is >> d) v.push_back(d);
    return v;
}

// Applies "a.b.c=value" overrides onto a JSON config; the key must already
// exist (unknown keys are rejected) and the value is parsed as JSON when
// possible, else taken as a string. Last override wins.
void apply_overrides(nlohmann::json& cfg, const std::vector<std::string>& sets) {
    for (const auto& kv : sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw vilu::ConfigError("override '" + kv + "' is not key=value");
        std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        nlohmann::json* node = &cfg;
        std::size_t pos = 0;
        while (true) {
            auto dot = key.find('.', pos);
            std::string part = key.substr(pos, dot - pos);
            if (!node->contains(part))
                throw vilu::ConfigError("unknown config key '" + key + "'");
            node = &(*node)[part];
            if (dot == std::string::npos) break;
            pos = dot + 1;
        }
        nlohmann::json parsed = nlohmann::json::parse(val, nullptr, false);
        *node = parsed.is_discarded() ? nlohmann::json(val) : parsed;
    }
}

std::vector<vilu::Sample> load_split(const std::string& manifest, const std::string& split,
                                     int num_classes) {
    std::vector<vilu::Sample> out;
    for (const auto& e : vilu::read_manifest(manifest))
        if (split == "all" || e.split == split)
            out.push_back(vilu::load_sample(manifest, e, num_classes));
    return out;
}

nlohmann::json report_json(const vilu::MetricsReport& r) {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [cls, m] : r.per_class)
        per[std::to_string(cls)] = {{"dsc", m.dsc},   {"iou", m.iou},
                                    {"nsd", m.nsd},   {"hd", m.hd},
                                    {"hd95", m.hd95}, {"surface_defined", m.surface_defined}};
    return {{"per_class", per},       {"mean_dsc", r.mean_dsc}, {"mean_iou", r.mean_iou},
            {"mean_nsd", r.mean_nsd}, {"mean_hd", r.mean_hd},   {"mean_hd95", r.mean_hd95}};
}

// ---- subcommand bodies ----

int run_synth(std::uint64_t seed, std::size_t cases, const std::string& shape, int classes,
              const std::string& out, bool gzip) {
    vilu::SynthConfig cfg;
    cfg.seed = seed;
    cfg.n_cases = cases;
    cfg.dims = parse_shape(shape);
    cfg.num_classes = classes;
    auto samples = vilu::synth_dataset(cfg);
    std::string manifest = vilu::write_dataset(
        out, samples, gzip ? vilu::NrrdEncoding::Gzip : vilu::NrrdEncoding::Raw);
    std::cout << "wrote " << samples.size() << " cases, manifest " << manifest << "\n";
    return 0;
}

int run_preprocess(const std::string& in_manifest, const std::string& out,
                   const std::string& spacing_str, int classes) {
    auto entries = vilu::read_manifest(in_manifest);
    if (entries.empty()) throw vilu::FormatError("preprocess: empty manifest");
    fs::create_directories(out);
    std::vector<double> spacing = parse_spacing(spacing_str);
    parallel_for(entries.size(), [&](std::size_t i) {
        const auto& e = entries[i];
        try {
            vilu::Sample s = vilu::load_sample(in_manifest, e, classes);
            std::vector<double> target =
                spacing.empty() ? std::vector<double>(s.image.dims.size(), 1.0) : spacing;
            vilu::clip_normalize(s.image);
            vilu::Volume img = vilu::respace(s.image, target);
            vilu::LabelMap lbl = vilu::respace_labels(s.label, target);
            vilu::write_nrrd((fs::path(out) / e.image_path).string(), img);
            vilu::write_nrrd((fs::path(out) / e.label_path).string(), lbl);
        } catch (vilu::Error& err) {
            throw vilu::FormatError("case " + e.case_id + ": " + err.what());
        }
    });
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& e : entries)
        manifest.push_back({{"case_id", e.case_id},
                            {"image_path", e.image_path},
                            {"label_path", e.label_path},
                            {"split", e.split}});
    std::ofstream f(fs::path(out) / "manifest.json");
    f << manifest.dump(2) << "\n";
    std::cout << "preprocessed " << entries.size() << " cases into " << out << "\n";
    return 0;
}

template <class T>
int run_train_typed(const nlohmann::json& cfg_json, const std::string& data,
                    const std::string& out) {
    vilu::NetworkConfig ncfg = cfg_json.at("network").get<vilu::NetworkConfig>();
    vilu::TrainConfig tcfg = cfg_json.at("train").get<vilu::TrainConfig>();
    tcfg.checkpoint_dir = (fs::path(out) / "checkpoints").string();
    auto train_set = load_split(data, "train", int(ncfg.num_classes));
    auto val_set = load_split(data, "val", int(ncfg.num_classes));
    if (train_set.empty()) throw vilu::FormatError("train: manifest has no train split");
    fs::create_directories(out);
    auto net = vilu::make_network<T>(ncfg, tcfg.seed);
    auto res =
        vilu::train(net, train_set, val_set, tcfg, (fs::path(out) / "log.csv").string());
    std::cout << "steps " << res.steps << " final_loss " << res.final_loss << " train_dsc "
              << res.final_train_dsc << " best_val_dsc " << res.best_val_dsc << "\n";
    return 0;
}

int run_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& data, const std::string& out) {
    nlohmann::json cfg = {{"network", nlohmann::json(vilu::NetworkConfig{})},
                          {"train", nlohmann::json(vilu::TrainConfig{})}};
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) throw vilu::ConfigError("cannot open config " + config_path);
        nlohmann::json user = nlohmann::json::parse(f, nullptr, true);
        for (auto& [section, values] : user.items()) {
            if (!cfg.contains(section))
                throw vilu::ConfigError("unknown config section '" + section + "'");
            for (auto& [k, v] : values.items()) {
                if (!cfg[section].contains(k))
                    throw vilu::ConfigError("unknown config key '" + section + "." + k + "'");
                cfg[section][k] = v;
            }
        }
    }
    apply_overrides(cfg, sets);
    std::string precision = cfg["train"]["precision"].get<std::string>();
    if (precision == "f64") return run_train_typed<double>(cfg, data, out);
    return run_train_typed<float>(cfg, data, out);
}

int run_eval(const std::string& pred_dir, const std::string& ref_dir,
             const std::string& checkpoint, const std::string& data, const std::string& split,
             int classes, double tol, const std::string& out_path) {
    nlohmann::json results = nlohmann::json::array();
    double mean_dsc = 0;
    std::size_t n = 0;
    if (!pred_dir.empty()) {
        if (ref_dir.empty()) throw vilu::ConfigError("--pred-dir requires --ref-dir");
        std::string pm = (fs::path(pred_dir) / "manifest.json").string();
        std::string rm = (fs::path(ref_dir) / "manifest.json").string();
        auto refs = vilu::read_manifest(rm);
        for (const auto& re : refs) {
            vilu::LabelMap ref = vilu::read_nrrd_labels(
                (fs::path(ref_dir) / re.label_path).string(), classes);
            vilu::LabelMap pred = vilu::read_nrrd_labels(
                (fs::path(pred_dir) / re.label_path).string(), classes);
            auto rep = vilu::evaluate_pair(pred, ref, tol);
            results.push_back({{"case_id", re.case_id}, {"metrics", report_json(rep)}});
            mean_dsc += rep.mean_dsc;
            ++n;
        }
        (void)pm;
    } else if (!checkpoint.empty()) {
        auto net = vilu::load_checkpoint_network<float>(checkpoint);
        auto samples = load_split(data, split, int(net.cfg.num_classes));
        if (samples.empty()) throw vilu::FormatError("eval: no cases in split '" + split + "'");
        auto summary = vilu::evaluate(net, samples, tol);
        for (const auto& [id, rep] : summary.per_case)
            results.push_back({{"case_id", id}, {"metrics", report_json(rep)}});
        mean_dsc = summary.mean_dsc;
        n = summary.per_case.size();
        mean_dsc *= double(n);  // renormalized below with everyone else
    } else {
        throw vilu::ConfigError("eval needs either --pred-dir/--ref-dir or --checkpoint/--data");
    }
    double agg = n ? mean_dsc / double(n) : 0.0;
    nlohmann::json outj = {{"cases", results}, {"aggregate", {{"mean_dsc", agg}, {"n", n}}}};
    if (!out_path.empty()) {
        std::ofstream f(out_path);
        f << outj.dump(2) << "\n";
    }
    std::cout << "cases " << n << " aggregate_dsc " << agg << "\n";
    return 0;
}

int run_gradcheck(std::size_t extent, std::size_t stages, std::size_t base) {
    vilu::NetworkConfig cfg;
    cfg.base_channels = base;
    cfg.num_stages = stages;
    cfg.num_heads = 2;
    auto net = vilu::make_network<double>(cfg, 2, /*zero_down_proj=*/false);
    std::mt19937 rng(6789);
    std::normal_distribution<double> d(0.0, 0.5);
    auto x = vilu::Tensor<double>::zeros({1, 1, extent, extent});
    for (auto& v : x.mutable_data()) v = d(rng);
    std::vector<int> target(extent * extent);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = int(i % cfg.num_classes);
    auto loss_fn = [&] { return vilu::combined_loss(vilu::forward(net, x), target); };

    for (auto& [name, p] : net.params) p.zero_grad();
    auto loss = loss_fn();
    backward(loss);

    // fourth-order central differences on a deterministic sample of
    // parameter entries (higher order suppresses truncation error from the
    // exponential gates without shrinking h into roundoff territory)
    const double h = 1e-5;
    double worst = 0;
    std::string worst_name;
    for (auto& [name, p] : net.params) {
        auto vals = p.mutable_data();
        std::size_t stride = std::max<std::size_t>(1, vals.size() / 4);
        for (std::size_t i = 0; i < vals.size(); i += stride) {
            double orig = vals[i];
            auto at = [&](double dx) {
                vals[i] = orig + dx;
                double r = loss_fn().item();
                vals[i] = orig;
                return r;
            };
            double fd = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
            double ad = p.grad()[i];
            double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-3});
            if (rel > worst) {
                worst = rel;
                worst_name = name;
            }
        }
    }
    std::cout << "max_rel_err " << worst << " (" << worst_name << ")\n";
    if (worst >= 1e-4)
        throw vilu::NumericError("gradcheck: max relative error " + std::to_string(worst) +
                                 " in " + worst_name);
    return 0;
}

int run_overlay(const std::string& data, const std::string& out, int classes) {
    static const std::uint8_t palette[6][3] = {{230, 60, 60},  {60, 200, 90},  {70, 110, 240},
                                               {240, 200, 50}, {200, 80, 220}, {60, 210, 210}};
    auto entries = vilu::read_manifest(data);
    fs::create_directories(out);
    std::size_t written = 0;
    for (const auto& e : entries) {
        vilu::Sample s = vilu::load_sample(data, e, classes);
        if (s.image.dims.size() != 2) continue;  // overlays render 2-D cases only
        std::size_t H = s.image.dims[0], W = s.image.dims[1];
        float lo = s.image.data[0], hi = s.image.data[0];
        for (float v : s.image.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        float rng = hi > lo ? hi - lo : 1.0f;
        std::vector<std::uint8_t> rgb(H * W * 3);
        for (std::size_t i = 0; i < H * W; ++i) {
            float g = (s.image.data[i] - lo) / rng;
            std::uint8_t gray = std::uint8_t(g * 255.0f);
            std::uint8_t r = gray, gg = gray, b = gray;
            int cls = s.label.data[i];
            if (cls > 0) {
                const auto& c = palette[(cls - 1) % 6];
                r = std::uint8_t((gray + c[0]) / 2);
                gg = std::uint8_t((gray + c[1]) / 2);
                b = std::uint8_t((gray + c[2]) / 2);
            }
            rgb[i * 3] = r;
            rgb[i * 3 + 1] = gg;
            rgb[i * 3 + 2] = b;
        }
        vilu::write_png((fs::path(out) / (e.case_id + ".png")).string(), W, H, rgb);
        ++written;
    }
    std::cout << "wrote " << written << " overlays to " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ViLU-Net segmentation pipeline"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::uint64_t seed = 0;
    std::size_t cases = 8;
    std::string shape = "64x64", out_dir;
    int classes = 2;
    bool gzip = false;
    synth->add_option("--seed", seed);
    synth->add_option("--cases", cases);
    synth->add_option("--shape", shape, "e.g. 64x64 or 16x64x64");
    synth->add_option("--classes", classes);
    synth->add_option("--out", out_dir)->required();
    synth->add_flag("--gzip", gzip, "write gzip-encoded payloads");

    auto* pre = app.add_subcommand("preprocess", "clip/normalize/respace a dataset");
    std::string pre_in, pre_out, spacing;
    pre->add_option("--in", pre_in, "input manifest.json")->required();
    pre->add_option("--out", pre_out)->required();
    pre->add_option("--spacing", spacing, "target spacing, e.g. 1,1 (default 1 mm isotropic)");
    pre->add_option("--classes", classes);

    auto* tr = app.add_subcommand("train", "train a network");
    std::string tr_data, tr_out, tr_config;
    std::vector<std::string> tr_sets;
    tr->add_option("--data", tr_data, "manifest.json of a preprocessed dataset")->required();
    tr->add_option("--out", tr_out)->required();
    tr->add_option("--config", tr_config, "JSON with network/train sections");
    tr->add_option("--set", tr_sets, "override, e.g. train.lr=0.01 (last wins)");

    auto* ev = app.add_subcommand("eval", "evaluate predictions or a checkpoint");
    std::string ev_pred, ev_ref, ev_ckpt, ev_data, ev_split = "val", ev_out;
    double ev_tol = 1.0;
    ev->add_option("--pred-dir", ev_pred);
    ev->add_option("--ref-dir", ev_ref);
    ev->add_option("--checkpoint", ev_ckpt);
    ev->add_option("--data", ev_data);
    ev->add_option("--split", ev_split, "train|val|test|all");
    ev->add_option("--classes", classes);
    ev->add_option("--nsd-tolerance", ev_tol, "mm");
    ev->add_option("--out", ev_out, "results JSON path");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference verification (64-bit)");
    std::size_t gc_extent = 16, gc_stages = 2, gc_base = 2;
    gc->add_option("--extent", gc_extent);
    gc->add_option("--stages", gc_stages);
    gc->add_option("--base", gc_base);

    auto* ov = app.add_subcommand("overlay", "render image+mask PNG overlays");
    std::string ov_data, ov_out;
    ov->add_option("--data", ov_data, "manifest.json")->required();
    ov->add_option("--out", ov_out)->required();
    ov->add_option("--classes", classes);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return run_synth(seed, cases, shape, classes, out_dir, gzip);
        if (pre->parsed()) return run_preprocess(pre_in, pre_out, spacing, classes);
        if (tr->parsed()) return run_train(tr_config, tr_sets, tr_data, tr_out);
        if (ev->parsed())
            return run_eval(ev_pred, ev_ref, ev_ckpt, ev_data, ev_split, classes, ev_tol, ev_out);
        if (gc->parsed()) return run_gradcheck(gc_extent, gc_stages, gc_base);
        if (ov->parsed()) return run_overlay(ov_data, ov_out, classes);
    } catch (const vilu::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const vilu::ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const vilu::Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
