#pragma once

// Synthetic segmentation dataset: elliptical/rectangular high-intensity blobs
// on a noisy low-intensity background, with HU-like statistics (foreground
// N(60, 20), background N(-50, 30)). Same seed, same machine -> identical
// bytes. Cases are split train/val/test by a stable hash of the case id.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "vilu/nrrd.hpp"
#include "vilu/volume.hpp"

namespace vilu {

struct SynthConfig {
    std::uint64_t seed = 0;
    std::size_t n_cases = 8;
    std::vector<std::size_t> dims = {64, 64};  // rank 2 or 3
    int num_classes = 2;
    std::vector<double> spacing;  // defaults to 1 mm isotropic
    double fg_min_fraction = 0.01;
    double fg_max_fraction = 0.60;
    double train_ratio = 0.70;
    double val_ratio = 0.15;  // remainder is test
    float fg_mean = 60.0f, fg_std = 20.0f;
    float bg_mean = -50.0f, bg_std = 30.0f;
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string split_for(const std::string& case_id, double train_ratio, double val_ratio) {
    double u = double(fnv1a(case_id) % 10000) / 10000.0;
    if (u < train_ratio) return "train";
    if (u < train_ratio + val_ratio) return "val";
    return "test";
}

}  // namespace detail

inline std::vector<Sample> synth_dataset(const SynthConfig& cfg) {
    if (cfg.num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
    if (cfg.dims.size() != 2 && cfg.dims.size() != 3)
        throw ConfigError("synth: shape rank must be 2 or 3");
    std::vector<double> spacing = cfg.spacing.empty()
                                      ? std::vector<double>(cfg.dims.size(), 1.0)
                                      : cfg.spacing;
    std::size_t rank = cfg.dims.size();
    std::size_t dz = rank == 3 ? cfg.dims[0] : 1;
    std::size_t dy = cfg.dims[rank - 2], dx = cfg.dims[rank - 1];
    std::size_t voxels = dz * dy * dx;

    std::mt19937 rng(std::uint32_t(cfg.seed));
    std::normal_distribution<float> fg(cfg.fg_mean, cfg.fg_std);
    std::normal_distribution<float> bg(cfg.bg_mean, cfg.bg_std);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<Sample> out;
    out.reserve(cfg.n_cases);
    for (std::size_t n = 0; n < cfg.n_cases; ++n) {
        Sample s;
        s.case_id = "case_" + std::to_string(cfg.seed) + "_" + std::to_string(n);
        s.split = detail::split_for(s.case_id, cfg.train_ratio, cfg.val_ratio);

        LabelMap& l = s.label;
        l.dims = cfg.dims;
        l.spacing = spacing;
        l.origin.assign(rank, 0.0);
        l.num_classes = cfg.num_classes;

        bool placed = false;
        for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
            l.data.assign(voxels, 0);
            for (int cls = 1; cls < cfg.num_classes; ++cls) {
                int blobs = 1 + int(rng() % 2);
                for (int b = 0; b < blobs; ++b) {
                    bool rect = unit(rng) < 0.5;
                    // radii between 8% and 22% of each extent, centers kept
                    // far enough from the edges that the blob fits
                    double rz = rank == 3 ? (0.08 + 0.14 * unit(rng)) * double(dz) : 0.5;
                    double ry = (0.08 + 0.14 * unit(rng)) * double(dy);
                    double rx = (0.08 + 0.14 * unit(rng)) * double(dx);
                    if ((rank == 3 && rz >= double(dz) / 2) || ry >= double(dy) / 2 ||
                        rx >= double(dx) / 2)
                        throw Error("synth: blob does not fit in shape");
                    double cz = rank == 3 ? rz + unit(rng) * (double(dz) - 2 * rz) : 0.0;
                    double cy = ry + unit(rng) * (double(dy) - 2 * ry);
                    double cx = rx + unit(rng) * (double(dx) - 2 * rx);
                    std::size_t i = 0;
                    for (std::size_t z = 0; z < dz; ++z)
                        for (std::size_t y = 0; y < dy; ++y)
                            for (std::size_t x = 0; x < dx; ++x, ++i) {
                                double ez = rank == 3 ? (double(z) - cz) / rz : 0.0;
                                double ey = (double(y) - cy) / ry;
                                double ex = (double(x) - cx) / rx;
                                bool in = rect ? (std::abs(ez) <= 1 && std::abs(ey) <= 1 &&
                                                  std::abs(ex) <= 1)
                                               : (ez * ez + ey * ey + ex * ex <= 1.0);
                                if (in) l.data[i] = std::uint8_t(cls);
                            }
                }
            }
            std::size_t fgv = 0;
            for (auto v : l.data) fgv += v != 0;
            double frac = double(fgv) / double(voxels);
            placed = frac >= cfg.fg_min_fraction && frac <= cfg.fg_max_fraction;
        }
        if (!placed)
            throw Error("synth: could not place blobs within foreground-fraction bounds for " +
                        s.case_id);

        Volume& v = s.image;
        v.dims = cfg.dims;
        v.spacing = spacing;
        v.origin.assign(rank, 0.0);
        v.data.resize(voxels);
        for (std::size_t i = 0; i < voxels; ++i)
            v.data[i] = l.data[i] != 0 ? fg(rng) : bg(rng);
        out.push_back(std::move(s));
    }
    return out;
}

// Writes <case>_img.nrrd / <case>_lbl.nrrd plus manifest.json into dir.
inline std::string write_dataset(const std::string& dir, const std::vector<Sample>& samples,
                                 NrrdEncoding encoding = NrrdEncoding::Raw) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& s : samples) {
        std::string img = s.case_id + "_img.nrrd";
        std::string lbl = s.case_id + "_lbl.nrrd";
        write_nrrd((fs::path(dir) / img).string(), s.image, NrrdType::Float, encoding);
        write_nrrd((fs::path(dir) / lbl).string(), s.label, encoding);
        manifest.push_back({{"case_id", s.case_id},
                            {"image_path", img},
                            {"label_path", lbl},
                            {"split", s.split}});
    }
    std::string mpath = (fs::path(dir) / "manifest.json").string();
    std::ofstream f(mpath);
    if (!f) throw FormatError("synth: cannot write " + mpath);
    f << manifest.dump(2) << "\n";
    return mpath;
}

struct ManifestEntry {
    std::string case_id, image_path, label_path, split;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("manifest: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest: invalid JSON in " + path + ": " + e.what());
    }
    if (!j.is_array()) throw FormatError("manifest: expected a top-level array in " + path);
    std::vector<ManifestEntry> out;
    for (const auto& e : j)
        out.push_back({e.at("case_id").get<std::string>(), e.at("image_path").get<std::string>(),
                       e.at("label_path").get<std::string>(), e.at("split").get<std::string>()});
    return out;
}

// Loads one manifest entry's files, resolving paths relative to the manifest.
inline Sample load_sample(const std::string& manifest_path, const ManifestEntry& e,
                          int num_classes) {
    namespace fs = std::filesystem;
    fs::path base = fs::path(manifest_path).parent_path();
    Sample s;
    s.case_id = e.case_id;
    s.split = e.split;
    s.image = read_nrrd_volume((base / e.image_path).string());
    s.label = read_nrrd_labels((base / e.label_path).string(), num_classes);
    if (s.image.dims != s.label.dims)
        throw FormatError("manifest: image/label shape mismatch for " + e.case_id);
    return s;
}

}  // namespace vilu
