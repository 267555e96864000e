#pragma once

// CT intensity normalization and spacing resampling. Intensities are clipped
// to [-125, 275] HU and mapped linearly onto [0, 1]. Resampling uses
// voxel-center alignment: output center i sits at (i + 0.5) * spacing.

#include <cmath>
#include <cstddef>
#include <vector>

#include "vilu/volume.hpp"

namespace vilu {

inline constexpr float kClipLow = -125.0f;
inline constexpr float kClipHigh = 275.0f;

inline void clip_normalize(Volume& v) {
    for (auto& x : v.data) {
        float c = std::min(std::max(x, kClipLow), kClipHigh);
        x = (c - kClipLow) / (kClipHigh - kClipLow);
    }
}

namespace detail {

inline std::vector<std::size_t> respaced_dims(const std::vector<std::size_t>& dims,
                                              const std::vector<double>& spacing,
                                              const std::vector<double>& target) {
    if (target.size() != dims.size())
        throw ConfigError("respace: target spacing rank mismatch");
    std::vector<std::size_t> out(dims.size());
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (!(target[i] > 0)) throw ConfigError("respace: target spacing must be positive");
        out[i] = std::max<std::size_t>(
            1, std::size_t(std::llround(double(dims[i]) * spacing[i] / target[i])));
    }
    return out;
}

// Continuous source index of an output voxel center, clamped to the grid.
inline double src_index(std::size_t i, double target_sp, double src_sp, std::size_t n) {
    double x = (double(i) + 0.5) * target_sp / src_sp - 0.5;
    return std::min(std::max(x, 0.0), double(n - 1));
}

}  // namespace detail

// Linear interpolation per axis (bilinear / trilinear).
inline Volume respace(const Volume& v, const std::vector<double>& target_spacing) {
    v.validate();
    std::size_t rank = v.dims.size();
    Volume out;
    out.dims = detail::respaced_dims(v.dims, v.spacing, target_spacing);
    out.spacing = target_spacing;
    out.origin = v.origin;
    out.data.resize(out.voxels());
    std::size_t oz = rank == 3 ? out.dims[0] : 1;
    std::size_t oy = out.dims[rank - 2], ox = out.dims[rank - 1];
    std::size_t sz = rank == 3 ? v.dims[0] : 1;
    std::size_t sy = v.dims[rank - 2], sx = v.dims[rank - 1];
    double tz = rank == 3 ? target_spacing[0] : 1.0, vz = rank == 3 ? v.spacing[0] : 1.0;
    double ty = target_spacing[rank - 2], vy = v.spacing[rank - 2];
    double tx = target_spacing[rank - 1], vx = v.spacing[rank - 1];
    auto src = [&](std::size_t z, std::size_t y, std::size_t x) {
        return double(v.data[(z * sy + y) * sx + x]);
    };
    std::size_t o = 0;
    for (std::size_t z = 0; z < oz; ++z) {
        double fz = rank == 3 ? detail::src_index(z, tz, vz, sz) : 0.0;
        std::size_t z0 = std::size_t(fz), z1 = std::min(z0 + 1, sz - 1);
        double wz = fz - double(z0);
        for (std::size_t y = 0; y < oy; ++y) {
            double fy = detail::src_index(y, ty, vy, sy);
            std::size_t y0 = std::size_t(fy), y1 = std::min(y0 + 1, sy - 1);
            double wy = fy - double(y0);
            for (std::size_t x = 0; x < ox; ++x, ++o) {
                double fx = detail::src_index(x, tx, vx, sx);
                std::size_t x0 = std::size_t(fx), x1 = std::min(x0 + 1, sx - 1);
                double wx = fx - double(x0);
                double c00 = src(z0, y0, x0) * (1 - wx) + src(z0, y0, x1) * wx;
                double c01 = src(z0, y1, x0) * (1 - wx) + src(z0, y1, x1) * wx;
                double c10 = src(z1, y0, x0) * (1 - wx) + src(z1, y0, x1) * wx;
                double c11 = src(z1, y1, x0) * (1 - wx) + src(z1, y1, x1) * wx;
                double c0 = c00 * (1 - wy) + c01 * wy;
                double c1 = c10 * (1 - wy) + c11 * wy;
                out.data[o] = float(c0 * (1 - wz) + c1 * wz);
            }
        }
    }
    return out;
}

// Nearest-neighbor resampling so class ids stay exact.
inline LabelMap respace_labels(const LabelMap& l, const std::vector<double>& target_spacing) {
    l.validate();
    std::size_t rank = l.dims.size();
    LabelMap out;
    out.dims = detail::respaced_dims(l.dims, l.spacing, target_spacing);
    out.spacing = target_spacing;
    out.origin = l.origin;
    out.num_classes = l.num_classes;
    out.data.resize(out.voxels());
    std::size_t oz = rank == 3 ? out.dims[0] : 1;
    std::size_t oy = out.dims[rank - 2], ox = out.dims[rank - 1];
    std::size_t sz = rank == 3 ? l.dims[0] : 1;
    std::size_t sy = l.dims[rank - 2], sx = l.dims[rank - 1];
    double tz = rank == 3 ? target_spacing[0] : 1.0, vz = rank == 3 ? l.spacing[0] : 1.0;
    double ty = target_spacing[rank - 2], vy = l.spacing[rank - 2];
    double tx = target_spacing[rank - 1], vx = l.spacing[rank - 1];
    std::size_t o = 0;
    for (std::size_t z = 0; z < oz; ++z) {
        std::size_t z0 = rank == 3
                             ? std::size_t(std::llround(detail::src_index(z, tz, vz, sz)))
                             : 0;
        for (std::size_t y = 0; y < oy; ++y) {
            std::size_t y0 = std::size_t(std::llround(detail::src_index(y, ty, vy, sy)));
            for (std::size_t x = 0; x < ox; ++x, ++o) {
                std::size_t x0 = std::size_t(std::llround(detail::src_index(x, tx, vx, sx)));
                out.data[o] = l.data[(z0 * sy + y0) * sx + x0];
            }
        }
    }
    return out;
}

}  // namespace vilu
