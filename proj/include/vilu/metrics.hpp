#pragma once

// Overlap and surface-distance metrics: DSC, IoU, NSD, Hausdorff (max and
// 95th percentile). Surfaces are face-connected boundary voxels; distances
// are Euclidean in physical mm, nearest neighbors found with a KD-tree.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "vilu/volume.hpp"

namespace vilu {

struct OverlapResult {
    double dsc = 0.0;
    double iou = 0.0;
};

inline OverlapResult dsc_iou(const LabelMap& pred, const LabelMap& ref, int cls) {
    if (pred.dims != ref.dims)
        throw DimensionError("dsc_iou: prediction and reference shapes differ");
    std::size_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        bool pa = int(pred.data[i]) == cls;
        bool pb = int(ref.data[i]) == cls;
        a += pa;
        b += pb;
        inter += pa && pb;
    }
    if (a + b == 0) return {1.0, 1.0};  // both-empty convention
    double dsc = 2.0 * double(inter) / double(a + b);
    double uni = double(a + b - inter);
    double iou = uni > 0 ? double(inter) / uni : 1.0;
    return {dsc, iou};
}

using SurfacePoint = std::array<std::ptrdiff_t, 3>;  // (z, y, x); z = 0 for rank 2

// Boundary voxels of the given class: foreground voxels with at least one
// face-connected background neighbor; out-of-bounds counts as background.
inline std::vector<SurfacePoint> surface_extract(const LabelMap& mask, int cls) {
    std::size_t rank = mask.dims.size();
    std::size_t dz = rank == 3 ? mask.dims[0] : 1;
    std::size_t dy = mask.dims[rank - 2], dx = mask.dims[rank - 1];
    auto at = [&](std::size_t z, std::size_t y, std::size_t x) {
        return int(mask.data[(z * dy + y) * dx + x]) == cls;
    };
    std::vector<SurfacePoint> surf;
    for (std::size_t z = 0; z < dz; ++z)
        for (std::size_t y = 0; y < dy; ++y)
            for (std::size_t x = 0; x < dx; ++x) {
                if (!at(z, y, x)) continue;
                bool boundary = (x == 0 || !at(z, y, x - 1)) || (x + 1 == dx || !at(z, y, x + 1)) ||
                                (y == 0 || !at(z, y - 1, x)) || (y + 1 == dy || !at(z, y + 1, x));
                if (rank == 3)
                    boundary = boundary || (z == 0 || !at(z - 1, y, x)) ||
                               (z + 1 == dz || !at(z + 1, y, x));
                if (boundary) surf.push_back({std::ptrdiff_t(z), std::ptrdiff_t(y), std::ptrdiff_t(x)});
            }
    return surf;
}

namespace detail {

// Physical-coordinate KD-tree over 3-D points; exact nearest-neighbor with
// plane pruning. Deliberately different from the brute-force all-pairs oracle
// used by the tests.
class KdTree {
public:
    explicit KdTree(std::vector<std::array<double, 3>> pts) : pts_(std::move(pts)) {
        idx_.resize(pts_.size());
        for (std::size_t i = 0; i < idx_.size(); ++i) idx_[i] = i;
        if (!pts_.empty()) build(0, idx_.size(), 0);
    }

    double nearest_sq(const std::array<double, 3>& q) const {
        double best = std::numeric_limits<double>::infinity();
        query(q, 0, idx_.size(), 0, best);
        return best;
    }

private:
    void build(std::size_t lo, std::size_t hi, int axis) {
        if (hi - lo <= 1) return;
        std::size_t mid = (lo + hi) / 2;
        std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                         [&](std::size_t a, std::size_t b) { return pts_[a][axis] < pts_[b][axis]; });
        build(lo, mid, (axis + 1) % 3);
        build(mid + 1, hi, (axis + 1) % 3);
    }

    void query(const std::array<double, 3>& q, std::size_t lo, std::size_t hi, int axis,
               double& best) const {
        if (lo >= hi) return;
        std::size_t mid = (lo + hi) / 2;
        const auto& p = pts_[idx_[mid]];
        double d = 0;
        for (int i = 0; i < 3; ++i) d += (p[i] - q[i]) * (p[i] - q[i]);
        best = std::min(best, d);
        double diff = q[axis] - p[axis];
        int next = (axis + 1) % 3;
        if (diff < 0) {
            query(q, lo, mid, next, best);
            if (diff * diff < best) query(q, mid + 1, hi, next, best);
        } else {
            query(q, mid + 1, hi, next, best);
            if (diff * diff < best) query(q, lo, mid, next, best);
        }
    }

    std::vector<std::array<double, 3>> pts_;
    std::vector<std::size_t> idx_;
};

inline std::vector<std::array<double, 3>> to_physical(const std::vector<SurfacePoint>& surf,
                                                      const std::vector<double>& spacing) {
    // spacing aligned with dims (slowest axis first); rank 2 gets unit z.
    double sz = spacing.size() == 3 ? spacing[0] : 1.0;
    double sy = spacing[spacing.size() - 2];
    double sx = spacing[spacing.size() - 1];
    std::vector<std::array<double, 3>> pts(surf.size());
    for (std::size_t i = 0; i < surf.size(); ++i)
        pts[i] = {double(surf[i][0]) * sz, double(surf[i][1]) * sy, double(surf[i][2]) * sx};
    return pts;
}

// Linear-interpolation percentile over unsorted distances (p in [0, 100]).
inline double percentile(std::vector<double> v, double p) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    double pos = p / 100.0 * double(v.size() - 1);
    std::size_t lo = std::size_t(pos);
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    double frac = pos - double(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace detail

struct HausdorffResult {
    bool defined = true;  // false when exactly one surface is empty
    double hd = 0.0;      // mm
    double hd95 = 0.0;    // mm
};

inline HausdorffResult hausdorff(const std::vector<SurfacePoint>& pred_surf,
                                 const std::vector<SurfacePoint>& ref_surf,
                                 const std::vector<double>& spacing) {
    if (pred_surf.empty() && ref_surf.empty()) return {true, 0.0, 0.0};
    if (pred_surf.empty() || ref_surf.empty()) return {false, 0.0, 0.0};
    auto pa = detail::to_physical(pred_surf, spacing);
    auto pb = detail::to_physical(ref_surf, spacing);
    detail::KdTree ta(pa), tb(pb);
    std::vector<double> d_ab(pa.size()), d_ba(pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) d_ab[i] = std::sqrt(tb.nearest_sq(pa[i]));
    for (std::size_t i = 0; i < pb.size(); ++i) d_ba[i] = std::sqrt(ta.nearest_sq(pb[i]));
    double hd = std::max(*std::max_element(d_ab.begin(), d_ab.end()),
                         *std::max_element(d_ba.begin(), d_ba.end()));
    double hd95 = std::max(detail::percentile(d_ab, 95.0), detail::percentile(d_ba, 95.0));
    return {true, hd, hd95};
}

struct NsdResult {
    bool defined = true;
    double nsd = 0.0;
};

inline NsdResult nsd(const std::vector<SurfacePoint>& pred_surf,
                     const std::vector<SurfacePoint>& ref_surf,
                     const std::vector<double>& spacing, double tolerance_mm) {
    if (!(tolerance_mm > 0)) throw ConfigError("nsd: tolerance must be > 0");
    if (pred_surf.empty() && ref_surf.empty()) return {true, 1.0};
    if (pred_surf.empty() || ref_surf.empty()) return {false, 0.0};
    auto pa = detail::to_physical(pred_surf, spacing);
    auto pb = detail::to_physical(ref_surf, spacing);
    detail::KdTree ta(pa), tb(pb);
    double tol_sq = tolerance_mm * tolerance_mm;
    std::size_t hit = 0;
    for (const auto& p : pa) hit += tb.nearest_sq(p) <= tol_sq;
    for (const auto& p : pb) hit += ta.nearest_sq(p) <= tol_sq;
    return {true, double(hit) / double(pa.size() + pb.size())};
}

struct ClassMetrics {
    double dsc = 0.0, iou = 0.0, nsd = 0.0, hd = 0.0, hd95 = 0.0;
    bool surface_defined = true;  // false => hd/hd95/nsd recorded as worst case
};

struct MetricsReport {
    std::map<int, ClassMetrics> per_class;  // foreground classes
    double mean_dsc = 0.0, mean_iou = 0.0, mean_nsd = 0.0, mean_hd = 0.0, mean_hd95 = 0.0;
    double nsd_tolerance_mm = 1.0;
    std::string connectivity = "face";
};

// One prediction/reference pair over all foreground classes. When exactly one
// surface is empty the distance metrics are undefined; they are recorded as
// worst case (physical diagonal for HD, 0 for NSD) with surface_defined=false.
inline MetricsReport evaluate_pair(const LabelMap& pred, const LabelMap& ref,
                                   double nsd_tolerance_mm = 1.0) {
    if (pred.dims != ref.dims)
        throw DimensionError("evaluate_pair: prediction and reference shapes differ");
    MetricsReport rep;
    rep.nsd_tolerance_mm = nsd_tolerance_mm;
    const auto& spacing = ref.spacing;
    double diag_sq = 0.0;
    for (std::size_t i = 0; i < ref.dims.size(); ++i) {
        double ext = double(ref.dims[i]) * (i < spacing.size() ? spacing[i] : 1.0);
        diag_sq += ext * ext;
    }
    double worst_hd = std::sqrt(diag_sq);
    int classes = std::max(pred.num_classes, ref.num_classes);
    for (int cls = 1; cls < classes; ++cls) {
        ClassMetrics cm;
        auto ov = dsc_iou(pred, ref, cls);
        cm.dsc = ov.dsc;
        cm.iou = ov.iou;
        auto sp = surface_extract(pred, cls);
        auto sr = surface_extract(ref, cls);
        auto hd = hausdorff(sp, sr, spacing);
        auto ns = nsd(sp, sr, spacing, nsd_tolerance_mm);
        cm.surface_defined = hd.defined && ns.defined;
        cm.hd = hd.defined ? hd.hd : worst_hd;
        cm.hd95 = hd.defined ? hd.hd95 : worst_hd;
        cm.nsd = ns.defined ? ns.nsd : 0.0;
        rep.per_class[cls] = cm;
    }
    if (!rep.per_class.empty()) {
        for (const auto& [cls, cm] : rep.per_class) {
            rep.mean_dsc += cm.dsc;
            rep.mean_iou += cm.iou;
            rep.mean_nsd += cm.nsd;
            rep.mean_hd += cm.hd;
            rep.mean_hd95 += cm.hd95;
        }
        double n = double(rep.per_class.size());
        rep.mean_dsc /= n;
        rep.mean_iou /= n;
        rep.mean_nsd /= n;
        rep.mean_hd /= n;
        rep.mean_hd95 /= n;
    }
    return rep;
}

}  // namespace vilu
