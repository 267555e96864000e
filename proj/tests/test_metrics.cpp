#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "testutil.hpp"
#include "vilu/loss.hpp"
#include "vilu/metrics.hpp"

using vilu::dsc_iou;
using vilu::evaluate_pair;
using vilu::hausdorff;
using vilu::LabelMap;
using vilu::nsd;
using vilu::surface_extract;
using vilu::Tensor;
using vilutest::gradcheck;
using vilutest::randn;

using D = Tensor<double>;

namespace {

LabelMap make_map(std::vector<std::size_t> dims, std::vector<std::uint8_t> data,
                  std::vector<double> spacing = {}, int classes = 2) {
    LabelMap m;
    m.dims = std::move(dims);
    m.data = std::move(data);
    m.spacing = spacing.empty() ? std::vector<double>(m.dims.size(), 1.0) : std::move(spacing);
    m.num_classes = classes;
    return m;
}

// Brute-force all-pairs directed distances in physical mm.
std::vector<double> directed_brute(const std::vector<vilu::SurfacePoint>& a,
                                   const std::vector<vilu::SurfacePoint>& b,
                                   const std::vector<double>& spacing) {
    double sz = spacing.size() == 3 ? spacing[0] : 1.0;
    double sy = spacing[spacing.size() - 2], sx = spacing[spacing.size() - 1];
    std::vector<double> out;
    for (const auto& p : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : b) {
            double dz = (double(p[0]) - double(q[0])) * sz;
            double dy = (double(p[1]) - double(q[1])) * sy;
            double dx = (double(p[2]) - double(q[2])) * sx;
            best = std::min(best, dz * dz + dy * dy + dx * dx);
        }
        out.push_back(std::sqrt(best));
    }
    return out;
}

double percentile_ref(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    double pos = p / 100.0 * double(v.size() - 1);
    std::size_t lo = std::size_t(pos);
    double frac = pos - double(lo);
    return v[lo] * (1 - frac) + v[std::min(lo + 1, v.size() - 1)] * frac;
}

LabelMap random_mask3d(std::mt19937& rng, std::size_t n = 16) {
    std::bernoulli_distribution coin(0.2);
    LabelMap m = make_map({n, n, n}, std::vector<std::uint8_t>(n * n * n, 0), {1.0, 1.0, 1.0});
    for (auto& v : m.data) v = coin(rng) ? 1 : 0;
    return m;
}

}  // namespace

TEST(DscIou, IdenticalNonempty) {
    auto a = make_map({2, 2}, {0, 1, 1, 0});
    auto r = dsc_iou(a, a, 1);
    EXPECT_DOUBLE_EQ(r.dsc, 1.0);
    EXPECT_DOUBLE_EQ(r.iou, 1.0);
}

TEST(DscIou, DisjointNonempty) {
    auto a = make_map({2, 2}, {1, 0, 0, 0});
    auto b = make_map({2, 2}, {0, 0, 0, 1});
    auto r = dsc_iou(a, b, 1);
    EXPECT_DOUBLE_EQ(r.dsc, 0.0);
    EXPECT_DOUBLE_EQ(r.iou, 0.0);
}

TEST(DscIou, TwoVoxelsOverlapOne) {
    // |A| = 2, |B| = 2, overlap 1, counted by exhaustive voxel enumeration:
    // DSC = 2/4, IoU = 1/3.
    auto a = make_map({1, 4}, {1, 1, 0, 0});
    auto b = make_map({1, 4}, {0, 1, 1, 0});
    auto r = dsc_iou(a, b, 1);
    EXPECT_DOUBLE_EQ(r.dsc, 0.5);
    EXPECT_NEAR(r.iou, 1.0 / 3.0, 1e-15);
}

TEST(DscIou, BothEmptyConvention) {
    auto a = make_map({2, 2}, {0, 0, 0, 0});
    auto r = dsc_iou(a, a, 1);
    EXPECT_DOUBLE_EQ(r.dsc, 1.0);
    EXPECT_DOUBLE_EQ(r.iou, 1.0);
}

TEST(DscIou, ShapeMismatch) {
    auto a = make_map({2, 2}, {0, 0, 0, 0});
    auto b = make_map({1, 4}, {0, 0, 0, 0});
    EXPECT_THROW(dsc_iou(a, b, 1), vilu::DimensionError);
}

TEST(DscIou, IdentityAndMonotonicity) {
    std::mt19937 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = random_mask3d(rng, 8);
        auto b = random_mask3d(rng, 8);
        auto r = dsc_iou(a, b, 1);
        auto rs = dsc_iou(b, a, 1);
        EXPECT_DOUBLE_EQ(r.dsc, rs.dsc);
        EXPECT_DOUBLE_EQ(r.iou, rs.iou);
        EXPECT_NEAR(r.dsc, 2.0 * r.iou / (1.0 + r.iou), 1e-12);
        EXPECT_LE(r.iou, r.dsc + 1e-15);
    }
    // Growing overlap of fixed-size masks never decreases DSC/IoU.
    auto a = make_map({1, 8}, {1, 1, 1, 1, 0, 0, 0, 0});
    double prev_dsc = -1, prev_iou = -1;
    for (int shift = 4; shift >= 0; --shift) {
        std::vector<std::uint8_t> bd(8, 0);
        for (int i = 0; i < 4; ++i) bd[i + shift] = 1;
        auto r = dsc_iou(a, make_map({1, 8}, bd), 1);
        EXPECT_GE(r.dsc, prev_dsc);
        EXPECT_GE(r.iou, prev_iou);
        prev_dsc = r.dsc;
        prev_iou = r.iou;
    }
}

TEST(Surface, SingleVoxelIsItsOwnBoundary) {
    auto m = make_map({3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    auto s = surface_extract(m, 1);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0], (vilu::SurfacePoint{0, 1, 1}));
}

TEST(Surface, SolidSquarePerimeter) {
    // Solid 3x3 square inside 5x5: enumeration gives 8 perimeter voxels
    // (the center has no background face neighbor).
    LabelMap m = make_map({5, 5}, std::vector<std::uint8_t>(25, 0));
    for (std::size_t y = 1; y <= 3; ++y)
        for (std::size_t x = 1; x <= 3; ++x) m.data[y * 5 + x] = 1;
    EXPECT_EQ(surface_extract(m, 1).size(), 8u);
}

TEST(Surface, EmptyMask) {
    LabelMap m = make_map({4, 4}, std::vector<std::uint8_t>(16, 0));
    EXPECT_TRUE(surface_extract(m, 1).empty());
}

TEST(Surface, EdgeVoxelsAreBoundary) {
    // Out-of-bounds counts as background, so the rim of a full grid is
    // boundary; the center voxel is not.
    LabelMap m = make_map({3, 3}, std::vector<std::uint8_t>(9, 1));
    EXPECT_EQ(surface_extract(m, 1).size(), 8u);
}

TEST(Hausdorff, IdenticalSurfaces) {
    std::mt19937 rng(2);
    auto m = random_mask3d(rng);
    auto s = surface_extract(m, 1);
    auto r = hausdorff(s, s, m.spacing);
    EXPECT_TRUE(r.defined);
    EXPECT_DOUBLE_EQ(r.hd, 0.0);
    EXPECT_DOUBLE_EQ(r.hd95, 0.0);
}

TEST(Hausdorff, SinglePairDistance) {
    std::vector<vilu::SurfacePoint> a = {{0, 0, 0}}, b = {{0, 3, 4}};
    auto r = hausdorff(a, b, {1.0, 1.0});
    EXPECT_DOUBLE_EQ(r.hd, 5.0);
    EXPECT_DOUBLE_EQ(r.hd95, 5.0);
}

TEST(Hausdorff, AnisotropicSpacing) {
    std::vector<vilu::SurfacePoint> a = {{0, 0, 0}}, b = {{0, 0, 1}};
    auto r = hausdorff(a, b, {1.0, 2.0});
    EXPECT_DOUBLE_EQ(r.hd, 2.0);
    EXPECT_DOUBLE_EQ(r.hd95, 2.0);
}

TEST(Hausdorff, OneEmptySurfaceUndefined) {
    std::vector<vilu::SurfacePoint> a = {{0, 0, 0}}, empty;
    EXPECT_FALSE(hausdorff(a, empty, {1.0, 1.0}).defined);
    EXPECT_FALSE(hausdorff(empty, a, {1.0, 1.0}).defined);
    EXPECT_TRUE(hausdorff(empty, empty, {1.0, 1.0}).defined);
}

TEST(Hausdorff, MatchesBruteForceOracle) {
    std::mt19937 rng(3);
    std::vector<double> spacing = {1.5, 1.0, 0.7};
    for (int trial = 0; trial < 25; ++trial) {
        auto ma = random_mask3d(rng);
        auto mb = random_mask3d(rng);
        ma.spacing = mb.spacing = spacing;
        auto sa = surface_extract(ma, 1);
        auto sb = surface_extract(mb, 1);
        if (sa.empty() || sb.empty()) continue;
        auto r = hausdorff(sa, sb, spacing);
        auto dab = directed_brute(sa, sb, spacing);
        auto dba = directed_brute(sb, sa, spacing);
        double hd_ref = std::max(*std::max_element(dab.begin(), dab.end()),
                                 *std::max_element(dba.begin(), dba.end()));
        double hd95_ref = std::max(percentile_ref(dab, 95.0), percentile_ref(dba, 95.0));
        EXPECT_NEAR(r.hd, hd_ref, 1e-9);
        EXPECT_NEAR(r.hd95, hd95_ref, 1e-9);
        EXPECT_LE(r.hd95, r.hd + 1e-12);
        // symmetry
        auto rs = hausdorff(sb, sa, spacing);
        EXPECT_DOUBLE_EQ(r.hd, rs.hd);
    }
}

TEST(Nsd, IdenticalSurfaces) {
    std::mt19937 rng(4);
    auto m = random_mask3d(rng);
    auto s = surface_extract(m, 1);
    auto r = nsd(s, s, m.spacing, 1.0);
    EXPECT_DOUBLE_EQ(r.nsd, 1.0);
}

TEST(Nsd, FarApartIsZero) {
    std::vector<vilu::SurfacePoint> a = {{0, 0, 0}}, b = {{0, 0, 50}};
    EXPECT_DOUBLE_EQ(nsd(a, b, {1.0, 1.0}, 1.0).nsd, 0.0);
}

TEST(Nsd, ToleranceValidationAndEmpty) {
    std::vector<vilu::SurfacePoint> a = {{0, 0, 0}}, empty;
    EXPECT_THROW(nsd(a, a, {1.0, 1.0}, 0.0), vilu::ConfigError);
    EXPECT_FALSE(nsd(a, empty, {1.0, 1.0}, 1.0).defined);
    EXPECT_DOUBLE_EQ(nsd(empty, empty, {1.0, 1.0}, 1.0).nsd, 1.0);
}

TEST(Nsd, MatchesBruteForceOracle) {
    std::mt19937 rng(5);
    std::vector<double> spacing = {1.0, 2.0, 0.5};
    for (int trial = 0; trial < 25; ++trial) {
        auto ma = random_mask3d(rng);
        auto mb = random_mask3d(rng);
        auto sa = surface_extract(ma, 1);
        auto sb = surface_extract(mb, 1);
        if (sa.empty() || sb.empty()) continue;
        double tau = 1.5;
        auto r = nsd(sa, sb, spacing, tau);
        auto dab = directed_brute(sa, sb, spacing);
        auto dba = directed_brute(sb, sa, spacing);
        std::size_t hit = 0;
        for (double d : dab) hit += d <= tau;
        for (double d : dba) hit += d <= tau;
        double ref = double(hit) / double(dab.size() + dba.size());
        EXPECT_DOUBLE_EQ(r.nsd, ref);
        EXPECT_DOUBLE_EQ(nsd(sb, sa, spacing, tau).nsd, r.nsd);
    }
}

TEST(Report, EvaluatePairAggregates) {
    auto pred = make_map({4, 4}, {0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 2, 2}, {}, 3);
    auto ref = pred;
    auto rep = evaluate_pair(pred, ref, 1.0);
    ASSERT_EQ(rep.per_class.size(), 2u);
    EXPECT_DOUBLE_EQ(rep.mean_dsc, 1.0);
    EXPECT_DOUBLE_EQ(rep.mean_hd, 0.0);
    EXPECT_DOUBLE_EQ(rep.mean_nsd, 1.0);
}

TEST(Loss, StrongCorrectLogitsVanish) {
    // margin >= 20 in favor of the true class everywhere
    std::vector<int> target = {0, 1, 1, 0};
    std::vector<double> lg(2 * 4, 0.0);
    for (std::size_t i = 0; i < 4; ++i) lg[target[i] * 4 + i] = 20.0;
    auto logits = D::from_data({1, 2, 4}, lg);
    EXPECT_LT(combined_loss(logits, target).item(), 1e-4);
}

TEST(Loss, UniformLogitsBinaryCrossEntropyIsLn2) {
    std::vector<int> target = {0, 1, 0, 1};
    auto logits = D::zeros({1, 2, 4});
    EXPECT_NEAR(cross_entropy(logits, target).item(), std::log(2.0), 1e-12);
}

TEST(Loss, OutOfRangeLabelNamed) {
    std::vector<int> target = {0, 3, 0, 0};
    try {
        cross_entropy(D::zeros({1, 2, 4}), target);
        FAIL() << "expected LabelError";
    } catch (const vilu::LabelError& e) {
        EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
    }
}

TEST(Loss, NonNegativeLowerBound) {
    std::mt19937 rng(6);
    std::uniform_int_distribution<int> cls(0, 2);
    for (int trial = 0; trial < 10; ++trial) {
        auto logits = randn<double>({2, 3, 8}, rng, 3.0);
        std::vector<int> target(16);
        for (auto& t : target) t = cls(rng);
        EXPECT_GE(combined_loss(logits, target).item(), 0.0);
    }
}

TEST(Loss, GradMatchesFiniteDifferences) {
    std::mt19937 rng(7);
    auto logits = randn<double>({1, 3, 4, 4}, rng);
    std::uniform_int_distribution<int> cls(0, 2);
    std::vector<int> target(16);
    for (auto& t : target) t = cls(rng);
    double err = gradcheck([&] { return combined_loss(logits, target); }, {&logits});
    EXPECT_LT(err, 1e-4);
}
