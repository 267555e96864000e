#include <gtest/gtest.h>

#include <random>

#include "testutil.hpp"
#include "vilu/tensor.hpp"

using vilu::Tensor;
using vilutest::gradcheck;
using vilutest::randn;

using D = Tensor<double>;

TEST(Matmul, IdentityTimesMatrix) {
    auto id = D::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto m = D::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    auto r = matmul(id, m);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(r.data()[i], m.data()[i]);
}

TEST(Matmul, HandExpandedProduct) {
    // [[1,2],[3,4]] x [[1],[1]] = [[3],[7]], each entry a hand-expanded dot.
    auto a = D::from_data({2, 2}, {1, 2, 3, 4});
    auto b = D::from_data({2, 1}, {1, 1});
    auto r = matmul(a, b);
    EXPECT_DOUBLE_EQ(r.data()[0], 3.0);
    EXPECT_DOUBLE_EQ(r.data()[1], 7.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    auto a = D::zeros({2, 3});
    auto b = D::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const vilu::DimensionError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("(2,3)"), std::string::npos);
    }
}

TEST(Matmul, GradMatchesFiniteDifferences) {
    std::mt19937 rng(7);
    auto a = randn<double>({3, 4}, rng);
    auto b = randn<double>({4, 2}, rng);
    double err = gradcheck([&] { return sum(matmul(a, b)); }, {&a, &b});
    EXPECT_LT(err, 1e-6);
}

TEST(Pointwise, SigmoidOfZero) {
    auto r = sigmoid(D::scalar(0.0));
    EXPECT_DOUBLE_EQ(r.item(), 0.5);
}

TEST(Pointwise, SoftmaxOfEqualLogits) {
    auto r = softmax(D::filled({5}, 2.0), 0);
    for (auto v : r.data()) EXPECT_NEAR(v, 0.2, 1e-12);
}

TEST(Pointwise, SoftmaxSumsToOneAlongAxis) {
    std::mt19937 rng(3);
    auto x = randn<double>({2, 4, 3}, rng, 5.0);
    auto r = softmax(x, 1);
    for (std::size_t o = 0; o < 2; ++o)
        for (std::size_t i = 0; i < 3; ++i) {
            double s = 0;
            for (std::size_t c = 0; c < 4; ++c) s += r.data()[o * 12 + c * 3 + i];
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
}

TEST(Pointwise, InstanceNormOfConstantChannelIsBeta) {
    auto x = D::filled({1, 2, 3, 3}, 4.2);
    auto gamma = D::filled({2}, 1.0);
    auto beta = D::from_data({2}, {0.5, -0.5});
    auto r = instance_norm(x, gamma, beta, 1e-5);
    for (std::size_t i = 0; i < 9; ++i) {
        EXPECT_NEAR(r.data()[i], 0.5, 1e-9);
        EXPECT_NEAR(r.data()[9 + i], -0.5, 1e-9);
    }
}

TEST(Pointwise, LayerNormMomentsPerSlice) {
    std::mt19937 rng(11);
    auto x = randn<double>({4, 16}, rng, 3.0);
    auto r = layer_norm(x, D::filled({16}, 1.0), D::zeros({16}), 1e-10);
    for (std::size_t s = 0; s < 4; ++s) {
        double mu = 0, var = 0;
        for (std::size_t j = 0; j < 16; ++j) mu += r.data()[s * 16 + j];
        mu /= 16;
        for (std::size_t j = 0; j < 16; ++j) {
            double d = r.data()[s * 16 + j] - mu;
            var += d * d;
        }
        var /= 16;
        EXPECT_NEAR(mu, 0.0, 1e-5);
        EXPECT_NEAR(var, 1.0, 1e-5);
    }
}

TEST(Pointwise, EpsValidation) {
    auto x = D::zeros({2, 4});
    EXPECT_THROW(layer_norm(x, D::filled({4}, 1.0), D::zeros({4}), 0.0), vilu::ConfigError);
    EXPECT_THROW(instance_norm(D::zeros({1, 1, 2, 2}), D::filled({1}, 1.0), D::zeros({1}), -1.0),
                 vilu::ConfigError);
}

TEST(Pointwise, BroadcastTrailingSuffix) {
    auto a = D::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto bias = D::from_data({3}, {10, 20, 30});
    auto r = add(a, bias);
    EXPECT_DOUBLE_EQ(r.data()[0], 11.0);
    EXPECT_DOUBLE_EQ(r.data()[5], 36.0);
    EXPECT_THROW(add(a, D::zeros({2})), vilu::DimensionError);
}

TEST(Backward, SumGivesOnes) {
    auto x = D::from_data({4}, {1, 2, 3, 4});
    x.set_requires_grad(true);
    backward(sum(x));
    for (auto g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresAtThree) {
    auto x = D::scalar(3.0);
    x.set_requires_grad(true);
    backward(sum(mul(x, x)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarLossRejected) {
    auto x = D::zeros({3});
    EXPECT_THROW(backward(x), vilu::Error);
}

TEST(Backward, AccumulatesAcrossCalls) {
    auto x = D::scalar(2.0);
    x.set_requires_grad(true);
    backward(sum(x));
    backward(sum(x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    x.zero_grad();
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Gradcheck, PointwiseSuite) {
    std::mt19937 rng(23);
    auto x = randn<double>({3, 5}, rng);
    auto y = randn<double>({3, 5}, rng);
    struct Case {
        const char* name;
        std::function<Tensor<double>()> f;
    };
    std::vector<Case> cases = {
        {"add", [&] { return sum(add(x, y)); }},
        {"sub", [&] { return sum(sub(x, y)); }},
        {"mul", [&] { return sum(mul(x, y)); }},
        {"sigmoid", [&] { return sum(mul(y, sigmoid(x))); }},
        {"exp", [&] { return sum(mul(y, vilu::exp(x))); }},
        {"silu", [&] { return sum(mul(y, silu(x))); }},
        {"leaky_relu", [&] { return sum(mul(y, leaky_relu(x, 0.01))); }},
        {"softmax", [&] { return sum(mul(y, softmax(x, 1))); }},
        {"flip", [&] { return sum(mul(y, flip_axis0(x))); }},
        {"reshape", [&] { return sum(mul(y, reshape(reshape(x, {15}), {3, 5}))); }},
        {"scale", [&] { return sum(scale(mul(x, y), 1.7)); }},
    };
    for (auto& c : cases) {
        double err = gradcheck(c.f, {&x, &y});
        EXPECT_LT(err, 1e-4) << c.name;
    }
}

TEST(Gradcheck, NormsAndLinear) {
    std::mt19937 rng(29);
    auto x = randn<double>({2, 8}, rng);
    auto g = randn<double>({8}, rng, 0.5);
    auto b = randn<double>({8}, rng, 0.5);
    auto w = randn<double>({3, 8}, rng);
    auto bias = randn<double>({3}, rng);
    double err = gradcheck(
        [&] { return mean(mul(layer_norm(x, g, b, 1e-5), layer_norm(x, g, b, 1e-5))); },
        {&x, &g, &b});
    EXPECT_LT(err, 1e-4) << "layer_norm";

    auto xi = randn<double>({2, 3, 4, 4}, rng);
    auto gi = randn<double>({3}, rng, 0.5);
    auto bi = randn<double>({3}, rng, 0.5);
    err = gradcheck([&] { return mean(mul(instance_norm(xi, gi, bi, 1e-4),
                                          instance_norm(xi, gi, bi, 1e-4))); },
                    {&xi, &gi, &bi});
    EXPECT_LT(err, 1e-4) << "instance_norm";

    err = gradcheck([&] { return mean(mul(linear(x, w, bias), linear(x, w, bias))); },
                    {&x, &w, &bias});
    EXPECT_LT(err, 1e-4) << "linear";
}

TEST(Gradcheck, ClampAbsMax) {
    std::mt19937 rng(31);
    // Keep values away from the kinks so central differences are valid.
    auto x = randn<double>({20}, rng);
    auto y = randn<double>({20}, rng);
    for (auto& v : x.mutable_data())
        if (std::abs(v) < 0.1) v += 0.5;
    for (std::size_t i = 0; i < 20; ++i)
        if (std::abs(x.data()[i] - y.data()[i]) < 0.1) y.mutable_data()[i] += 0.5;
    double err = gradcheck([&] { return sum(mul(y, vilu::abs(x))); }, {&x});
    EXPECT_LT(err, 1e-4) << "abs";
    err = gradcheck([&] { return sum(mul(y, clamp_min(x, 0.0))); }, {&x});
    EXPECT_LT(err, 1e-4) << "clamp_min";
    err = gradcheck([&] { return sum(max_elem(x, y)); }, {&x, &y});
    EXPECT_LT(err, 1e-4) << "max_elem";
}

TEST(Determinism, SameInputsSameBits) {
    std::mt19937 rng(5);
    auto x = randn<double>({4, 4}, rng);
    auto w = randn<double>({4, 4}, rng);
    auto r1 = matmul(softmax(x, 1), w);
    auto r2 = matmul(softmax(x, 1), w);
    for (std::size_t i = 0; i < r1.size(); ++i) EXPECT_EQ(r1.data()[i], r2.data()[i]);
}
