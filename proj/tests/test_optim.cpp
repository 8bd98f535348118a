// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/log.hpp"
#include "gstrack/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

namespace gstrack {
namespace {

TEST(Adam, FirstStepIsSignedLearningRate) {
    AdamState s(3, 0.1);
    std::vector<double> x{1.0, -2.0, 0.5};
    const std::vector<double> g{3.0, -0.01, 1e-3};
    ASSERT_TRUE(adam_step(s, x, g));
    EXPECT_NEAR(x[0], 0.9, 1e-7);
    EXPECT_NEAR(x[1], -1.9, 1e-6);
    EXPECT_NEAR(x[2], 0.4, 1e-4);
    EXPECT_EQ(s.step, 1);
}

TEST(Adam, ZeroGradientIsNoOp) {
    AdamState s(4, 0.5);
    std::vector<double> x{1.0, 2.0, 3.0, 4.0};
    const auto before = x;
    const std::vector<double> g(4, 0.0);
    for (int i = 0; i < 100; ++i) adam_step(s, x, g);
    EXPECT_EQ(x, before);
}

TEST(Adam, MinimizesQuadratic) {
    AdamState s(1, 0.1);
    std::vector<double> x{1.0};
    for (int i = 0; i < 200; ++i) {
        const std::vector<double> g{2.0 * x[0]};
        adam_step(s, x, g);
    }
    EXPECT_LT(std::abs(x[0]), 1e-2);
}

TEST(Adam, MatchesReferenceUpdate) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    AdamState s(1, 0.01);
    std::vector<double> x{0.3};
    double m = 0, v = 0, ref = 0.3;
    for (int t = 1; t <= 50; ++t) {
        const double g = n(rng);
        adam_step(s, x, std::vector<double>{g});
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        ref -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    EXPECT_NEAR(x[0], ref, 1e-15);
}

TEST(Adam, NonFiniteGradientSkipsAndWarns) {
    std::vector<std::string> warnings;
    auto old = set_warning_sink([&](const std::string &m) { warnings.push_back(m); });
    AdamState s(2, 0.1);
    std::vector<double> x{1.0, 1.0};
    EXPECT_FALSE(adam_step(s, x, std::vector<double>{1.0, std::numeric_limits<double>::quiet_NaN()}, "means"));
    EXPECT_FALSE(adam_step(s, x, std::vector<double>{std::numeric_limits<double>::infinity(), 1.0}, "means"));
    set_warning_sink(old);
    EXPECT_EQ(x, (std::vector<double>{1.0, 1.0}));
    EXPECT_EQ(s.step, 2);
    EXPECT_EQ(s.m, (std::vector<double>{0.0, 0.0}));
    ASSERT_EQ(warnings.size(), 2u);
    EXPECT_NE(warnings[0].find("means"), std::string::npos);
}

TEST(Adam, SizeMismatchThrows) {
    AdamState s(2, 0.1);
    std::vector<double> x{1.0, 2.0, 3.0};
    EXPECT_THROW(adam_step(s, x, std::vector<double>{1, 2, 3}), std::invalid_argument);
}

TEST(Adam, SaveRestoreIsBitExact) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n;
    AdamState s(64, 0.0123456789);
    std::vector<double> x(64);
    for (auto &v : x) v = n(rng);
    for (int i = 0; i < 7; ++i) {
        std::vector<double> g(64);
        for (auto &v : g) v = n(rng) * 1e-3;
        adam_step(s, x, g);
    }
    const AdamState back = load_adam_state(save_adam_state(s));
    EXPECT_EQ(back, s);
    // Continuing from the restored state matches the original exactly.
    std::vector<double> x2 = x;
    AdamState s2 = back;
    const std::vector<double> g(64, 0.37);
    adam_step(s, x, g);
    adam_step(s2, x2, g);
    EXPECT_EQ(x, x2);
}

TEST(PoseParams, Normalization) {
    PoseVector v;
    v << 1, 2, 3, 2, 0, 0, 0;
    const PoseVector n = normalize_pose_params(v);
    EXPECT_EQ(n.head<3>(), v.head<3>());
    EXPECT_EQ(n.tail<4>(), Eigen::Vector4d(1, 0, 0, 0));

    std::mt19937_64 rng(9);
    std::normal_distribution<double> g;
    for (int i = 0; i < 100; ++i) {
        for (int k = 0; k < 7; ++k) v[k] = g(rng);
        const PoseVector once = normalize_pose_params(v);
        EXPECT_NEAR(once.tail<4>().norm(), 1.0, 1e-12);
        EXPECT_LT((normalize_pose_params(once) - once).norm(), 1e-12);
    }
    v.tail<4>().setZero();
    EXPECT_THROW(normalize_pose_params(v), std::invalid_argument);
}

TEST(PoseOptimizer, KeepsQuaternionUnit) {
    PoseOptimizer opt(LearningRates{}, 2.0);
    PoseVector p = pose_to_vector(Pose::identity());
    std::mt19937_64 rng(10);
    std::normal_distribution<double> g;
    for (int i = 0; i < 200; ++i) {
        PoseVector grad;
        for (int k = 0; k < 7; ++k) grad[k] = g(rng);
        EXPECT_TRUE(opt.step(p, grad));
        EXPECT_NEAR(p.tail<4>().norm(), 1.0, 1e-9);
    }
    EXPECT_DOUBLE_EQ(opt.translation().lr, 2e-3);
}

TEST(CloudOptimizer, GroupRatesAndShapes) {
    GaussianCloud c;
    c.add({0, 0, 0}, {0, 0, 0}, Quaternion::identity(), 0.0, {0.5, 0.5, 0.5});
    c.add({1, 0, 0}, {0, 0, 0}, Quaternion::identity(), 0.0, {0.5, 0.5, 0.5});
    CloudOptimizer opt(c, LearningRates{}, 10.0);
    EXPECT_DOUBLE_EQ(opt.group(ParamGroup::Means).lr, 1.6e-2);
    EXPECT_EQ(opt.group(ParamGroup::Rotations).size(), 8u);
    CloudGradients g(c.size());
    g.opacity_logits[1] = 1.0;
    EXPECT_EQ(opt.step(c, g), 0);
    EXPECT_NEAR(c.opacity_logit(1), -5e-2, 1e-9);
    EXPECT_EQ(c.opacity_logit(0), 0.0);
}

} // namespace
} // namespace gstrack
