// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/cloud.hpp"

#include "gstrack/raster.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

namespace gstrack {
namespace {

Quaternion random_quaternion(std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return Quaternion{n(rng), n(rng), n(rng), n(rng)}.normalized();
}

/// Fronto-parallel plane at depth z; depth += slope·x when slope is set.
FrameObservation plane_frame(int h, int w, double z, double slope = 0.0) {
    FrameObservation f = make_empty_frame(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            f.mask(y, x) = 1;
            f.depth(y, x) = z + slope * x;
            f.color(y, x, 0) = x / double(w);
            f.color(y, x, 1) = y / double(h);
            f.color(y, x, 2) = 0.5;
        }
    }
    return f;
}

GaussianCloud random_cloud(std::uint64_t seed, int n) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    GaussianCloud c;
    for (int i = 0; i < n; ++i) {
        c.add({u(rng), u(rng), u(rng)}, {u(rng), u(rng), u(rng)}, random_quaternion(rng), 2.0 * u(rng),
              {0.5 + 0.5 * u(rng), 0.5, 0.5 - 0.5 * u(rng)});
    }
    return c;
}

TEST(Covariance, IsotropicIsRotationInvariant) {
    std::mt19937_64 rng(1);
    GaussianCloud c;
    c.add(Vec3::Zero(), Vec3::Constant(std::log(0.1)), random_quaternion(rng), 0.0, Vec3::Zero());
    EXPECT_LT((covariance_of(c, 0) - 0.01 * Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Covariance, AxisAligned) {
    GaussianCloud c;
    c.add(Vec3::Zero(), {0.0, std::log(2.0), std::log(3.0)}, Quaternion::identity(), 0.0, Vec3::Zero());
    EXPECT_LT((covariance_of(c, 0) - Vec3(1, 4, 9).asDiagonal().toDenseMatrix()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Covariance, EigenvaluesAreSquaredScales) {
    const GaussianCloud c = random_cloud(2, 50);
    for (std::size_t i = 0; i < c.size(); ++i) {
        const Mat3 s = covariance_of(c, i);
        EXPECT_LT((s - s.transpose()).cwiseAbs().maxCoeff(), 1e-15);
        Eigen::SelfAdjointEigenSolver<Mat3> es(s);
        Vec3 expected = c.scale(i).array().square();
        std::sort(expected.data(), expected.data() + 3);
        for (int k = 0; k < 3; ++k) {
            EXPECT_NEAR(es.eigenvalues()[k], expected[k], 1e-9);
        }
    }
}

TEST(InitFromRgbd, SinglePixelOnAxis) {
    CameraIntrinsics intr{100, 100, 8, 8, 16, 16, 0.01, 100};
    FrameObservation f = make_empty_frame(16, 16);
    f.mask(8, 8) = 1;
    f.depth(8, 8) = 2.0;
    f.color(8, 8, 0) = 0.25;
    const GaussianCloud c = init_from_rgbd(f, intr, Pose::identity());
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c.mean(0), Vec3(0, 0, 2));
    EXPECT_NEAR(c.opacity(0), 0.5, 1e-15);
    EXPECT_NEAR(c.scale(0).x() * c.scale(0).x(), 0.001, 1e-15);
    EXPECT_EQ(c.color(0), Vec3(0.25, 0, 0));
    const Quaternion q = c.rotation(0);
    EXPECT_EQ(q.w, 1.0);
}

TEST(InitFromRgbd, EmptyInputsGiveEmptyCloud) {
    CameraIntrinsics intr{100, 100, 8, 8, 16, 16, 0.01, 100};
    EXPECT_TRUE(init_from_rgbd(make_empty_frame(16, 16), intr, Pose::identity()).empty());
    FrameObservation f = plane_frame(16, 16, 2.0);
    f.depth.fill(0.0);
    EXPECT_TRUE(init_from_rgbd(f, intr, Pose::identity()).empty());
}

TEST(InitFromRgbd, PlaneMeansLieOnPlaneInObjectFrame) {
    CameraIntrinsics intr{120, 110, 16, 12, 32, 24, 0.01, 100};
    const FrameObservation f = plane_frame(24, 32, 3.0);
    std::mt19937_64 rng(3);
    const Pose pose{random_quaternion(rng), {0.2, -0.1, 1.0}};
    const GaussianCloud c = init_from_rgbd(f, intr, pose, 2);
    EXPECT_EQ(c.size(), 12u * 16u);
    // Expected plane in object coordinates: n·x = d with n = R^T e_z.
    const Mat3 r = pose.rotation_matrix();
    const Vec3 n = r.transpose() * Vec3::UnitZ();
    const double d = 3.0 - pose.translation.z();
    for (std::size_t i = 0; i < c.size(); ++i) {
        EXPECT_NEAR(n.dot(c.mean(i)), d, 1e-6);
    }
}

TEST(InitFromRgbd, RenderedDepthMatchesObservation) {
    CameraIntrinsics intr{60, 60, 16, 16, 32, 32, 0.01, 100};
    const FrameObservation f = plane_frame(32, 32, 2.0, 0.01);
    const GaussianCloud c = init_from_rgbd(f, intr, Pose::identity());
    const RenderOutput out = render(c, Pose::identity(), intr);
    for (int y = 2; y < 30; ++y) {
        for (int x = 2; x < 30; ++x) {
            ASSERT_GT(out.alpha(y, x), 0.5);
            EXPECT_NEAR(out.depth(y, x) / out.alpha(y, x), f.depth(y, x), 3.0 * std::sqrt(kInitVariance));
        }
    }
}

TEST(Densify, ExplainedFrameAddsNothing) {
    CameraIntrinsics intr{100, 100, 8, 8, 16, 16, 0.01, 100};
    const FrameObservation f = plane_frame(16, 16, 2.0, 0.05);
    GaussianCloud c = random_cloud(5, 3);
    ImageD alpha(16, 16, 1, 1.0);
    EXPECT_EQ(densify(c, f, f.depth, alpha, Pose::identity(), intr), 0u);
    EXPECT_EQ(c.size(), 3u);
    // Partial coverage is normalized away.
    alpha.fill(0.8);
    ImageD depth = f.depth;
    for (auto &v : depth.data()) v *= 0.8;
    EXPECT_EQ(densify(c, f, depth, alpha, Pose::identity(), intr), 0u);
}

TEST(Densify, UncoveredFrameAddsOnePerStridedPixel) {
    CameraIntrinsics intr{100, 100, 8, 8, 16, 16, 0.01, 100};
    const FrameObservation f = plane_frame(16, 16, 2.0);
    GaussianCloud c;
    const ImageD zero(16, 16, 1, 0.0);
    DensifyOptions opts;
    opts.stride = 4;
    EXPECT_EQ(densify(c, f, zero, zero, Pose::identity(), intr, opts), 16u);
    opts.stride = 1;
    GaussianCloud d;
    EXPECT_EQ(densify(d, f, zero, zero, Pose::identity(), intr, opts), 256u);
    c.validate();
}

TEST(Densify, ResidualAtThresholdIsNotAdded) {
    CameraIntrinsics intr{100, 100, 8, 8, 16, 16, 0.01, 100};
    FrameObservation f = plane_frame(16, 16, 2.0);
    for (int y = 0; y < 16; ++y) f.depth(y, 0) = 3.0; // range 1 m, threshold 0.1 m
    const ImageD alpha(16, 16, 1, 1.0);
    DensifyOptions opts;
    opts.stride = 1;
    ImageD depth = f.depth;
    for (int y = 0; y < 16; ++y) {
        for (int x = 8; x < 16; ++x) depth(y, x) = 2.0 + 0.0999999;
    }
    GaussianCloud c;
    EXPECT_EQ(densify(c, f, depth, alpha, Pose::identity(), intr, opts), 0u);
    for (int y = 0; y < 16; ++y) {
        for (int x = 8; x < 16; ++x) depth(y, x) = 2.0 + 0.1000001;
    }
    EXPECT_EQ(densify(c, f, depth, alpha, Pose::identity(), intr, opts), 16u * 8u);
    EXPECT_THROW(densify(c, f, ImageD(8, 8, 1), alpha, Pose::identity(), intr), std::invalid_argument);
}

TEST(Prune, ThresholdStraddle) {
    GaussianCloud c;
    c.add(Vec3::Zero(), Vec3::Zero(), Quaternion::identity(), logit(0.59), Vec3::Zero());
    c.add(Vec3::Ones(), Vec3::Zero(), Quaternion::identity(), logit(0.61), Vec3::Zero());
    EXPECT_EQ(prune(c), 1u);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c.mean(0), Vec3::Ones());
}

TEST(Prune, AllOrNothingAndIdempotent) {
    GaussianCloud hi, lo;
    for (int i = 0; i < 5; ++i) {
        hi.add(Vec3::Constant(i), Vec3::Zero(), Quaternion::identity(), logit(0.9), Vec3::Zero());
        lo.add(Vec3::Constant(i), Vec3::Zero(), Quaternion::identity(), logit(0.1), Vec3::Zero());
    }
    EXPECT_EQ(prune(hi), 0u);
    EXPECT_EQ(prune(lo), 5u);
    EXPECT_TRUE(lo.empty());
    GaussianCloud mixed = random_cloud(8, 200);
    const std::size_t removed = prune(mixed);
    EXPECT_GT(removed, 0u);
    EXPECT_EQ(prune(mixed), 0u);
    mixed.validate();
    for (std::size_t i = 0; i < mixed.size(); ++i) EXPECT_GE(mixed.opacity(i), 0.6);
}

TEST(Prune, PreservesOrder) {
    GaussianCloud c = random_cloud(9, 100);
    std::vector<Vec3> expected;
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (c.opacity(i) >= 0.6) expected.push_back(c.mean(i));
    }
    prune(c);
    EXPECT_EQ(c.means(), expected);
}

TEST(GaussianCloud, ExtentAndValidation) {
    GaussianCloud c;
    EXPECT_EQ(c.extent(), 0.0);
    c.add({0, 0, 0}, Vec3::Zero(), Quaternion::identity(), 0.0, Vec3::Zero());
    c.add({1, 2, 2}, Vec3::Zero(), Quaternion::identity(), 0.0, Vec3::Zero());
    EXPECT_NEAR(c.extent(), 3.0, 1e-15);
    EXPECT_NO_THROW(c.validate());
    c.set_log_scale(0, Vec3(std::nan(""), 0, 0));
    EXPECT_THROW(c.validate(), std::logic_error);
}

TEST(Ply, CloudRoundTripIsExact) {
    const GaussianCloud c = random_cloud(10, 64);
    const auto path = std::filesystem::temp_directory_path() / "gstrack_cloud_roundtrip.ply";
    save_ply(c, path);
    EXPECT_EQ(load_ply(path), c);
    EXPECT_EQ(load_points_ply(path), c.means());
    std::filesystem::remove(path);
}

TEST(Ply, PointsRoundTripAndErrors) {
    const std::vector<Vec3> pts{{1, 2, 3}, {0.1, -0.2, 1e-7}};
    const auto path = std::filesystem::temp_directory_path() / "gstrack_points_roundtrip.ply";
    save_points_ply(pts, path);
    EXPECT_EQ(load_points_ply(path), pts);
    EXPECT_THROW(load_ply(path), std::runtime_error); // missing Gaussian columns
    std::filesystem::remove(path);
    EXPECT_THROW(load_ply(path), std::runtime_error);
}

} // namespace
} // namespace gstrack
