// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/synthgen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace gstrack {
namespace {

namespace fs = std::filesystem;

constexpr double kDeg = std::numbers::pi / 180.0;

TEST(Spiral, PositionsOnSphere) {
    const auto traj = make_spiral_trajectory({16.0, 3.0, 100});
    ASSERT_EQ(traj.size(), 100u);
    for (const Pose &p : traj) {
        EXPECT_NEAR(camera_center(p).norm(), 16.0, 1e-9);
    }
}

TEST(Spiral, BoresightThroughOrigin) {
    const auto traj = make_spiral_trajectory({16.0, 3.0, 100});
    for (const Pose &p : traj) {
        const Vec3 boresight = p.rotation_matrix().transpose() * Vec3::UnitZ();
        const Vec3 c = camera_center(p);
        EXPECT_LT((boresight + c.normalized()).norm(), 1e-9);
        // The origin projects to the principal point.
        EXPECT_LT(std::hypot(p.translation.x(), p.translation.y()), 1e-9);
    }
}

TEST(Spiral, PolarSweepAndAzimuth) {
    const auto traj = make_spiral_trajectory({10.0, 2.0, 50});
    const Vec3 first = camera_center(traj.front()), last = camera_center(traj.back());
    EXPECT_NEAR(std::acos(first.z() / 10.0), std::numbers::pi * 0.5 / 50, 1e-9);
    EXPECT_NEAR(std::acos(last.z() / 10.0), std::numbers::pi * 49.5 / 50, 1e-9);
    // Whole turns put the last azimuth back at zero.
    EXPECT_NEAR(std::atan2(last.y(), last.x()), 0.0, 1e-9);
    EXPECT_GT(last.x(), 0.0);
}

TEST(Spiral, RollIsParallelTransported) {
    // Each step is the minimal rotation between consecutive view directions,
    // so the relative rotation angle equals the angle between them.
    const auto traj = make_spiral_trajectory({16.0, 3.0, 100});
    for (std::size_t i = 1; i < traj.size(); ++i) {
        const Vec3 a = camera_center(traj[i - 1]).normalized(), b = camera_center(traj[i]).normalized();
        const double view_angle = std::acos(std::clamp(a.dot(b), -1.0, 1.0));
        EXPECT_NEAR(rotation_distance(traj[i - 1].rotation, traj[i].rotation), view_angle, 1e-7);
    }
}

TEST(Spiral, DenseSpiralStepsStaySmall) {
    const auto traj = make_spiral_trajectory({16.0, 3.0, 400});
    double worst = 0.0;
    for (std::size_t i = 1; i < traj.size(); ++i) {
        worst = std::max(worst, rotation_distance(traj[i - 1].rotation, traj[i].rotation));
    }
    EXPECT_LT(worst, 5.0 * kDeg);
}

TEST(Spiral, ConstantVelocityPredictionIsClose) {
    const auto traj = make_spiral_trajectory({16.0, 3.0, 100});
    for (std::size_t i = 2; i < traj.size(); ++i) {
        const Pose e = extrapolate_pose(traj[i - 2], traj[i - 1]);
        EXPECT_LT(rotation_distance(e.rotation, traj[i].rotation), 1.5 * kDeg) << i;
        EXPECT_LT((e.translation - traj[i].translation).norm(), 1e-9);
    }
}

TEST(Spiral, RejectsBadSpecs) {
    EXPECT_THROW(make_spiral_trajectory({16.0, 3.0, 1}), std::invalid_argument);
    EXPECT_THROW(make_spiral_trajectory({0.0, 3.0, 10}), std::invalid_argument);
}

TEST(ToyObject, UnitCubeSurfelCount) {
    const ToyObject cube = make_toy_object(ToyKind::UnitCube, 0.05, 1);
    const double expected = 6.0 * (1.0 / 0.05) * (1.0 / 0.05);
    EXPECT_NEAR(static_cast<double>(cube.cloud.size()), expected, 0.1 * expected);
    for (std::size_t i = 0; i < cube.cloud.size(); ++i) {
        const Vec3 m = cube.cloud.mean(i);
        EXPECT_NEAR(m.cwiseAbs().maxCoeff(), 0.5, 1e-9);
        EXPECT_NEAR(cube.cloud.opacity(i), kSurfelOpacity, 1e-12);
        EXPECT_NEAR(std::exp(cube.cloud.log_scale(i).x()), 0.025, 1e-12);
    }
    for (const Vec3 &p : cube.surface_points) {
        EXPECT_NEAR(p.cwiseAbs().maxCoeff(), 0.5, 1e-9);
    }
    EXPECT_NEAR(cube.extent, std::sqrt(3.0), 0.05);
}

TEST(ToyObject, SurfaceSamplesAreDense) {
    // Every surfel has a surface sample within spacing/2.
    const double spacing = 0.1;
    const ToyObject obj = make_toy_object(ToyKind::CuboidSat, spacing, 2);
    for (std::size_t i = 0; i < obj.cloud.size(); i += 7) {
        double best = 1e9;
        for (const Vec3 &p : obj.surface_points) best = std::min(best, (p - obj.cloud.mean(i)).norm());
        EXPECT_LE(best, 0.5 * spacing);
    }
}

TEST(ToyObject, SeedChangesTextureOnly) {
    for (ToyKind kind : {ToyKind::CuboidSat, ToyKind::TwoPanelSat, ToyKind::TexturedSphere}) {
        const ToyObject a = make_toy_object(kind, 0.1, 1), b = make_toy_object(kind, 0.1, 2);
        ASSERT_EQ(a.cloud.size(), b.cloud.size());
        bool color_differs = false;
        for (std::size_t i = 0; i < a.cloud.size(); ++i) {
            ASSERT_EQ(a.cloud.mean(i), b.cloud.mean(i));
            color_differs |= a.cloud.color(i) != b.cloud.color(i);
        }
        EXPECT_TRUE(color_differs) << toy_kind_name(kind);
        EXPECT_EQ(a.surface_points, b.surface_points);
    }
}

TEST(ToyObject, SphereSurfelsOnSurface) {
    const ToyObject s = make_toy_object(ToyKind::TexturedSphere, 0.1, 0);
    for (std::size_t i = 0; i < s.cloud.size(); ++i) {
        EXPECT_NEAR(s.cloud.mean(i).norm(), 1.5, 1e-9);
    }
}

TEST(ToyObject, KindNames) {
    for (ToyKind k : {ToyKind::CuboidSat, ToyKind::TwoPanelSat, ToyKind::TexturedSphere, ToyKind::UnitCube}) {
        EXPECT_EQ(parse_toy_kind(toy_kind_name(k)), k);
    }
    EXPECT_THROW(parse_toy_kind("teapot"), std::invalid_argument);
}

TEST(ToyObject, SilhouetteCoversQuarterOfWidth) {
    const ToyObject obj = make_toy_object(ToyKind::CuboidSat, 0.08, 0);
    const auto traj = make_spiral_trajectory({16.0, 3.0, 100});
    const CameraIntrinsics intr;
    for (std::size_t i = 0; i < traj.size(); i += 11) {
        const FrameObservation f = render_observation(obj.cloud, traj[i], intr, {}, static_cast<int>(i));
        int x0 = intr.width, x1 = -1;
        for (int y = 0; y < intr.height; ++y) {
            for (int x = 0; x < intr.width; ++x) {
                if (f.mask(y, x)) {
                    x0 = std::min(x0, x);
                    x1 = std::max(x1, x);
                }
            }
        }
        EXPECT_GE(x1 - x0 + 1, intr.width / 4) << "frame " << i;
    }
}

class GenerateSequence : public ::testing::Test {
  protected:
    static fs::path dir(const std::string &name) {
        const fs::path p = fs::temp_directory_path() / ("gstrack_synth_" + name);
        fs::remove_all(p);
        return p;
    }
};

TEST_F(GenerateSequence, WritesLoadableSequence) {
    const ToyObject obj = make_toy_object(ToyKind::CuboidSat, 0.1, 0);
    const auto traj = make_spiral_trajectory({16.0, 3.0, 6});
    const CameraIntrinsics intr;
    const fs::path out = dir("a");
    const SequenceMeta meta = generate_sequence(obj, traj, intr, out);
    EXPECT_EQ(meta.frame_count, 6);
    SequenceMeta loaded_meta;
    const auto frames = load_sequence(out, &loaded_meta);
    EXPECT_EQ(loaded_meta, meta);
    ASSERT_EQ(frames.size(), 6u);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        ASSERT_TRUE(frames[i].gt_pose);
        EXPECT_EQ(*frames[i].gt_pose, traj[i]);
        int masked = 0;
        for (auto v : frames[i].mask.data()) masked += v;
        EXPECT_GT(masked, 0);
    }
    EXPECT_EQ(load_points_ply(out / "gt_points.ply"), obj.surface_points);

    // Nearest observed depth matches the nearest surfel within 2%.
    double nearest_obs = 1e9;
    for (int y = 0; y < intr.height; ++y) {
        for (int x = 0; x < intr.width; ++x) {
            if (frames[0].valid(y, x)) nearest_obs = std::min(nearest_obs, frames[0].depth(y, x));
        }
    }
    double nearest_surfel = 1e9;
    for (std::size_t i = 0; i < obj.cloud.size(); ++i) {
        nearest_surfel = std::min(nearest_surfel, transform_to_camera(traj[0], obj.cloud.mean(i)).z());
    }
    EXPECT_NEAR(nearest_obs, nearest_surfel, 0.02 * nearest_surfel);
    // Frame 0 looks down on the 2 m tall body from just off the pole.
    EXPECT_NEAR(nearest_obs, 16.0 - 1.0, 0.02 * 15.0);
}

TEST_F(GenerateSequence, RegenerationIsByteIdentical) {
    const ToyObject obj = make_toy_object(ToyKind::TwoPanelSat, 0.12, 3);
    const auto traj = make_spiral_trajectory({16.0, 1.0, 3});
    GenerateOptions opts;
    opts.noise = NoiseSpec{0.2, 0.025, 2, 5};
    const fs::path a = dir("b1"), b = dir("b2");
    generate_sequence(obj, traj, CameraIntrinsics{}, a, opts);
    generate_sequence(obj, traj, CameraIntrinsics{}, b, opts);
    for (const auto &entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a);
        EXPECT_EQ(read_text_file(entry.path()), read_text_file(b / rel)) << rel;
    }
}

} // namespace
} // namespace gstrack
