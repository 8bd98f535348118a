// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/parallel.hpp"
#include "gstrack/raster.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace gstrack {
namespace {

struct Scene {
    GaussianCloud cloud;
    Pose pose;
    CameraIntrinsics intr;
};

Scene random_scene(std::uint64_t seed, int n, int width, int height, double spread = 0.8) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0), unit(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    Scene s;
    s.intr = CameraIntrinsics{1.25 * width, 1.25 * width, width / 2.0, height / 2.0, width, height, 0.01, 100.0};
    s.pose.rotation = Quaternion::from_axis_angle({g(rng), g(rng), g(rng)}, 0.5 * u(rng));
    s.pose.translation = {0.1 * u(rng), 0.1 * u(rng), 3.0};
    for (int i = 0; i < n; ++i) {
        s.cloud.add({spread * u(rng), spread * u(rng), spread * u(rng)},
                    {std::log(0.05 + 0.2 * unit(rng)), std::log(0.05 + 0.2 * unit(rng)), std::log(0.05 + 0.2 * unit(rng))},
                    Quaternion{g(rng), g(rng), g(rng), g(rng)}.normalized(), -1.0 + 2.5 * unit(rng),
                    {0.1 + 0.8 * unit(rng), 0.1 + 0.8 * unit(rng), 0.1 + 0.8 * unit(rng)});
    }
    return s;
}

double max_abs_diff(const ImageD &a, const ImageD &b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

TEST(ProjectGaussian, IsotropicOnAxis) {
    CameraIntrinsics intr{100, 100, 50, 50, 100, 100, 0.01, 100};
    RenderConfig cfg;
    const auto s = project_gaussian({0, 0, 2}, 1e-4 * Mat3::Identity(), Mat3::Identity(), intr, cfg);
    ASSERT_TRUE(s);
    EXPECT_LT((s->covariance - (0.25 + 0.3) * Mat2::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(s->center, Vec2(50, 50));
}

TEST(ProjectGaussian, UnitFocalKeepsUpperBlock) {
    CameraIntrinsics intr{1, 1, 5, 5, 10, 10, 0.01, 100};
    Mat3 cov;
    cov << 0.3, 0.1, 0.05, 0.1, 0.2, 0.02, 0.05, 0.02, 0.4;
    const auto s = project_gaussian({0, 0, 1}, cov, Mat3::Identity(), intr, RenderConfig{});
    ASSERT_TRUE(s);
    EXPECT_LT((s->covariance - (cov.topLeftCorner<2, 2>() + 0.3 * Mat2::Identity())).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ProjectGaussian, BehindCameraIsCulled) {
    CameraIntrinsics intr{100, 100, 50, 50, 100, 100, 0.01, 100};
    EXPECT_FALSE(project_gaussian({0, 0, -1}, Mat3::Identity(), Mat3::Identity(), intr, RenderConfig{}));
}

GaussianCloud single(const Vec3 &mean, double opacity, const Vec3 &color, double sigma = 0.05) {
    GaussianCloud c;
    c.add(mean, Vec3::Constant(std::log(sigma)), Quaternion::identity(), logit(opacity), color);
    return c;
}

TEST(Render, SingleGaussianCenterPixel) {
    CameraIntrinsics intr{100, 100, 16, 16, 32, 32, 0.01, 100};
    const auto cloud = single({0, 0, 2}, 0.5, {1, 0, 0});
    const auto out = render(cloud, Pose::identity(), intr);
    EXPECT_NEAR(out.color(16, 16, 0), 0.5, 1e-15);
    EXPECT_EQ(out.color(16, 16, 1), 0.0);
    EXPECT_NEAR(out.alpha(16, 16), 0.5, 1e-15);
    EXPECT_NEAR(out.depth(16, 16), 1.0, 1e-15);
}

TEST(Render, TwoCoincidentGaussiansBlendFrontToBack) {
    CameraIntrinsics intr{100, 100, 16, 16, 32, 32, 0.01, 100};
    GaussianCloud cloud = single({0, 0, 2}, 0.5, {0, 1, 0}); // back, stored first
    cloud.append(single({0, 0, 1}, 0.5, {1, 0, 0}));           // front
    const auto out = render(cloud, Pose::identity(), intr);
    EXPECT_NEAR(out.color(16, 16, 0), 0.5, 1e-15);
    EXPECT_NEAR(out.color(16, 16, 1), 0.25, 1e-15);
    EXPECT_EQ(out.color(16, 16, 2), 0.0);
    EXPECT_NEAR(out.depth(16, 16), 1.0, 1e-15);
    EXPECT_NEAR(out.alpha(16, 16), 0.75, 1e-15);
}

TEST(Render, EmptyCloudIsBackground) {
    CameraIntrinsics intr{100, 100, 16, 16, 32, 32, 0.01, 100};
    RenderConfig cfg;
    cfg.background = {0.2, 0.3, 0.4};
    for (const auto &out : {render(GaussianCloud{}, Pose::identity(), intr, cfg),
                            render_reference(GaussianCloud{}, Pose::identity(), intr, cfg)}) {
        for (int y = 0; y < 32; ++y) {
            for (int x = 0; x < 32; ++x) {
                EXPECT_EQ(out.alpha(y, x), 0.0);
                EXPECT_EQ(out.depth(y, x), 0.0);
                EXPECT_EQ(out.color(y, x, 2), 0.4);
            }
        }
    }
}

TEST(Render, BackgroundShowsThroughTransmittance) {
    CameraIntrinsics intr{100, 100, 16, 16, 32, 32, 0.01, 100};
    RenderConfig cfg;
    cfg.background = {0, 0, 1};
    const auto out = render(single({0, 0, 2}, 0.5, {1, 0, 0}), Pose::identity(), intr, cfg);
    EXPECT_NEAR(out.color(16, 16, 2), 0.5, 1e-15);
}

TEST(Render, MatchesReferenceOnHandScenes) {
    CameraIntrinsics intr{100, 100, 16, 16, 32, 32, 0.01, 100};
    GaussianCloud cloud = single({0, 0, 2}, 0.5, {0, 1, 0});
    cloud.append(single({0, 0, 1}, 0.5, {1, 0, 0}));
    const auto a = render(cloud, Pose::identity(), intr);
    const auto b = render_reference(cloud, Pose::identity(), intr);
    EXPECT_LT(max_abs_diff(a.color, b.color), 1e-6);
    EXPECT_LT(max_abs_diff(a.depth, b.depth), 1e-6);
    EXPECT_LT(max_abs_diff(a.alpha, b.alpha), 1e-6);
}

TEST(Render, MatchesReferenceOnRandomScenes) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Scene s = random_scene(seed, 500, 64, 48);
        RenderConfig cfg;
        cfg.tile_size = 8 + static_cast<int>(seed) * 3;
        const auto a = render(s.cloud, s.pose, s.intr, cfg);
        const auto b = render_reference(s.cloud, s.pose, s.intr, cfg);
        EXPECT_LT(max_abs_diff(a.color, b.color), 1e-5);
        EXPECT_LT(max_abs_diff(a.depth, b.depth), 1e-5);
        EXPECT_LT(max_abs_diff(a.alpha, b.alpha), 1e-5);
    }
}

TEST(Render, DepthTiesBreakByIndex) {
    CameraIntrinsics intr{100, 100, 16, 16, 32, 32, 0.01, 100};
    GaussianCloud cloud = single({0, 0, 2}, 0.6, {1, 0, 0}, 0.04);
    cloud.append(single({0.01, 0, 2}, 0.7, {0, 0, 1}, 0.06));
    const auto a = render(cloud, Pose::identity(), intr);
    const auto b = render_reference(cloud, Pose::identity(), intr);
    EXPECT_EQ(a.color, b.color);
    EXPECT_EQ(a.depth, b.depth);
    // Lower index is in front: its color dominates at its own center.
    EXPECT_GT(a.color(16, 16, 0), a.color(16, 16, 2));
}

TEST(Render, InvariantToStoragePermutation) {
    Scene s = random_scene(21, 200, 48, 40);
    std::vector<std::size_t> perm(s.cloud.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
    GaussianCloud shuffled;
    for (std::size_t i : perm) {
        shuffled.add(s.cloud.mean(i), s.cloud.log_scale(i), s.cloud.rotation(i), s.cloud.opacity_logit(i),
                     s.cloud.color(i));
    }
    const auto a = render(s.cloud, s.pose, s.intr);
    const auto b = render(shuffled, s.pose, s.intr);
    EXPECT_EQ(a.color, b.color);
    EXPECT_EQ(a.depth, b.depth);
    EXPECT_EQ(a.alpha, b.alpha);
}

TEST(Render, RigidConsistency) {
    Scene s = random_scene(33, 200, 48, 40);
    GaussianCloud moved;
    const Mat3 r = s.pose.rotation_matrix();
    for (std::size_t i = 0; i < s.cloud.size(); ++i) {
        moved.add(r * s.cloud.mean(i) + s.pose.translation, s.cloud.log_scale(i),
                  s.pose.rotation.normalized() * s.cloud.rotation(i), s.cloud.opacity_logit(i), s.cloud.color(i));
    }
    const auto a = render(s.cloud, s.pose, s.intr);
    const auto b = render(moved, Pose::identity(), s.intr);
    EXPECT_LT(max_abs_diff(a.color, b.color), 1e-6);
    EXPECT_LT(max_abs_diff(a.depth, b.depth), 1e-6);
    EXPECT_LT(max_abs_diff(a.alpha, b.alpha), 1e-6);
}

TEST(Render, AlphaBoundedAndConsistentWithTransmittance) {
    Scene s = random_scene(8, 300, 48, 40, 0.3);
    const auto out = render(s.cloud, s.pose, s.intr);
    for (int y = 0; y < s.intr.height; ++y) {
        for (int x = 0; x < s.intr.width; ++x) {
            const double a = out.alpha(y, x);
            EXPECT_GE(a, 0.0);
            EXPECT_LE(a, 1.0);
            EXPECT_DOUBLE_EQ(a, 1.0 - out.state.final_transmittance[static_cast<std::size_t>(y) * s.intr.width + x]);
        }
    }
}

TEST(Render, TransmittanceFloorStopsBlending) {
    CameraIntrinsics intr{100, 100, 16, 16, 32, 32, 0.01, 100};
    GaussianCloud cloud;
    for (int k = 0; k < 6; ++k) {
        cloud.append(single({0, 0, 1.0 + 0.1 * k}, 0.8, {1, 1, 1}));
    }
    const auto out = render(cloud, Pose::identity(), intr);
    // 0.2^5 is above the floor, 0.2^6 is not: the sixth term terminates.
    EXPECT_EQ(out.state.contributors[16 * 32 + 16], 5u);
    EXPECT_NEAR(out.alpha(16, 16), 1.0 - std::pow(0.2, 5), 1e-12);
}

// dL/dθ for L = <wc, color> + <wd, depth> + <wa, alpha>, the linear form
// every image loss reduces to through its image gradient.
struct LinearLoss {
    ImageD wc, wd, wa;
    double operator()(const RenderOutput &o) const {
        double l = 0.0;
        for (std::size_t i = 0; i < wc.size(); ++i) l += wc.data()[i] * o.color.data()[i];
        for (std::size_t i = 0; i < wd.size(); ++i) l += wd.data()[i] * o.depth.data()[i];
        for (std::size_t i = 0; i < wa.size(); ++i) l += wa.data()[i] * o.alpha.data()[i];
        return l;
    }
};

LinearLoss random_linear_loss(std::uint64_t seed, int h, int w) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    LinearLoss l{ImageD(h, w, 3), ImageD(h, w, 1), ImageD(h, w, 1)};
    for (auto &v : l.wc.data()) v = u(rng);
    for (auto &v : l.wd.data()) v = 0.3 * u(rng);
    for (auto &v : l.wa.data()) v = u(rng);
    return l;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

TEST(RenderBackward, SingleGaussianColorGradientIsAlpha) {
    CameraIntrinsics intr{100, 100, 16, 16, 32, 32, 0.01, 100};
    const auto cloud = single({0, 0, 2}, 0.5, {1, 0, 0});
    const auto out = render(cloud, Pose::identity(), intr);
    ImageD gc(32, 32, 3), gd(32, 32, 1);
    gc(16, 16, 0) = 1.0;
    const auto g = render_backward(out, gc, gd, cloud, Pose::identity(), intr);
    EXPECT_NEAR(g.cloud.colors[0], 0.5, 1e-15);
    EXPECT_EQ(g.cloud.colors[1], 0.0);
}

TEST(RenderBackward, AlphaGradientOfSingleGaussian) {
    CameraIntrinsics intr{100, 100, 16, 16, 32, 32, 0.01, 100};
    const auto cloud = single({0, 0, 2}, 0.5, {1, 0, 0});
    const auto out = render(cloud, Pose::identity(), intr);
    ImageD gc(32, 32, 3), gd(32, 32, 1), ga(32, 32, 1);
    ga(16, 16) = 1.0;
    const auto g = render_backward(out, gc, gd, ga, cloud, Pose::identity(), intr);
    // alpha = o·G at the center, G = 1: dalpha/dlogit = o(1 - o).
    EXPECT_NEAR(g.cloud.opacity_logits[0], 0.25, 1e-12);
    const auto none = render_backward(out, gc, gd, ImageD(), cloud, Pose::identity(), intr);
    EXPECT_EQ(none.cloud.opacity_logits[0], 0.0);
    EXPECT_THROW(render_backward(out, gc, gd, ImageD(31, 32, 1), cloud, Pose::identity(), intr),
                 std::invalid_argument);
}

TEST(RenderBackward, UncoveredPixelsGiveZeroGradient) {
    CameraIntrinsics intr{100, 100, 16, 16, 32, 32, 0.01, 100};
    const auto cloud = single({0, 0, 2}, 0.5, {1, 0, 0}, 0.02);
    const auto out = render(cloud, Pose::identity(), intr);
    ImageD gc(32, 32, 3, 0.0), gd(32, 32, 1, 0.0);
    gc(0, 0, 0) = 1.0;
    gd(31, 31) = 1.0;
    const auto g = render_backward(out, gc, gd, cloud, Pose::identity(), intr);
    for (auto grp : kAllGroups) {
        for (double v : g.cloud.group(grp)) EXPECT_EQ(v, 0.0);
    }
    EXPECT_EQ(g.pose, PoseVector::Zero());
}

TEST(RenderBackward, RejectsMismatchedState) {
    Scene s = random_scene(1, 8, 32, 32);
    const auto out = render(s.cloud, s.pose, s.intr);
    ImageD gc(32, 32, 3), gd(32, 32, 1);
    Pose other = s.pose;
    other.translation.x() += 0.1;
    EXPECT_THROW(render_backward(out, gc, gd, s.cloud, other, s.intr), std::invalid_argument);
    GaussianCloud bigger = s.cloud;
    bigger.append(single({0, 0, 0}, 0.5, {1, 1, 1}));
    EXPECT_THROW(render_backward(out, gc, gd, bigger, s.pose, s.intr), std::invalid_argument);
    const auto ref = render_reference(s.cloud, s.pose, s.intr);
    EXPECT_THROW(render_backward(ref, gc, gd, s.cloud, s.pose, s.intr), std::invalid_argument);
}

// Central differences across a pixel that enters or leaves the alpha_min
// cutoff measure the jump, not the derivative. Such entries show up as a
// disagreement between the two one-sided quotients and are skipped.
struct FdCheck {
    double worst = 0.0;
    int checked = 0;
    int kinks = 0;

    void add(double analytic, double l0, double lp, double lm, double h, const std::string &what) {
        const double fwd = (lp - l0) / h, bwd = (l0 - lm) / h;
        if (rel_err(fwd, bwd) > 1e-2 && std::abs(fwd - bwd) > 1e-3) {
            ++kinks;
            return;
        }
        ++checked;
        const double fd = 0.5 * (fwd + bwd);
        const double e = rel_err(analytic, fd);
        worst = std::max(worst, e);
        EXPECT_LT(e, 1e-3) << what << " analytic " << analytic << " fd " << fd;
    }
};

TEST(RenderBackward, MatchesFiniteDifferences) {
    FdCheck check;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Scene s = random_scene(100 + seed, 8, 32, 32);
        const LinearLoss loss = random_linear_loss(seed, 32, 32);
        const auto out = render(s.cloud, s.pose, s.intr);
        const double l0 = loss(out);
        const auto g = render_backward(out, loss.wc, loss.wd, loss.wa, s.cloud, s.pose, s.intr);

        for (auto grp : kAllGroups) {
            auto params = s.cloud.params(grp);
            const auto analytic = g.cloud.group(grp);
            for (std::size_t k = 0; k < params.size(); ++k) {
                const double orig = params[k];
                const double h = 1e-5 * std::max(1.0, std::abs(orig));
                params[k] = orig + h;
                const double lp = loss(render(s.cloud, s.pose, s.intr));
                params[k] = orig - h;
                const double lm = loss(render(s.cloud, s.pose, s.intr));
                params[k] = orig;
                check.add(analytic[k], l0, lp, lm, h,
                          std::string(group_name(grp)) + "[" + std::to_string(k) + "] seed " + std::to_string(seed));
            }
        }
        PoseVector v = pose_to_vector(s.pose);
        for (int k = 0; k < 7; ++k) {
            PoseVector p = v, m = v;
            p[k] += 1e-5;
            m[k] -= 1e-5;
            check.add(g.pose[k], l0, loss(render(s.cloud, pose_from_vector(p), s.intr)),
                      loss(render(s.cloud, pose_from_vector(m), s.intr)), 1e-5,
                      "pose[" + std::to_string(k) + "] seed " + std::to_string(seed));
        }
    }
    EXPECT_LE(check.kinks, check.checked / 20);
    RecordProperty("worst_rel_err", std::to_string(check.worst));
    RecordProperty("skipped", check.kinks);
}

TEST(RenderBackward, ReproducibleAcrossWorkerCounts) {
    Scene s = random_scene(77, 400, 64, 64, 0.5);
    const LinearLoss loss = random_linear_loss(2, 64, 64);
    RenderGradients a, b;
    {
        ScopedWorkers one(1);
        a = render_backward(render(s.cloud, s.pose, s.intr), loss.wc, loss.wd, loss.wa, s.cloud, s.pose, s.intr);
    }
    {
        ScopedWorkers four(4);
        b = render_backward(render(s.cloud, s.pose, s.intr), loss.wc, loss.wd, loss.wa, s.cloud, s.pose, s.intr);
    }
    for (auto grp : kAllGroups) {
        const auto x = a.cloud.group(grp), y = b.cloud.group(grp);
        for (std::size_t k = 0; k < x.size(); ++k) {
            EXPECT_NEAR(x[k], y[k], 1e-10 * std::max(1.0, std::abs(x[k])));
        }
    }
    EXPECT_LT((a.pose - b.pose).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, a.pose.cwiseAbs().maxCoeff()));
}

} // namespace
} // namespace gstrack
