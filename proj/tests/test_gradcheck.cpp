// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/gradcheck.hpp"

#include <gtest/gtest.h>

#include <algorithm>

namespace gstrack {
namespace {

TEST(Gradcheck, SmallRunPasses) {
    GradcheckOptions o;
    o.seeds = 4;
    const GradcheckReport r = run_gradcheck(o);
    EXPECT_TRUE(r.passed) << r.worst_entry;
    EXPECT_LT(r.worst_recon, 1e-3);
    EXPECT_LT(r.worst_track, 1e-3);
    EXPECT_LE(r.kinks, r.checked / 20);
    EXPECT_EQ(r.checked + r.kinks, 4 * 2 * (8 * 14 + 7));
}

TEST(Gradcheck, SingleGaussianPasses) {
    GradcheckOptions o;
    o.seeds = 5;
    o.gaussians = 1;
    EXPECT_TRUE(run_gradcheck(o).passed);
}

TEST(Gradcheck, CorruptedGradientFails) {
    GradcheckOptions o;
    o.seeds = 2;
    o.corrupt = true;
    const GradcheckReport r = run_gradcheck(o);
    EXPECT_FALSE(r.passed);
    EXPECT_GT(r.worst_recon, 1e-3);
    EXPECT_NE(r.worst_entry.find("colors[0]"), std::string::npos);
}

TEST(Gradcheck, RejectsBadOptions) {
    GradcheckOptions o;
    o.seeds = 0;
    EXPECT_THROW(run_gradcheck(o), std::invalid_argument);
    o = {};
    o.image_size = 4;
    EXPECT_THROW(run_gradcheck(o), std::invalid_argument);
}

TEST(Gradcheck, RandomSceneIsSeeded) {
    const RandomScene a = random_scene(3, 10, 24, 20), b = random_scene(3, 10, 24, 20);
    EXPECT_EQ(a.cloud.means(), b.cloud.means());
    EXPECT_TRUE(std::ranges::equal(a.obs.color.data(), b.obs.color.data()));
    EXPECT_EQ(a.intr.width, 24);
    EXPECT_EQ(a.cloud.size(), 10u);
    const RandomScene c = random_scene(4, 10, 24, 20);
    EXPECT_NE(a.cloud.means(), c.cloud.means());
}

} // namespace
} // namespace gstrack
