// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gstrack/cloud.hpp"
#include "gstrack/frame.hpp"
#include "gstrack/geom.hpp"

#include <cstdint>
#include <string>

namespace gstrack {

/// Random Gaussians around the origin seen from about 3 m, with a random
/// observation for the loss.
struct RandomScene {
    GaussianCloud cloud;
    Pose pose;
    CameraIntrinsics intr;
    FrameObservation obs;
};

RandomScene random_scene(std::uint64_t seed, int gaussians, int width, int height, double spread = 0.8);

struct GradcheckOptions {
    int seeds = 50;
    int gaussians = 8;
    int image_size = 32;
    double tolerance = 1e-3;
    double step = 1e-5;
    std::uint64_t seed = 0;
    /// Test hook: scales one analytic entry so the check must fail.
    bool corrupt = false;
};

struct GradcheckReport {
    double worst_recon = 0.0; // worst relative error, recon_loss
    double worst_track = 0.0; // worst relative error, track_loss
    std::string worst_entry;
    int checked = 0;
    /// Entries skipped because the two one-sided quotients disagree.
    int kinks = 0;
    double seconds = 0.0;
    bool passed = false;
};

/// Central-difference check of d(recon_loss)/dθ and d(track_loss)/dθ over
/// every Gaussian parameter and the pose 7-vector. Fails when any checked
/// entry exceeds the tolerance or more than 5% of entries are kinks.
GradcheckReport run_gradcheck(const GradcheckOptions &opts);

} // namespace gstrack
