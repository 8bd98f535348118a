// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gstrack/geom.hpp"
#include "gstrack/image.hpp"

#include <optional>

namespace gstrack {

/// One RGB-D time step. Depth is metric; 0 marks an invalid pixel.
struct FrameObservation {
    ImageD color; // H×W×3, [0,1]
    ImageD depth; // H×W×1, meters
    Mask mask;    // H×W×1, 0 or 1
    std::optional<Pose> gt_pose;
    int index = 0;

    int height() const { return color.height(); }
    int width() const { return color.width(); }

    bool valid(int y, int x) const { return mask(y, x) != 0 && depth(y, x) > 0.0; }

    /// Throws std::invalid_argument on shape disagreement or negative depth.
    void validate() const;
};

/// Blank frame of the given size: black, zero depth, empty mask.
FrameObservation make_empty_frame(int height, int width, int index = 0);

} // namespace gstrack
