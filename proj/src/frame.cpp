// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/frame.hpp"

#include <stdexcept>

namespace gstrack {

void FrameObservation::validate() const {
    if (color.channels() != 3 || depth.channels() != 1 || mask.channels() != 1) {
        throw std::invalid_argument("frame: expected 3-channel color, 1-channel depth and mask");
    }
    if (!color.same_extent(depth) || !color.same_extent(mask)) {
        throw std::invalid_argument("frame: color, depth and mask shapes disagree");
    }
    for (double d : depth.data()) {
        if (!(d >= 0.0)) {
            throw std::invalid_argument("frame: negative or NaN depth");
        }
    }
}

FrameObservation make_empty_frame(int height, int width, int index) {
    FrameObservation f;
    f.color = ImageD(height, width, 3);
    f.depth = ImageD(height, width, 1);
    f.mask = Mask(height, width, 1);
    f.index = index;
    return f;
}

} // namespace gstrack
