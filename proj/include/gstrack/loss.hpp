// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gstrack/frame.hpp"
#include "gstrack/image.hpp"
#include "gstrack/raster.hpp"

namespace gstrack {

struct LossWeights {
    double lambda = 0.2; // SSIM share of the color term
    double beta = 0.2;   // depth weight

    void validate() const;
    bool operator==(const LossWeights &) const = default;
};

struct LossReport {
    double total = 0.0;
    double l1_color = 0.0;
    double ssim = 1.0; // SSIM value, not the loss
    double l1_depth = 0.0;
};

/// A scalar with its gradient image.
struct ImageLoss {
    double value = 0.0;
    ImageD grad;
};

/// Mean |a - b| over pixels with nonzero weight and all channels. `weight`
/// is H×W×1. The gradient is sign(a - b)·w / (count·channels).
ImageLoss l1_image(const ImageD &a, const ImageD &b, const ImageD &weight);

/// Mean SSIM over pixels and channels (11×11 Gaussian window, sigma 1.5,
/// reflected borders). Returns the SSIM value and dSSIM/da. Throws
/// std::invalid_argument for images smaller than the window.
ImageLoss ssim(const ImageD &a, const ImageD &b);

struct LossResult {
    LossReport report;
    ImageD dL_dcolor; // H×W×3
    ImageD dL_ddepth; // H×W×1
    ImageD dL_dalpha; // H×W×1
};

/// (1-λ)·L1_color + λ·(1-SSIM) + β·L1_depth. The observed color is replaced
/// by `background` outside the mask. The depth term compares depth/alpha with
/// the observation on pixels with valid observed depth and rendered alpha > 0.5.
LossResult recon_loss(const RenderOutput &rendered, const FrameObservation &obs, const LossWeights &w,
                      const Vec3 &background = Vec3::Zero());

/// recon_loss with λ = 0.
LossResult track_loss(const RenderOutput &rendered, const FrameObservation &obs, const LossWeights &w,
                      const Vec3 &background = Vec3::Zero());

/// Observed color with masked-out pixels set to `background`.
ImageD masked_color(const FrameObservation &obs, const Vec3 &background);

/// Weight image for the depth term.
ImageD depth_weight(const RenderOutput &rendered, const FrameObservation &obs);

/// depth/alpha where `weight` is nonzero, 0 elsewhere.
ImageD normalized_depth(const RenderOutput &rendered, const ImageD &weight);

} // namespace gstrack
