// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gstrack/cloud.hpp"
#include "gstrack/geom.hpp"
#include "gstrack/image.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

namespace gstrack {

struct RenderConfig {
    int tile_size = 16;
    double alpha_min = 1.0 / 255.0;
    double alpha_max = 0.99;
    double transmittance_floor = 1e-4;
    /// Added to the diagonal of every 2D covariance, pixels².
    double dilation = 0.3;
    Vec3 background = Vec3::Zero();

    void validate() const;
    bool operator==(const RenderConfig &) const = default;
};

/// Image-space footprint of one Gaussian.
struct Splat2D {
    Vec2 center;
    Mat2 covariance;
};

/// Projects a camera-space mean and object-space covariance through the
/// locally affine camera model. Returns nullopt for Gaussians on or behind
/// the near plane.
std::optional<Splat2D> project_gaussian(const Vec3 &mean_c, const Mat3 &cov_obj, const Mat3 &pose_rotation,
                                        const CameraIntrinsics &intr, const RenderConfig &cfg);

namespace raster_detail {

/// Hot-loop record of a visible Gaussian, stored in front-to-back order.
struct Splat {
    double cx, cy;    // projected center, pixels
    double ca, cb, cc; // conic (inverse 2D covariance): [[ca, cb], [cb, cc]]
    double opacity;
    double min_power; // log(alpha_min / opacity); below this alpha is skipped
    double r, g, b;   // clamped color
    double depth;     // camera-space z
    std::uint32_t id; // index into the cloud
};

/// Quantities the backward pass needs to chain 2D gradients into 3D.
struct ProjectionRecord {
    Vec3 mean_c;
    Mat23 jacobian;
    Mat3 cov_cam;
    Mat2 conic;
};

} // namespace raster_detail

/// Blending state saved by `render` for the backward pass.
struct RasterState {
    std::vector<raster_detail::Splat> splats; // sorted by (depth, id)
    std::vector<raster_detail::ProjectionRecord> records;
    std::vector<std::uint32_t> tile_offsets; // tiles + 1 entries into tile_entries
    std::vector<std::uint32_t> tile_entries; // indices into splats, front to back
    std::vector<double> final_transmittance; // per pixel
    std::vector<std::uint32_t> contributors; // per pixel: tile-list entries consumed
    int tiles_x = 0;
    int tiles_y = 0;

    // Fingerprint of the inputs the state was produced from.
    std::size_t cloud_size = 0;
    Pose pose;
    CameraIntrinsics intr;
    RenderConfig cfg;
    bool valid = false;
};

struct RenderOutput {
    ImageD color; // H×W×3
    ImageD depth; // H×W×1, alpha-weighted z, not normalized
    ImageD alpha; // H×W×1
    RasterState state;
};

/// Tiled forward splatting. Contributors are composited in ascending
/// camera-space depth, ties broken by lower Gaussian index.
RenderOutput render(const GaussianCloud &cloud, const Pose &pose, const CameraIntrinsics &intr,
                    const RenderConfig &cfg = {});

/// Brute-force oracle: every pixel visits every Gaussian and sorts its own
/// contributors. Same contract as `render`; carries no backward state.
RenderOutput render_reference(const GaussianCloud &cloud, const Pose &pose, const CameraIntrinsics &intr,
                              const RenderConfig &cfg = {});

using PoseVector = Eigen::Matrix<double, 7, 1>; // (tx, ty, tz, qw, qx, qy, qz)

struct RenderGradients {
    CloudGradients cloud;
    PoseVector pose = PoseVector::Zero();
};

/// Exact gradients of a scalar loss given dL/dcolor (H×W×3) and dL/ddepth
/// (H×W×1), with sort order and termination held fixed. Throws
/// std::invalid_argument if `out` was not produced from these inputs.
RenderGradients render_backward(const RenderOutput &out, const ImageD &dL_dcolor, const ImageD &dL_ddepth,
                                const GaussianCloud &cloud, const Pose &pose, const CameraIntrinsics &intr,
                                const RenderConfig &cfg = {});

/// As above with an additional dL/dalpha (H×W×1); an empty image means zero.
RenderGradients render_backward(const RenderOutput &out, const ImageD &dL_dcolor, const ImageD &dL_ddepth,
                                const ImageD &dL_dalpha, const GaussianCloud &cloud, const Pose &pose,
                                const CameraIntrinsics &intr, const RenderConfig &cfg = {});

/// Pose as the 7-vector (t, q) used by the optimizer.
PoseVector pose_to_vector(const Pose &pose);
Pose pose_from_vector(const PoseVector &v);

} // namespace gstrack
