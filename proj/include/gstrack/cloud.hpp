// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gstrack/frame.hpp"
#include "gstrack/geom.hpp"
#include "gstrack/image.hpp"

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace gstrack {

/// Optimizable parameter arrays of a cloud. Each group is a flat array with
/// `group_width` reals per Gaussian.
enum class ParamGroup { Means, LogScales, Rotations, OpacityLogits, Colors };

inline constexpr std::array<ParamGroup, 5> kAllGroups = {ParamGroup::Means, ParamGroup::LogScales,
                                                         ParamGroup::Rotations, ParamGroup::OpacityLogits,
                                                         ParamGroup::Colors};

constexpr int group_width(ParamGroup g) {
    switch (g) {
    case ParamGroup::Rotations:
        return 4;
    case ParamGroup::OpacityLogits:
        return 1;
    default:
        return 3;
    }
}

const char *group_name(ParamGroup g);

double sigmoid(double x);
double logit(double p);

/// Structure-of-arrays storage for N Gaussians in the object frame.
///
/// Scales are stored as log standard deviations, rotations as (possibly
/// unnormalized) wxyz quaternions, opacity as a logit, colors raw (clamped to
/// [0,1] at render time).
class GaussianCloud {
  public:
    std::size_t size() const { return opacity_logits_.size(); }
    bool empty() const { return size() == 0; }
    void reserve(std::size_t n);

    /// Appends one Gaussian and returns its index.
    std::size_t add(const Vec3 &mean, const Vec3 &log_scale, const Quaternion &rotation, double opacity_logit,
                    const Vec3 &color);

    Vec3 mean(std::size_t i) const { return {means_[3 * i], means_[3 * i + 1], means_[3 * i + 2]}; }
    Vec3 log_scale(std::size_t i) const {
        return {log_scales_[3 * i], log_scales_[3 * i + 1], log_scales_[3 * i + 2]};
    }
    Vec3 scale(std::size_t i) const { return log_scale(i).array().exp(); }
    Quaternion rotation(std::size_t i) const {
        return {rotations_[4 * i], rotations_[4 * i + 1], rotations_[4 * i + 2], rotations_[4 * i + 3]};
    }
    double opacity_logit(std::size_t i) const { return opacity_logits_[i]; }
    double opacity(std::size_t i) const { return sigmoid(opacity_logits_[i]); }
    Vec3 color(std::size_t i) const { return {colors_[3 * i], colors_[3 * i + 1], colors_[3 * i + 2]}; }

    void set_mean(std::size_t i, const Vec3 &m);
    void set_log_scale(std::size_t i, const Vec3 &s);
    void set_rotation(std::size_t i, const Quaternion &q);
    void set_opacity_logit(std::size_t i, double l) { opacity_logits_[i] = l; }
    void set_color(std::size_t i, const Vec3 &c);

    std::span<double> params(ParamGroup g);
    std::span<const double> params(ParamGroup g) const;

    /// Keeps Gaussians with keep[i] true, preserving order.
    void compact(const std::vector<bool> &keep);
    void append(const GaussianCloud &other);
    void normalize_rotations();

    std::vector<Vec3> means() const;
    /// Diagonal of the axis-aligned bounding box of the means (0 if empty).
    double extent() const;

    /// Throws std::logic_error if any storage invariant is violated.
    void validate() const;

    bool operator==(const GaussianCloud &) const = default;

  private:
    std::vector<double> means_;
    std::vector<double> log_scales_;
    std::vector<double> rotations_;
    std::vector<double> opacity_logits_;
    std::vector<double> colors_;
};

/// Accumulators for dL/dθ, shaped like the cloud they were allocated for.
struct CloudGradients {
    std::vector<double> means;
    std::vector<double> log_scales;
    std::vector<double> rotations;
    std::vector<double> opacity_logits;
    std::vector<double> colors;

    CloudGradients() = default;
    explicit CloudGradients(std::size_t n);

    std::size_t size() const { return opacity_logits.size(); }
    std::span<double> group(ParamGroup g);
    std::span<const double> group(ParamGroup g) const;
    void set_zero();
    bool matches(const GaussianCloud &cloud) const { return size() == cloud.size(); }
};

/// Σ = R diag(s)² Rᵀ.
Mat3 covariance_of(const GaussianCloud &cloud, std::size_t i);

/// Per-axis variance given to every seeded Gaussian.
inline constexpr double kInitVariance = 0.001;
inline constexpr double kInitOpacity = 0.5;
inline constexpr double kPruneOpacity = 0.6;

/// One Gaussian per masked, valid-depth pixel on a `stride` grid, placed in
/// the object frame via pose⁻¹.
GaussianCloud init_from_rgbd(const FrameObservation &frame, const CameraIntrinsics &intr, const Pose &pose,
                             int stride = 1);

struct DensifyOptions {
    int stride = 4;
    /// Pixels with rendered alpha below this are treated as unexplained.
    double alpha_floor = 0.5;
    /// Fraction of the masked observed depth range a residual must exceed.
    double depth_fraction = 0.1;
    bool operator==(const DensifyOptions &) const = default;
};

/// Seeds Gaussians on the stride grid where the render fails to explain the
/// observation: rendered alpha below the floor, or alpha-normalized rendered
/// depth off by more than the threshold. Returns the number added.
std::size_t densify(GaussianCloud &cloud, const FrameObservation &frame, const ImageD &rendered_depth,
                    const ImageD &rendered_alpha, const Pose &pose, const CameraIntrinsics &intr,
                    const DensifyOptions &opts = {});

/// Removes Gaussians with activated opacity below `threshold`. Returns the
/// number removed.
std::size_t prune(GaussianCloud &cloud, double threshold = kPruneOpacity);

void save_ply(const GaussianCloud &cloud, const std::filesystem::path &path);
GaussianCloud load_ply(const std::filesystem::path &path);

/// Plain point sets (x, y, z only).
void save_points_ply(const std::vector<Vec3> &points, const std::filesystem::path &path);
/// Reads the x, y, z columns of any ASCII vertex PLY, including cloud files.
std::vector<Vec3> load_points_ply(const std::filesystem::path &path);

} // namespace gstrack
