// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gstrack/cloud.hpp"
#include "gstrack/raster.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gstrack {

/// Adam moments and step counter for one parameter group.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    AdamState() = default;
    AdamState(std::size_t n, double lr) : lr(lr), m(n, 0.0), v(n, 0.0) {}

    std::size_t size() const { return m.size(); }
    /// Zero moments and counter, keeping hyperparameters.
    void reset(std::size_t n);

    bool operator==(const AdamState &) const = default;
};

/// One bias-corrected Adam update in place. A non-finite gradient skips the
/// update (the counter still advances) and raises a warning; returns whether
/// the parameters changed. Throws std::invalid_argument on size mismatch.
bool adam_step(AdamState &state, std::span<double> params, std::span<const double> grads,
               const std::string &group = "params");

/// Renormalizes the quaternion part of (t, q). Throws std::invalid_argument
/// for a zero quaternion.
PoseVector normalize_pose_params(const PoseVector &v);

/// Base learning rates. `means` and `pose_translation` are multiplied by the
/// object extent when the optimizers are built.
struct LearningRates {
    double means = 1.6e-3;
    double colors = 2.5e-3;
    double opacity_logits = 5e-2;
    double log_scales = 5e-3;
    double rotations = 1e-3;
    double pose_translation = 1e-3;
    double pose_rotation = 1e-3;

    bool operator==(const LearningRates &) const = default;
};

/// Adam over all five Gaussian parameter groups.
class CloudOptimizer {
  public:
    CloudOptimizer() = default;
    CloudOptimizer(const GaussianCloud &cloud, const LearningRates &rates, double extent);

    /// Returns the number of groups whose update was skipped.
    int step(GaussianCloud &cloud, const CloudGradients &grads);
    AdamState &group(ParamGroup g) { return groups_[static_cast<int>(g)]; }
    const AdamState &group(ParamGroup g) const { return groups_[static_cast<int>(g)]; }

    bool operator==(const CloudOptimizer &) const = default;

  private:
    std::array<AdamState, 5> groups_;
};

/// Adam over the pose 7-vector: translation and quaternion as two groups,
/// with the quaternion renormalized after each step.
class PoseOptimizer {
  public:
    PoseOptimizer() = default;
    PoseOptimizer(const LearningRates &rates, double extent);

    /// Returns false if any group was skipped.
    bool step(PoseVector &pose, const PoseVector &grad);
    AdamState &translation() { return t_; }
    AdamState &rotation() { return q_; }

    bool operator==(const PoseOptimizer &) const = default;

  private:
    AdamState t_;
    AdamState q_;
};

/// JSON text; round-trips every double bit-exactly.
std::string save_adam_state(const AdamState &s);
AdamState load_adam_state(const std::string &text);

} // namespace gstrack
