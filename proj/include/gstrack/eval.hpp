// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gstrack/geom.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace gstrack {

/// Static 3-d tree over a point set for exact nearest-neighbor queries.
class KdTree {
  public:
    explicit KdTree(std::vector<Vec3> points);

    /// Index of the nearest point and its Euclidean distance. The tree must
    /// be non-empty.
    std::pair<std::size_t, double> nearest(const Vec3 &q) const;
    std::size_t size() const { return points_.size(); }

  private:
    struct Node {
        int axis = -1; // -1 for leaves
        double split = 0.0;
        std::uint32_t begin = 0, end = 0; // leaf range into order_
        std::int32_t left = -1, right = -1;
    };
    std::int32_t build(std::uint32_t begin, std::uint32_t end);
    void search(std::int32_t node, const Vec3 &q, std::size_t &best, double &best_d2) const;

    std::vector<Vec3> points_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
};

/// ½·mean NN distance a→b + ½·mean NN distance b→a over the full sets.
double chamfer_exact(const std::vector<Vec3> &a, const std::vector<Vec3> &b);

struct ChamferResult {
    double mean = 0.0;
    double std = 0.0; // sample standard deviation over the resamplings
    std::vector<double> values;
};

/// Chamfer distance over `resamplings` uniform subsamples of at most
/// `samples` points per set. Throws std::invalid_argument for empty sets.
ChamferResult chamfer(const std::vector<Vec3> &a, const std::vector<Vec3> &b, std::size_t samples = 20000,
                      std::uint64_t seed = 0, int resamplings = 5);

struct PoseError {
    double t_err = 0.0;         // meters
    double theta_err_deg = 0.0; // degrees
    bool operator==(const PoseError &) const = default;
};

/// Per-frame translation and rotation error. Throws on length mismatch.
std::vector<PoseError> pose_errors(const std::vector<Pose> &est, const std::vector<Pose> &gt);

/// {0, N/4, N/2, N} without duplicates for an N-frame run; {0} when only
/// the initial frame exists. Checkpoint N is taken after the last frame.
std::vector<int> checkpoint_frames(int frame_count);
std::string checkpoint_label(int frame);

struct CheckpointMetric {
    int frame = 0;
    double mean = 0.0;
    double std = 0.0;
    bool operator==(const CheckpointMetric &) const = default;
};

struct MetricsReport {
    std::vector<int> frames;
    std::vector<PoseError> errors;
    std::vector<CheckpointMetric> chamfer;
    std::map<std::string, double> timing; // seconds per phase
    bool operator==(const MetricsReport &) const = default;
};

std::string metrics_to_json(const MetricsReport &r);
MetricsReport metrics_from_json(const std::string &text);

/// Writes metrics.json, pose_errors.csv and chamfer.csv into `dir`.
void emit_report(const MetricsReport &r, const std::filesystem::path &dir);

} // namespace gstrack
