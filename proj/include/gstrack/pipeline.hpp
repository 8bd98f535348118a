// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gstrack/cloud.hpp"
#include "gstrack/eval.hpp"
#include "gstrack/frame.hpp"
#include "gstrack/loss.hpp"
#include "gstrack/optim.hpp"
#include "gstrack/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gstrack {

class InitializationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct PipelineConfig {
    int recon_steps = 120;
    int track_steps = 80;
    int window_max = 8;
    int keyframe_capacity = 64;
    LossWeights loss;
    RenderConfig render;
    LearningRates rates;
    DensifyOptions densify;
    int init_stride = 1;
    double prune_threshold = kPruneOpacity;
    /// Run a reconstruction phase on frame 0 during initialization.
    bool init_recon = true;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const PipelineConfig &) const = default;
};

std::string config_to_json(const PipelineConfig &cfg);
/// Fields missing from the JSON keep their defaults; unknown fields are errors.
PipelineConfig config_from_json(const std::string &text);

enum class Phase { Track, Reconstruct };
const char *phase_name(Phase p);

struct Keyframe {
    FrameObservation frame;
    Pose pose;
    int index = 0;
};

struct FrameRecord {
    int index = 0;
    Phase phase = Phase::Track;
    Pose pose;
    LossReport loss;
    double initial_loss = 0.0;
    bool flagged = false;
    std::size_t added = 0;
    std::size_t pruned = 0;
    std::size_t cloud_size = 0;
    double seconds = 0.0;
};

struct PipelineState {
    GaussianCloud cloud;
    CameraIntrinsics intr;
    PipelineConfig cfg;
    double extent = 1.0;
    std::vector<Pose> poses; // one per processed frame
    std::vector<Keyframe> keyframes;
    std::vector<int> last_selection; // frame indices
    std::vector<FrameRecord> records;
    int frames_processed = 0;
    Phase next_phase = Phase::Track;
    std::mt19937_64 rng;
};

/// Builds the initial cloud from frame 0. Uses `gt_pose` when given,
/// otherwise a random rotation centered at the centroid of the masked depth.
PipelineState initialize(const FrameObservation &first, const CameraIntrinsics &intr, const PipelineConfig &cfg,
                         const std::optional<Pose> &gt_pose = std::nullopt);

/// Greedy farthest-point selection under rotation_distance, seeded with
/// `seeds` (indices into `rotations`). Ties go to the lowest index.
std::vector<std::size_t> select_farthest(const std::vector<Quaternion> &rotations,
                                         const std::vector<std::size_t> &seeds, int w_max);

/// Indices into state.keyframes: seeded with the current and previous view.
std::vector<std::size_t> select_keyframes(const PipelineState &state);

/// Refines the extrapolated pose with the cloud frozen.
FrameRecord track_frame(PipelineState &state, const FrameObservation &frame);

/// Densifies, optimizes the cloud over the keyframe window at the fixed
/// extrapolated pose, then prunes.
FrameRecord reconstruct_frame(PipelineState &state, const FrameObservation &frame);

/// Prediction for the next frame from the pose history.
Pose predicted_pose(const PipelineState &state);

struct RunOptions {
    bool gt_init = false;
    /// Surface samples for chamfer; skipped when empty.
    std::vector<Vec3> gt_points;
    std::size_t chamfer_samples = 20000;
    /// Nominal checkpoint labels; empty means {0, N/4, N/2, N}.
    std::vector<int> checkpoints;
    std::function<void(const FrameRecord &)> on_frame;
};

struct RunResult {
    std::vector<FrameRecord> records;
    std::map<int, GaussianCloud> snapshots; // by nominal checkpoint
    std::vector<std::optional<Pose>> gt_poses;
    MetricsReport metrics;
    PipelineState state;
};

using FrameSource = std::function<std::optional<FrameObservation>()>;

/// Runs initialize on the first frame, then track and reconstruct on
/// alternate frames starting with track.
RunResult process_sequence(const FrameSource &next, int frame_count, const CameraIntrinsics &intr,
                           const PipelineConfig &cfg, const RunOptions &opts = {});

/// trajectory.json; per-frame timing is left out when `with_timing` is false.
std::string trajectory_to_json(const std::vector<FrameRecord> &records, bool with_timing);
std::vector<Pose> trajectory_poses_from_json(const std::string &text);

/// Writes trajectory.json, timing.json, metrics files and snapshot PLYs.
void write_run_artifacts(const RunResult &r, const std::filesystem::path &dir, bool deterministic);

} // namespace gstrack
