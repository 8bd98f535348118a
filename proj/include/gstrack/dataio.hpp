// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gstrack/frame.hpp"
#include "gstrack/geom.hpp"

#include <cstdint>
#include <filesystem>
#include <future>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gstrack {

/// Raised for unreadable or inconsistent sequence data. The message names
/// the offending file.
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct NoiseSpec {
    double color_std = 0.2;   // on the [0, 1] intensity scale
    double depth_std = 0.025; // meters
    int bleed_px = 2;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const NoiseSpec &) const = default;
};

struct SequenceMeta {
    CameraIntrinsics intr;
    int frame_count = 0;
    double depth_scale_mm = 1.0; // millimeters per stored depth unit
    std::optional<NoiseSpec> noise;

    bool operator==(const SequenceMeta &) const = default;
};

// 8-bit RGB color in [0, 1], 16-bit depth in `depth_scale_mm` units, 0/255 mask.
void write_color_png(const std::filesystem::path &path, const ImageD &color);
void write_depth_png(const std::filesystem::path &path, const ImageD &depth, double depth_scale_mm);
void write_mask_png(const std::filesystem::path &path, const Mask &mask);
ImageD read_color_png(const std::filesystem::path &path);
ImageD read_depth_png(const std::filesystem::path &path, double depth_scale_mm);
Mask read_mask_png(const std::filesystem::path &path);

/// Rounds color and depth to what the PNG encoding stores, so that a saved
/// frame reloads unchanged.
FrameObservation quantize_frame(const FrameObservation &frame, double depth_scale_mm);

std::filesystem::path frame_path(const std::filesystem::path &root, int index, const char *kind);

/// Writes meta.json, poses.json (when every frame has a pose) and the frame
/// PNGs. `extra` is merged into meta.json under "generator".
void save_sequence(const std::filesystem::path &root, const SequenceMeta &meta,
                   const std::vector<FrameObservation> &frames, const std::string &extra_json = "{}");

SequenceMeta load_meta(const std::filesystem::path &root);
std::vector<std::optional<Pose>> load_poses(const std::filesystem::path &root, int frame_count);
void save_poses(const std::filesystem::path &path, const std::vector<Pose> &poses);

/// Streams frames in index order, decoding the next one in the background.
class SequenceReader {
  public:
    /// Validates meta.json and the presence of every frame file.
    explicit SequenceReader(std::filesystem::path root);
    ~SequenceReader();
    SequenceReader(const SequenceReader &) = delete;
    SequenceReader &operator=(const SequenceReader &) = delete;

    const SequenceMeta &meta() const { return meta_; }
    /// Next frame, or nullopt after the last one.
    std::optional<FrameObservation> next();

  private:
    FrameObservation decode(int index) const;
    void prefetch();

    std::filesystem::path root_;
    SequenceMeta meta_;
    std::vector<std::optional<Pose>> poses_;
    int next_index_ = 0;
    std::future<FrameObservation> pending_;
};

/// Reads the whole sequence.
std::vector<FrameObservation> load_sequence(const std::filesystem::path &root, SequenceMeta *meta = nullptr);

/// Zero-mean Gaussian color and depth noise plus depth edge bleeding, drawn
/// from a stream fixed by (seed, frame.index). Only masked pixels change.
FrameObservation add_noise(const FrameObservation &frame, std::uint64_t seed, double color_std, double depth_std,
                           int bleed_px);
FrameObservation add_noise(const FrameObservation &frame, const NoiseSpec &spec);

/// Depth edge bleeding alone: `bleed_px` passes in which a masked pixel takes
/// the nearest 4-neighbor depth that is closer by more than `threshold`.
ImageD bleed_depth_edges(const ImageD &depth, const Mask &mask, double threshold, int bleed_px);

std::string read_text_file(const std::filesystem::path &path);
void write_text_file(const std::filesystem::path &path, const std::string &text);

} // namespace gstrack
