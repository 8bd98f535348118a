// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gstrack/cloud.hpp"
#include "gstrack/dataio.hpp"
#include "gstrack/geom.hpp"
#include "gstrack/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gstrack {

struct TrajectorySpec {
    double radius = 16.0;
    double turns = 3.0;
    int frames = 100;

    void validate() const;
};

/// Camera poses T_CO on a spherical spiral around the object origin. The
/// polar angle sweeps (0, pi) in equal steps, the azimuth makes `turns` full
/// revolutions; every camera looks at the origin and its roll is carried
/// along by parallel transport.
std::vector<Pose> make_spiral_trajectory(const TrajectorySpec &spec);

/// Camera center in the object frame.
Vec3 camera_center(const Pose &t_co);

enum class ToyKind { CuboidSat, TwoPanelSat, TexturedSphere, UnitCube };

ToyKind parse_toy_kind(const std::string &name);
std::string toy_kind_name(ToyKind kind);

struct ToyObject {
    ToyKind kind = ToyKind::CuboidSat;
    GaussianCloud cloud;             // dense surfels
    std::vector<Vec3> surface_points; // sampled on the same surfaces
    double extent = 0.0;              // bounding box diagonal, meters
};

inline constexpr double kSurfelOpacity = 0.95;

/// Isotropic surfels with scale spacing/2 and opacity 0.95 on the object's
/// surfaces, colored per face with a checker pattern and seeded jitter.
/// Geometry does not depend on `seed`.
ToyObject make_toy_object(ToyKind kind, double spacing, std::uint64_t seed = 0);

/// Surfels and surface samples of an axis-aligned box centered at `center`.
/// `face_colors` holds six base colors: -x, +x, -y, +y, -z, +z.
void add_box_surfels(ToyObject &obj, const Vec3 &center, const Vec3 &size, double spacing,
                     const std::vector<Vec3> &face_colors, std::uint64_t seed);

struct GenerateOptions {
    RenderConfig render;
    std::optional<NoiseSpec> noise;
    double depth_scale_mm = 1.0;
    /// Free-form JSON object stored in meta.json.
    std::string generator_json = "{}";
};

/// Clean frame rendered by the brute-force oracle: mask = alpha > 0.5,
/// alpha-normalized depth inside the mask.
FrameObservation render_observation(const GaussianCloud &cloud, const Pose &pose, const CameraIntrinsics &intr,
                                    const RenderConfig &cfg, int index);

/// Renders every pose, applies noise when requested, quantizes to the stored
/// encoding and writes the sequence layout plus gt_points.ply.
SequenceMeta generate_sequence(const ToyObject &obj, const std::vector<Pose> &trajectory,
                               const CameraIntrinsics &intr, const std::filesystem::path &out,
                               const GenerateOptions &opts = {});

} // namespace gstrack
