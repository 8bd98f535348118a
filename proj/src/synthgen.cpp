// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace gstrack {

namespace fs = std::filesystem;

void TrajectorySpec::validate() const {
    if (!(radius > 0.0)) {
        throw std::invalid_argument("TrajectorySpec: radius must be positive");
    }
    if (frames < 2) {
        throw std::invalid_argument("TrajectorySpec: at least 2 frames are required");
    }
    if (!std::isfinite(turns)) {
        throw std::invalid_argument("TrajectorySpec: turns must be finite");
    }
}

namespace {

// Smallest rotation taking unit vector a to unit vector b.
Mat3 minimal_rotation(const Vec3 &a, const Vec3 &b) {
    const Vec3 axis = a.cross(b);
    const double s = axis.norm();
    const double c = std::clamp(a.dot(b), -1.0, 1.0);
    if (s < 1e-15) {
        return Mat3::Identity();
    }
    return Eigen::AngleAxisd(std::atan2(s, c), axis / s).toRotationMatrix();
}

} // namespace

std::vector<Pose> make_spiral_trajectory(const TrajectorySpec &spec) {
    spec.validate();
    const double pi = std::numbers::pi;
    const int n = spec.frames;
    std::vector<Pose> poses;
    poses.reserve(n);
    Vec3 x_axis, z_prev;
    for (int i = 0; i < n; ++i) {
        const double phi = pi * (i + 0.5) / n;
        const double theta = 2.0 * pi * spec.turns * i / (n - 1);
        const Vec3 dir(std::sin(phi) * std::cos(theta), std::sin(phi) * std::sin(theta), std::cos(phi));
        const Vec3 z = -dir;
        if (i == 0) {
            Vec3 seed = Vec3::UnitX();
            if (std::abs(seed.dot(z)) > 0.9) {
                seed = Vec3::UnitY();
            }
            x_axis = (seed - seed.dot(z) * z).normalized();
        } else {
            x_axis = minimal_rotation(z_prev, z) * x_axis;
            x_axis = (x_axis - x_axis.dot(z) * z).normalized();
        }
        z_prev = z;
        const Vec3 y_axis = z.cross(x_axis);
        Mat3 r_oc;
        r_oc.col(0) = x_axis;
        r_oc.col(1) = y_axis;
        r_oc.col(2) = z;
        const Mat3 r_co = r_oc.transpose();
        const Vec3 center = spec.radius * dir;
        poses.push_back({Quaternion::from_matrix(r_co), -(r_co * center)});
    }
    return poses;
}

Vec3 camera_center(const Pose &t_co) { return -(t_co.rotation_matrix().transpose() * t_co.translation); }

ToyKind parse_toy_kind(const std::string &name) {
    if (name == "cuboid-sat") return ToyKind::CuboidSat;
    if (name == "two-panel-sat") return ToyKind::TwoPanelSat;
    if (name == "textured-sphere") return ToyKind::TexturedSphere;
    if (name == "unit-cube") return ToyKind::UnitCube;
    throw std::invalid_argument("unknown object kind '" + name + "'");
}

std::string toy_kind_name(ToyKind kind) {
    switch (kind) {
    case ToyKind::CuboidSat:
        return "cuboid-sat";
    case ToyKind::TwoPanelSat:
        return "two-panel-sat";
    case ToyKind::TexturedSphere:
        return "textured-sphere";
    case ToyKind::UnitCube:
        return "unit-cube";
    }
    return "unknown";
}

namespace {

constexpr double kCheckerCell = 0.25; // meters
constexpr double kCheckerDim = 0.55;
constexpr double kJitter = 0.04;

Vec3 textured(const Vec3 &base, bool odd, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> u(-kJitter, kJitter);
    const Vec3 c = odd ? Vec3(base * kCheckerDim) : base;
    return Vec3(c.x() + u(rng), c.y() + u(rng), c.z() + u(rng)).cwiseMax(0.0).cwiseMin(1.0);
}

void add_surfel(ToyObject &obj, const Vec3 &p, double spacing, const Vec3 &color) {
    const double ls = std::log(0.5 * spacing);
    obj.cloud.add(p, {ls, ls, ls}, Quaternion::identity(), logit(kSurfelOpacity), color);
}

// Rectangle spanned by unit axes u, v around `center`, size a × b.
void add_rect(ToyObject &obj, const Vec3 &center, const Vec3 &u, const Vec3 &v, double a, double b, double spacing,
              const Vec3 &color, std::mt19937_64 &rng) {
    const int nu = std::max(1, static_cast<int>(std::lround(a / spacing)));
    const int nv = std::max(1, static_cast<int>(std::lround(b / spacing)));
    for (int i = 0; i < nu; ++i) {
        for (int j = 0; j < nv; ++j) {
            const double su = (i + 0.5) * a / nu, sv = (j + 0.5) * b / nv;
            const Vec3 p = center + (su - 0.5 * a) * u + (sv - 0.5 * b) * v;
            const bool odd = ((static_cast<long>(std::floor(su / kCheckerCell)) +
                               static_cast<long>(std::floor(sv / kCheckerCell))) & 1) != 0;
            add_surfel(obj, p, spacing, textured(color, odd, rng));
        }
    }
    // Surface samples on a grid twice as fine.
    const int mu = 2 * nu, mv = 2 * nv;
    for (int i = 0; i < mu; ++i) {
        for (int j = 0; j < mv; ++j) {
            obj.surface_points.push_back(center + ((i + 0.5) / mu - 0.5) * a * u + ((j + 0.5) / mv - 0.5) * b * v);
        }
    }
}

void finish(ToyObject &obj) {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (const Vec3 &p : obj.surface_points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    obj.extent = (hi - lo).norm();
}

const std::vector<Vec3> kBodyColors = {{0.80, 0.30, 0.20}, {0.30, 0.75, 0.30}, {0.25, 0.35, 0.85},
                                       {0.85, 0.80, 0.25}, {0.75, 0.30, 0.70}, {0.30, 0.75, 0.80}};
const Vec3 kPanelColor{0.35, 0.45, 0.90};

} // namespace

void add_box_surfels(ToyObject &obj, const Vec3 &center, const Vec3 &size, double spacing,
                     const std::vector<Vec3> &face_colors, std::uint64_t seed) {
    if (!(spacing > 0.0)) {
        throw std::invalid_argument("add_box_surfels: spacing must be positive");
    }
    if (face_colors.size() != 6) {
        throw std::invalid_argument("add_box_surfels: six face colors required");
    }
    std::mt19937_64 rng(seed);
    for (int axis = 0; axis < 3; ++axis) {
        const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
        const Vec3 u = Vec3::Unit(ua), v = Vec3::Unit(va);
        for (int side = 0; side < 2; ++side) {
            Vec3 c = center;
            c[axis] += (side == 0 ? -0.5 : 0.5) * size[axis];
            add_rect(obj, c, u, v, size[ua], size[va], spacing, face_colors[2 * axis + side], rng);
        }
    }
}

ToyObject make_toy_object(ToyKind kind, double spacing, std::uint64_t seed) {
    if (!(spacing > 0.0)) {
        throw std::invalid_argument("make_toy_object: spacing must be positive");
    }
    ToyObject obj;
    obj.kind = kind;
    std::mt19937_64 rng(seed ^ 0x5bd1e995ull);
    switch (kind) {
    case ToyKind::CuboidSat:
        add_box_surfels(obj, Vec3::Zero(), {1.6, 1.2, 2.0}, spacing, kBodyColors, seed);
        add_rect(obj, {1.8, 0.0, 0.0}, Vec3::UnitX(), Vec3::UnitZ(), 2.0, 1.0, spacing, kPanelColor, rng);
        break;
    case ToyKind::TwoPanelSat:
        add_box_surfels(obj, Vec3::Zero(), {1.2, 1.2, 1.6}, spacing, kBodyColors, seed);
        add_rect(obj, {1.5, 0.0, 0.0}, Vec3::UnitX(), Vec3::UnitZ(), 1.8, 0.8, spacing, kPanelColor, rng);
        add_rect(obj, {-1.5, 0.0, 0.0}, Vec3::UnitX(), Vec3::UnitZ(), 1.8, 0.8, spacing, {0.90, 0.55, 0.20}, rng);
        break;
    case ToyKind::TexturedSphere: {
        const double r = 1.5;
        const double area = 4.0 * std::numbers::pi * r * r;
        const auto fibonacci = [&](int n, auto &&emit) {
            const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
            for (int i = 0; i < n; ++i) {
                const double z = 1.0 - 2.0 * (i + 0.5) / n;
                const double rho = std::sqrt(1.0 - z * z);
                emit(r * Vec3(rho * std::cos(golden * i), rho * std::sin(golden * i), z));
            }
        };
        const int n = std::max(4, static_cast<int>(std::lround(area / (spacing * spacing))));
        fibonacci(n, [&](const Vec3 &p) {
            const double lon = std::atan2(p.y(), p.x()) + std::numbers::pi;
            const double lat = std::acos(std::clamp(p.z() / r, -1.0, 1.0));
            const int sector = static_cast<int>(lon / (2.0 * std::numbers::pi) * 6.0) % 6;
            const bool odd = ((static_cast<int>(lon / 0.35) + static_cast<int>(lat / 0.35)) & 1) != 0;
            add_surfel(obj, p, spacing, textured(kBodyColors[sector], odd, rng));
        });
        fibonacci(4 * n, [&](const Vec3 &p) { obj.surface_points.push_back(p); });
        break;
    }
    case ToyKind::UnitCube:
        add_box_surfels(obj, Vec3::Zero(), Vec3::Ones(), spacing, kBodyColors, seed);
        break;
    }
    finish(obj);
    return obj;
}

FrameObservation render_observation(const GaussianCloud &cloud, const Pose &pose, const CameraIntrinsics &intr,
                                    const RenderConfig &cfg, int index) {
    const RenderOutput r = render_reference(cloud, pose, intr, cfg);
    FrameObservation f = make_empty_frame(intr.height, intr.width, index);
    f.color = r.color;
    for (int y = 0; y < intr.height; ++y) {
        for (int x = 0; x < intr.width; ++x) {
            const double a = r.alpha(y, x);
            if (a > 0.5) {
                f.mask(y, x) = 1;
                f.depth(y, x) = r.depth(y, x) / a;
            }
        }
    }
    f.gt_pose = pose;
    return f;
}

SequenceMeta generate_sequence(const ToyObject &obj, const std::vector<Pose> &trajectory,
                               const CameraIntrinsics &intr, const fs::path &out, const GenerateOptions &opts) {
    intr.validate();
    if (opts.noise) {
        opts.noise->validate();
    }
    SequenceMeta meta;
    meta.intr = intr;
    meta.frame_count = static_cast<int>(trajectory.size());
    meta.depth_scale_mm = opts.depth_scale_mm;
    meta.noise = opts.noise;
    std::vector<FrameObservation> frames;
    frames.reserve(trajectory.size());
    for (std::size_t i = 0; i < trajectory.size(); ++i) {
        FrameObservation f = render_observation(obj.cloud, trajectory[i], intr, opts.render, static_cast<int>(i));
        if (opts.noise) {
            f = add_noise(f, *opts.noise);
        }
        frames.push_back(quantize_frame(f, meta.depth_scale_mm));
    }
    save_sequence(out, meta, frames, opts.generator_json);
    save_points_ply(obj.surface_points, out / "gt_points.ply");
    save_ply(obj.cloud, out / "gt_cloud.ply");
    return meta;
}

} // namespace gstrack
