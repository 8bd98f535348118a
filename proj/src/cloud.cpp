// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace gstrack {

const char *group_name(ParamGroup g) {
    switch (g) {
    case ParamGroup::Means:
        return "means";
    case ParamGroup::LogScales:
        return "log_scales";
    case ParamGroup::Rotations:
        return "rotations";
    case ParamGroup::OpacityLogits:
        return "opacity_logits";
    case ParamGroup::Colors:
        return "colors";
    }
    return "?";
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

void GaussianCloud::reserve(std::size_t n) {
    means_.reserve(3 * n);
    log_scales_.reserve(3 * n);
    rotations_.reserve(4 * n);
    opacity_logits_.reserve(n);
    colors_.reserve(3 * n);
}

std::size_t GaussianCloud::add(const Vec3 &mean, const Vec3 &log_scale, const Quaternion &rotation,
                               double opacity_logit, const Vec3 &color) {
    means_.insert(means_.end(), {mean.x(), mean.y(), mean.z()});
    log_scales_.insert(log_scales_.end(), {log_scale.x(), log_scale.y(), log_scale.z()});
    rotations_.insert(rotations_.end(), {rotation.w, rotation.x, rotation.y, rotation.z});
    opacity_logits_.push_back(opacity_logit);
    colors_.insert(colors_.end(), {color.x(), color.y(), color.z()});
    return size() - 1;
}

void GaussianCloud::set_mean(std::size_t i, const Vec3 &m) {
    std::copy(m.data(), m.data() + 3, means_.begin() + static_cast<std::ptrdiff_t>(3 * i));
}

void GaussianCloud::set_log_scale(std::size_t i, const Vec3 &s) {
    std::copy(s.data(), s.data() + 3, log_scales_.begin() + static_cast<std::ptrdiff_t>(3 * i));
}

void GaussianCloud::set_rotation(std::size_t i, const Quaternion &q) {
    rotations_[4 * i] = q.w;
    rotations_[4 * i + 1] = q.x;
    rotations_[4 * i + 2] = q.y;
    rotations_[4 * i + 3] = q.z;
}

void GaussianCloud::set_color(std::size_t i, const Vec3 &c) {
    std::copy(c.data(), c.data() + 3, colors_.begin() + static_cast<std::ptrdiff_t>(3 * i));
}

std::span<double> GaussianCloud::params(ParamGroup g) {
    switch (g) {
    case ParamGroup::Means:
        return means_;
    case ParamGroup::LogScales:
        return log_scales_;
    case ParamGroup::Rotations:
        return rotations_;
    case ParamGroup::OpacityLogits:
        return opacity_logits_;
    case ParamGroup::Colors:
        return colors_;
    }
    throw std::logic_error("unknown parameter group");
}

std::span<const double> GaussianCloud::params(ParamGroup g) const {
    return const_cast<GaussianCloud *>(this)->params(g);
}

namespace {

void compact_array(std::vector<double> &a, const std::vector<bool> &keep, std::size_t width) {
    std::size_t out = 0;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) {
            continue;
        }
        if (out != i) {
            std::copy_n(a.begin() + static_cast<std::ptrdiff_t>(i * width), width,
                        a.begin() + static_cast<std::ptrdiff_t>(out * width));
        }
        ++out;
    }
    a.resize(out * width);
}

} // namespace

void GaussianCloud::compact(const std::vector<bool> &keep) {
    if (keep.size() != size()) {
        throw std::invalid_argument("compact: keep mask length mismatch");
    }
    compact_array(means_, keep, 3);
    compact_array(log_scales_, keep, 3);
    compact_array(rotations_, keep, 4);
    compact_array(opacity_logits_, keep, 1);
    compact_array(colors_, keep, 3);
}

void GaussianCloud::append(const GaussianCloud &o) {
    means_.insert(means_.end(), o.means_.begin(), o.means_.end());
    log_scales_.insert(log_scales_.end(), o.log_scales_.begin(), o.log_scales_.end());
    rotations_.insert(rotations_.end(), o.rotations_.begin(), o.rotations_.end());
    opacity_logits_.insert(opacity_logits_.end(), o.opacity_logits_.begin(), o.opacity_logits_.end());
    colors_.insert(colors_.end(), o.colors_.begin(), o.colors_.end());
}

void GaussianCloud::normalize_rotations() {
    for (std::size_t i = 0; i < size(); ++i) {
        set_rotation(i, rotation(i).normalized());
    }
}

std::vector<Vec3> GaussianCloud::means() const {
    std::vector<Vec3> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) {
        out.push_back(mean(i));
    }
    return out;
}

double GaussianCloud::extent() const {
    if (empty()) {
        return 0.0;
    }
    Vec3 lo = mean(0), hi = mean(0);
    for (std::size_t i = 1; i < size(); ++i) {
        lo = lo.cwiseMin(mean(i));
        hi = hi.cwiseMax(mean(i));
    }
    return (hi - lo).norm();
}

void GaussianCloud::validate() const {
    const std::size_t n = size();
    if (means_.size() != 3 * n || log_scales_.size() != 3 * n || rotations_.size() != 4 * n ||
        colors_.size() != 3 * n) {
        throw std::logic_error("GaussianCloud: array lengths disagree");
    }
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 s = scale(i);
        if (!s.allFinite() || (s.array() <= 0.0).any()) {
            throw std::logic_error("GaussianCloud: non-positive or non-finite scale at " + std::to_string(i));
        }
        if (!std::isfinite(opacity_logits_[i]) || !mean(i).allFinite() || !(rotation(i).norm() > 0.0)) {
            throw std::logic_error("GaussianCloud: non-finite parameter at " + std::to_string(i));
        }
    }
}

CloudGradients::CloudGradients(std::size_t n)
    : means(3 * n, 0.0), log_scales(3 * n, 0.0), rotations(4 * n, 0.0), opacity_logits(n, 0.0),
      colors(3 * n, 0.0) {}

std::span<double> CloudGradients::group(ParamGroup g) {
    switch (g) {
    case ParamGroup::Means:
        return means;
    case ParamGroup::LogScales:
        return log_scales;
    case ParamGroup::Rotations:
        return rotations;
    case ParamGroup::OpacityLogits:
        return opacity_logits;
    case ParamGroup::Colors:
        return colors;
    }
    throw std::logic_error("unknown parameter group");
}

std::span<const double> CloudGradients::group(ParamGroup g) const {
    return const_cast<CloudGradients *>(this)->group(g);
}

void CloudGradients::set_zero() {
    for (auto g : kAllGroups) {
        auto s = group(g);
        std::fill(s.begin(), s.end(), 0.0);
    }
}

Mat3 covariance_of(const GaussianCloud &cloud, std::size_t i) {
    const Mat3 r = cloud.rotation(i).to_matrix();
    const Vec3 s = cloud.scale(i);
    const Mat3 m = r * s.asDiagonal();
    return m * m.transpose();
}

namespace {

void seed_pixel(GaussianCloud &cloud, const FrameObservation &frame, const CameraIntrinsics &intr,
                const Pose &object_from_camera, int y, int x) {
    const Vec3 p_c = deproject(intr, x, y, frame.depth(y, x));
    const Vec3 p_o = transform_to_camera(object_from_camera, p_c);
    const double ls = 0.5 * std::log(kInitVariance);
    cloud.add(p_o, Vec3::Constant(ls), Quaternion::identity(), logit(kInitOpacity),
              {frame.color(y, x, 0), frame.color(y, x, 1), frame.color(y, x, 2)});
}

} // namespace

GaussianCloud init_from_rgbd(const FrameObservation &frame, const CameraIntrinsics &intr, const Pose &pose,
                             int stride) {
    if (stride < 1) {
        throw std::invalid_argument("init_from_rgbd: stride must be >= 1");
    }
    frame.validate();
    GaussianCloud cloud;
    const Pose inv = pose.inverse();
    for (int y = 0; y < frame.height(); y += stride) {
        for (int x = 0; x < frame.width(); x += stride) {
            if (frame.valid(y, x)) {
                seed_pixel(cloud, frame, intr, inv, y, x);
            }
        }
    }
    return cloud;
}

std::size_t densify(GaussianCloud &cloud, const FrameObservation &frame, const ImageD &rendered_depth,
                    const ImageD &rendered_alpha, const Pose &pose, const CameraIntrinsics &intr,
                    const DensifyOptions &opts) {
    if (!rendered_depth.same_extent(frame.depth) || !rendered_alpha.same_extent(frame.depth)) {
        throw std::invalid_argument("densify: rendered images do not match the frame resolution");
    }
    if (opts.stride < 1) {
        throw std::invalid_argument("densify: stride must be >= 1");
    }
    double d_min = std::numeric_limits<double>::infinity();
    double d_max = -d_min;
    for (int y = 0; y < frame.height(); ++y) {
        for (int x = 0; x < frame.width(); ++x) {
            if (frame.valid(y, x)) {
                d_min = std::min(d_min, frame.depth(y, x));
                d_max = std::max(d_max, frame.depth(y, x));
            }
        }
    }
    if (d_max < d_min) {
        return 0;
    }
    const double threshold = opts.depth_fraction * (d_max - d_min);
    const Pose inv = pose.inverse();
    const std::size_t before = cloud.size();
    for (int y = 0; y < frame.height(); y += opts.stride) {
        for (int x = 0; x < frame.width(); x += opts.stride) {
            if (!frame.valid(y, x)) {
                continue;
            }
            const double a = rendered_alpha(y, x);
            const bool uncovered = !(a >= opts.alpha_floor) || a <= 0.0;
            if (uncovered || std::abs(rendered_depth(y, x) / a - frame.depth(y, x)) > threshold) {
                seed_pixel(cloud, frame, intr, inv, y, x);
            }
        }
    }
    return cloud.size() - before;
}

std::size_t prune(GaussianCloud &cloud, double threshold) {
    std::vector<bool> keep(cloud.size());
    std::size_t removed = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        keep[i] = !(cloud.opacity(i) < threshold);
        removed += keep[i] ? 0 : 1;
    }
    if (removed > 0) {
        cloud.compact(keep);
    }
    return removed;
}

namespace {

constexpr const char *kPlyProps[] = {"x",     "y",     "z",     "scale_0", "scale_1", "scale_2", "rot_0",
                                     "rot_1", "rot_2", "rot_3", "opacity", "red",     "green",   "blue"};

} // namespace

void save_ply(const GaussianCloud &cloud, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n";
    for (const char *p : kPlyProps) {
        out << "property double " << p << "\n";
    }
    out << "end_header\n";
    out << std::setprecision(17);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 m = cloud.mean(i), s = cloud.log_scale(i), c = cloud.color(i);
        const Quaternion q = cloud.rotation(i);
        out << m.x() << ' ' << m.y() << ' ' << m.z() << ' ' << s.x() << ' ' << s.y() << ' ' << s.z() << ' ' << q.w
            << ' ' << q.x << ' ' << q.y << ' ' << q.z << ' ' << cloud.opacity_logit(i) << ' ' << c.x() << ' '
            << c.y() << ' ' << c.z() << '\n';
    }
    if (!out) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

namespace {

struct PlyHeader {
    std::size_t count = 0;
    std::vector<std::string> props;
};

PlyHeader read_ply_header(std::istream &in, const std::filesystem::path &path) {
    std::string line;
    std::getline(in, line);
    if (line != "ply") {
        throw std::runtime_error(path.string() + ": not a PLY file");
    }
    PlyHeader h;
    bool in_vertex = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "ascii") {
                throw std::runtime_error(path.string() + ": only ASCII PLY is supported");
            }
        } else if (word == "element") {
            std::string name;
            ls >> name;
            in_vertex = name == "vertex";
            if (in_vertex) {
                ls >> h.count;
            }
        } else if (word == "property" && in_vertex) {
            std::string type, name;
            ls >> type >> name;
            h.props.push_back(name);
        } else if (word == "end_header") {
            return h;
        }
    }
    throw std::runtime_error(path.string() + ": missing end_header");
}

} // namespace

GaussianCloud load_ply(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    const PlyHeader header = read_ply_header(in, path);
    const std::size_t count = header.count;
    const std::vector<std::string> &props = header.props;
    std::vector<int> column(std::size(kPlyProps), -1);
    for (std::size_t k = 0; k < std::size(kPlyProps); ++k) {
        for (std::size_t c = 0; c < props.size(); ++c) {
            if (props[c] == kPlyProps[k]) {
                column[k] = static_cast<int>(c);
            }
        }
        if (column[k] < 0) {
            throw std::runtime_error(path.string() + ": missing vertex property " + kPlyProps[k]);
        }
    }
    GaussianCloud cloud;
    cloud.reserve(count);
    std::vector<double> row(props.size());
    for (std::size_t i = 0; i < count; ++i) {
        for (auto &v : row) {
            if (!(in >> v)) {
                throw std::runtime_error(path.string() + ": truncated vertex data at row " + std::to_string(i));
            }
        }
        auto at = [&](std::size_t k) { return row[static_cast<std::size_t>(column[k])]; };
        cloud.add({at(0), at(1), at(2)}, {at(3), at(4), at(5)}, {at(6), at(7), at(8), at(9)}, at(10),
                  {at(11), at(12), at(13)});
    }
    return cloud;
}

void save_points_ply(const std::vector<Vec3> &points, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
        << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
    out << std::setprecision(17);
    for (const Vec3 &p : points) {
        out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
    }
    if (!out) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

std::vector<Vec3> load_points_ply(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    const PlyHeader header = read_ply_header(in, path);
    int cols[3] = {-1, -1, -1};
    for (std::size_t c = 0; c < header.props.size(); ++c) {
        for (int k = 0; k < 3; ++k) {
            if (header.props[c] == std::string(1, static_cast<char>('x' + k))) {
                cols[k] = static_cast<int>(c);
            }
        }
    }
    if (cols[0] < 0 || cols[1] < 0 || cols[2] < 0) {
        throw std::runtime_error(path.string() + ": missing x/y/z vertex properties");
    }
    std::vector<Vec3> points;
    points.reserve(header.count);
    std::vector<double> row(header.props.size());
    for (std::size_t i = 0; i < header.count; ++i) {
        for (auto &v : row) {
            if (!(in >> v)) {
                throw std::runtime_error(path.string() + ": truncated vertex data at row " + std::to_string(i));
            }
        }
        points.emplace_back(row[cols[0]], row[cols[1]], row[cols[2]]);
    }
    return points;
}

} // namespace gstrack
