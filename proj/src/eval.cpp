// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/eval.hpp"

#include "gstrack/dataio.hpp"
#include "gstrack/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace gstrack {

namespace {
constexpr std::uint32_t kLeafSize = 8;
}

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    if (!points_.empty()) {
        nodes_.reserve(2 * points_.size() / kLeafSize + 2);
        build(0, static_cast<std::uint32_t>(points_.size()));
    }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({});
    if (end - begin <= kLeafSize) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }
    Vec3 lo = points_[order_[begin]], hi = lo;
    for (std::uint32_t i = begin; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

void KdTree::search(std::int32_t id, const Vec3 &q, std::size_t &best, double &best_d2) const {
    const Node &n = nodes_[id];
    if (n.axis < 0) {
        for (std::uint32_t i = n.begin; i < n.end; ++i) {
            const double d2 = (points_[order_[i]] - q).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && order_[i] < best)) {
                best_d2 = d2;
                best = order_[i];
            }
        }
        return;
    }
    const double diff = q[n.axis] - n.split;
    const std::int32_t near = diff < 0.0 ? n.left : n.right;
    const std::int32_t far = diff < 0.0 ? n.right : n.left;
    search(near, q, best, best_d2);
    if (diff * diff <= best_d2) {
        search(far, q, best, best_d2);
    }
}

std::pair<std::size_t, double> KdTree::nearest(const Vec3 &q) const {
    if (points_.empty()) {
        throw std::logic_error("KdTree::nearest on an empty tree");
    }
    std::size_t best = std::numeric_limits<std::size_t>::max();
    double best_d2 = std::numeric_limits<double>::infinity();
    search(0, q, best, best_d2);
    return {best, std::sqrt(best_d2)};
}

namespace {

double mean_nn_distance(const std::vector<Vec3> &from, const KdTree &to) {
    std::vector<double> d(from.size());
    parallel_for(from.size(), [&](int, std::size_t i) { d[i] = to.nearest(from[i]).second; });
    // Summed in index order so the result does not depend on the worker count.
    double s = 0.0;
    for (double v : d) s += v;
    return s / static_cast<double>(from.size());
}

std::vector<Vec3> subsample(const std::vector<Vec3> &pts, std::size_t n, std::mt19937_64 &rng) {
    if (pts.size() <= n) {
        return pts;
    }
    std::vector<Vec3> out;
    out.reserve(n);
    std::sample(pts.begin(), pts.end(), std::back_inserter(out), n, rng);
    return out;
}

} // namespace

double chamfer_exact(const std::vector<Vec3> &a, const std::vector<Vec3> &b) {
    if (a.empty() || b.empty()) {
        throw std::invalid_argument("chamfer: point sets must be non-empty");
    }
    const KdTree ta(a), tb(b);
    return 0.5 * mean_nn_distance(a, tb) + 0.5 * mean_nn_distance(b, ta);
}

ChamferResult chamfer(const std::vector<Vec3> &a, const std::vector<Vec3> &b, std::size_t samples,
                      std::uint64_t seed, int resamplings) {
    if (a.empty() || b.empty()) {
        throw std::invalid_argument("chamfer: point sets must be non-empty");
    }
    if (samples == 0 || resamplings < 1) {
        throw std::invalid_argument("chamfer: samples and resamplings must be positive");
    }
    ChamferResult r;
    for (int k = 0; k < resamplings; ++k) {
        std::mt19937_64 rng(seed * 1000003ull + static_cast<std::uint64_t>(k));
        const auto sa = subsample(a, samples, rng);
        const auto sb = subsample(b, samples, rng);
        r.values.push_back(chamfer_exact(sa, sb));
    }
    r.mean = std::accumulate(r.values.begin(), r.values.end(), 0.0) / resamplings;
    if (resamplings > 1) {
        double ss = 0.0;
        for (double v : r.values) ss += (v - r.mean) * (v - r.mean);
        r.std = std::sqrt(ss / (resamplings - 1));
    }
    return r;
}

std::vector<PoseError> pose_errors(const std::vector<Pose> &est, const std::vector<Pose> &gt) {
    if (est.size() != gt.size()) {
        throw std::invalid_argument("pose_errors: trajectories differ in length");
    }
    std::vector<PoseError> out(est.size());
    for (std::size_t i = 0; i < est.size(); ++i) {
        out[i].t_err = (est[i].translation - gt[i].translation).norm();
        out[i].theta_err_deg = rotation_distance(est[i].rotation, gt[i].rotation) * 180.0 / std::numbers::pi;
    }
    return out;
}

std::vector<int> checkpoint_frames(int n) {
    std::vector<int> out;
    if (n <= 1) {
        return {0};
    }
    for (int k : {0, n / 4, n / 2, n}) {
        if (k >= 0 && (out.empty() || out.back() != k)) {
            out.push_back(k);
        }
    }
    return out;
}

std::string checkpoint_label(int frame) { return "CD@" + std::to_string(frame); }

using nlohmann::ordered_json;

std::string metrics_to_json(const MetricsReport &r) {
    ordered_json j;
    ordered_json chamf = ordered_json::array();
    for (const auto &c : r.chamfer) {
        chamf.push_back({{"label", checkpoint_label(c.frame)}, {"frame", c.frame}, {"mean", c.mean}, {"std", c.std}});
    }
    j["chamfer"] = chamf;
    ordered_json errs = ordered_json::array();
    for (std::size_t i = 0; i < r.errors.size(); ++i) {
        errs.push_back({{"frame", r.frames.at(i)},
                        {"t_err", r.errors[i].t_err},
                        {"theta_err_deg", r.errors[i].theta_err_deg}});
    }
    j["pose_errors"] = errs;
    ordered_json timing = ordered_json::object();
    for (const auto &[k, v] : r.timing) {
        timing[k] = v;
    }
    j["timing"] = timing;
    return j.dump(2) + "\n";
}

MetricsReport metrics_from_json(const std::string &text) {
    const auto j = nlohmann::json::parse(text);
    MetricsReport r;
    for (const auto &c : j.at("chamfer")) {
        r.chamfer.push_back({c.at("frame").get<int>(), c.at("mean").get<double>(), c.at("std").get<double>()});
    }
    for (const auto &e : j.at("pose_errors")) {
        r.frames.push_back(e.at("frame").get<int>());
        r.errors.push_back({e.at("t_err").get<double>(), e.at("theta_err_deg").get<double>()});
    }
    for (const auto &[k, v] : j.at("timing").items()) {
        r.timing[k] = v.get<double>();
    }
    return r;
}

void emit_report(const MetricsReport &r, const std::filesystem::path &dir) {
    if (r.frames.size() != r.errors.size()) {
        throw std::invalid_argument("emit_report: frames and errors differ in length");
    }
    std::filesystem::create_directories(dir);
    write_text_file(dir / "metrics.json", metrics_to_json(r));
    std::ostringstream pe;
    pe << std::setprecision(17) << "frame,t_err_m,theta_err_deg\n";
    for (std::size_t i = 0; i < r.errors.size(); ++i) {
        pe << r.frames[i] << ',' << r.errors[i].t_err << ',' << r.errors[i].theta_err_deg << '\n';
    }
    write_text_file(dir / "pose_errors.csv", pe.str());
    std::ostringstream cd;
    cd << std::setprecision(17) << "label,frame,mean,std\n";
    for (const auto &c : r.chamfer) {
        cd << checkpoint_label(c.frame) << ',' << c.frame << ',' << c.mean << ',' << c.std << '\n';
    }
    write_text_file(dir / "chamfer.csv", cd.str());
}

} // namespace gstrack
