// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/raster.hpp"

#include "gstrack/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gstrack {

using raster_detail::ProjectionRecord;
using raster_detail::Splat;

void RenderConfig::validate() const {
    if (tile_size < 1) {
        throw std::invalid_argument("RenderConfig: tile_size must be positive");
    }
    if (!(alpha_min > 0.0 && alpha_min < alpha_max && alpha_max <= 1.0)) {
        throw std::invalid_argument("RenderConfig: require 0 < alpha_min < alpha_max <= 1");
    }
    if (!(transmittance_floor > 0.0 && transmittance_floor < 1.0)) {
        throw std::invalid_argument("RenderConfig: transmittance_floor must lie in (0, 1)");
    }
    if (!(dilation >= 0.0)) {
        throw std::invalid_argument("RenderConfig: dilation must be non-negative");
    }
}

namespace {

struct Projection {
    Splat2D splat;
    Mat23 jacobian;
    Mat3 cov_cam;
};

std::optional<Projection> project_full(const Vec3 &mean_c, const Mat3 &cov_obj, const Mat3 &w,
                                       const CameraIntrinsics &intr, const RenderConfig &cfg) {
    if (!(mean_c.z() > intr.near)) {
        return std::nullopt;
    }
    Projection p;
    p.jacobian = projection_jacobian(intr, mean_c);
    p.cov_cam = w * cov_obj * w.transpose();
    p.splat.center = project_point(intr, mean_c);
    p.splat.covariance = p.jacobian * p.cov_cam * p.jacobian.transpose();
    p.splat.covariance.diagonal().array() += cfg.dilation;
    return p;
}

// Shared by every compositing loop so that the tiled renderer, the oracle and
// the backward pass agree bit for bit on which contributions exist.
inline bool splat_alpha(const Splat &s, double px, double py, const RenderConfig &cfg, double &alpha,
                        double &gauss, bool &clamped) {
    const double dx = s.cx - px;
    const double dy = s.cy - py;
    const double power = -0.5 * (s.ca * dx * dx + s.cc * dy * dy) - s.cb * dx * dy;
    if (power > 0.0 || power < s.min_power) {
        return false;
    }
    gauss = std::exp(power);
    const double raw = s.opacity * gauss;
    clamped = raw > cfg.alpha_max;
    alpha = clamped ? cfg.alpha_max : raw;
    return alpha >= cfg.alpha_min;
}

struct PixelBox {
    int x0, x1, y0, y1; // inclusive
    bool empty() const { return x0 > x1 || y0 > y1; }
};

// Pixels where opacity·exp(power) can reach alpha_min: the ellipse
// ΔᵀΣ⁻¹Δ <= 2·log(opacity / alpha_min).
PixelBox support_box(const Splat &s, const Mat2 &cov2d, int width, int height) {
    const double level = -2.0 * s.min_power;
    const double rx = std::sqrt(level * cov2d(0, 0)) + 1e-6;
    const double ry = std::sqrt(level * cov2d(1, 1)) + 1e-6;
    const double x0 = std::floor(s.cx - rx), x1 = std::ceil(s.cx + rx);
    const double y0 = std::floor(s.cy - ry), y1 = std::ceil(s.cy + ry);
    if (!(x1 >= 0.0 && y1 >= 0.0 && x0 <= width - 1.0 && y0 <= height - 1.0)) {
        return {0, -1, 0, -1};
    }
    return {static_cast<int>(std::max(0.0, x0)), static_cast<int>(std::min(width - 1.0, x1)),
            static_cast<int>(std::max(0.0, y0)), static_cast<int>(std::min(height - 1.0, y1))};
}

struct Projected {
    Splat splat;
    ProjectionRecord record;
    PixelBox box;
    bool visible = false;
};

std::vector<Projected> project_cloud(const GaussianCloud &cloud, const Pose &pose, const CameraIntrinsics &intr,
                                     const RenderConfig &cfg) {
    const Mat3 w = pose.rotation_matrix();
    std::vector<Projected> out(cloud.size());
    parallel_for(cloud.size(), [&](int, std::size_t i) {
        Projected &p = out[i];
        const double opacity = cloud.opacity(i);
        if (!(opacity > cfg.alpha_min)) {
            return;
        }
        const Vec3 mean_c = w * cloud.mean(i) + pose.translation;
        const auto proj = project_full(mean_c, covariance_of(cloud, i), w, intr, cfg);
        if (!proj) {
            return;
        }
        const Mat2 &cov = proj->splat.covariance;
        const double det = cov.determinant();
        if (!(det > 0.0)) {
            return;
        }
        const Mat2 conic = Mat2{{cov(1, 1), -cov(0, 1)}, {-cov(1, 0), cov(0, 0)}} / det;
        const Vec3 c = cloud.color(i).cwiseMax(0.0).cwiseMin(1.0);
        p.splat = {proj->splat.center.x(),
                   proj->splat.center.y(),
                   conic(0, 0),
                   0.5 * (conic(0, 1) + conic(1, 0)),
                   conic(1, 1),
                   opacity,
                   std::log(cfg.alpha_min / opacity),
                   c.x(),
                   c.y(),
                   c.z(),
                   mean_c.z(),
                   static_cast<std::uint32_t>(i)};
        p.record = {mean_c, proj->jacobian, proj->cov_cam, conic};
        p.box = support_box(p.splat, cov, intr.width, intr.height);
        p.visible = !p.box.empty();
    });
    return out;
}

bool depth_order(const Splat &a, const Splat &b) {
    return a.depth < b.depth || (a.depth == b.depth && a.id < b.id);
}

RenderOutput blank_output(const CameraIntrinsics &intr, const RenderConfig &cfg) {
    RenderOutput out;
    out.color = ImageD(intr.height, intr.width, 3);
    out.depth = ImageD(intr.height, intr.width, 1);
    out.alpha = ImageD(intr.height, intr.width, 1);
    for (int y = 0; y < intr.height; ++y) {
        for (int x = 0; x < intr.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.color(y, x, c) = cfg.background[c];
            }
        }
    }
    return out;
}

} // namespace

std::optional<Splat2D> project_gaussian(const Vec3 &mean_c, const Mat3 &cov_obj, const Mat3 &pose_rotation,
                                        const CameraIntrinsics &intr, const RenderConfig &cfg) {
    const auto p = project_full(mean_c, cov_obj, pose_rotation, intr, cfg);
    if (!p) {
        return std::nullopt;
    }
    return p->splat;
}

PoseVector pose_to_vector(const Pose &pose) {
    PoseVector v;
    v << pose.translation, pose.rotation.w, pose.rotation.x, pose.rotation.y, pose.rotation.z;
    return v;
}

Pose pose_from_vector(const PoseVector &v) {
    return {{v[3], v[4], v[5], v[6]}, v.head<3>()};
}

RenderOutput render(const GaussianCloud &cloud, const Pose &pose, const CameraIntrinsics &intr,
                    const RenderConfig &cfg) {
    intr.validate();
    cfg.validate();
    RenderOutput out = blank_output(intr, cfg);
    RasterState &st = out.state;
    st.cloud_size = cloud.size();
    st.pose = pose;
    st.intr = intr;
    st.cfg = cfg;
    st.valid = true;

    std::vector<Projected> projected = project_cloud(cloud, pose, intr, cfg);
    std::vector<std::uint32_t> order;
    order.reserve(projected.size());
    for (std::size_t i = 0; i < projected.size(); ++i) {
        if (projected[i].visible) {
            order.push_back(static_cast<std::uint32_t>(i));
        }
    }
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) { return depth_order(projected[a].splat, projected[b].splat); });
    st.splats.reserve(order.size());
    st.records.reserve(order.size());
    for (std::uint32_t i : order) {
        st.splats.push_back(projected[i].splat);
        st.records.push_back(projected[i].record);
    }

    // Bin into tiles; pushing in sorted order keeps every tile list sorted.
    const int ts = cfg.tile_size;
    st.tiles_x = (intr.width + ts - 1) / ts;
    st.tiles_y = (intr.height + ts - 1) / ts;
    const std::size_t tiles = static_cast<std::size_t>(st.tiles_x) * st.tiles_y;
    std::vector<std::uint32_t> counts(tiles + 1, 0);
    auto for_tiles = [&](const PixelBox &b, auto &&fn) {
        for (int ty = b.y0 / ts; ty <= b.y1 / ts; ++ty) {
            for (int tx = b.x0 / ts; tx <= b.x1 / ts; ++tx) {
                fn(static_cast<std::size_t>(ty) * st.tiles_x + tx);
            }
        }
    };
    for (std::uint32_t i : order) {
        for_tiles(projected[i].box, [&](std::size_t t) { ++counts[t + 1]; });
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    st.tile_offsets = counts;
    st.tile_entries.resize(st.tile_offsets.back());
    std::vector<std::uint32_t> cursor(st.tile_offsets.begin(), st.tile_offsets.end() - 1);
    for (std::size_t k = 0; k < order.size(); ++k) {
        for_tiles(projected[order[k]].box, [&](std::size_t t) { st.tile_entries[cursor[t]++] = static_cast<std::uint32_t>(k); });
    }

    const std::size_t npix = static_cast<std::size_t>(intr.width) * intr.height;
    st.final_transmittance.assign(npix, 1.0);
    st.contributors.assign(npix, 0);

    parallel_for(tiles, [&](int, std::size_t t) {
        const int tx = static_cast<int>(t % st.tiles_x);
        const int ty = static_cast<int>(t / st.tiles_x);
        const std::uint32_t begin = st.tile_offsets[t];
        const std::uint32_t end = st.tile_offsets[t + 1];
        const int y_end = std::min(intr.height, (ty + 1) * ts);
        const int x_end = std::min(intr.width, (tx + 1) * ts);
        for (int y = ty * ts; y < y_end; ++y) {
            for (int x = tx * ts; x < x_end; ++x) {
                double t_acc = 1.0;
                double cr = 0.0, cg = 0.0, cb = 0.0, d = 0.0;
                std::uint32_t consumed = 0;
                for (std::uint32_t e = begin; e < end; ++e) {
                    const Splat &s = st.splats[st.tile_entries[e]];
                    double alpha, gauss;
                    bool clamped;
                    if (!splat_alpha(s, x, y, cfg, alpha, gauss, clamped)) {
                        continue;
                    }
                    const double next = t_acc * (1.0 - alpha);
                    if (next < cfg.transmittance_floor) {
                        break;
                    }
                    const double wgt = alpha * t_acc;
                    cr += wgt * s.r;
                    cg += wgt * s.g;
                    cb += wgt * s.b;
                    d += wgt * s.depth;
                    t_acc = next;
                    consumed = e - begin + 1;
                }
                const std::size_t p = static_cast<std::size_t>(y) * intr.width + x;
                st.final_transmittance[p] = t_acc;
                st.contributors[p] = consumed;
                out.color(y, x, 0) = cr + t_acc * cfg.background[0];
                out.color(y, x, 1) = cg + t_acc * cfg.background[1];
                out.color(y, x, 2) = cb + t_acc * cfg.background[2];
                out.depth(y, x) = d;
                out.alpha(y, x) = 1.0 - t_acc;
            }
        }
    });
    return out;
}

RenderOutput render_reference(const GaussianCloud &cloud, const Pose &pose, const CameraIntrinsics &intr,
                              const RenderConfig &cfg) {
    intr.validate();
    cfg.validate();
    RenderOutput out = blank_output(intr, cfg);

    const Mat3 w = pose.rotation_matrix();
    std::vector<Splat> splats;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double opacity = cloud.opacity(i);
        if (!(opacity > cfg.alpha_min)) {
            continue;
        }
        const Vec3 mean_c = w * cloud.mean(i) + pose.translation;
        const auto s2d = project_gaussian(mean_c, covariance_of(cloud, i), w, intr, cfg);
        if (!s2d) {
            continue;
        }
        const Mat2 &cov = s2d->covariance;
        const double det = cov.determinant();
        if (!(det > 0.0)) {
            continue;
        }
        const Mat2 conic = Mat2{{cov(1, 1), -cov(0, 1)}, {-cov(1, 0), cov(0, 0)}} / det;
        const Vec3 c = cloud.color(i).cwiseMax(0.0).cwiseMin(1.0);
        splats.push_back({s2d->center.x(), s2d->center.y(), conic(0, 0), 0.5 * (conic(0, 1) + conic(1, 0)),
                          conic(1, 1), opacity, std::log(cfg.alpha_min / opacity), c.x(), c.y(), c.z(),
                          mean_c.z(), static_cast<std::uint32_t>(i)});
    }

    struct Hit {
        double alpha;
        const Splat *splat;
    };
    parallel_for(static_cast<std::size_t>(intr.height), [&](int, std::size_t row) {
        const int y = static_cast<int>(row);
        std::vector<Hit> hits;
        for (int x = 0; x < intr.width; ++x) {
            hits.clear();
            for (const Splat &s : splats) {
                double alpha, gauss;
                bool clamped;
                if (splat_alpha(s, x, y, cfg, alpha, gauss, clamped)) {
                    hits.push_back({alpha, &s});
                }
            }
            std::sort(hits.begin(), hits.end(), [](const Hit &a, const Hit &b) { return depth_order(*a.splat, *b.splat); });
            double t_acc = 1.0;
            Vec3 c = Vec3::Zero();
            double d = 0.0;
            for (const Hit &h : hits) {
                const double next = t_acc * (1.0 - h.alpha);
                if (next < cfg.transmittance_floor) {
                    break;
                }
                const double wgt = h.alpha * t_acc;
                c[0] += wgt * h.splat->r;
                c[1] += wgt * h.splat->g;
                c[2] += wgt * h.splat->b;
                d += wgt * h.splat->depth;
                t_acc = next;
            }
            for (int k = 0; k < 3; ++k) {
                out.color(y, x, k) = c[k] + t_acc * cfg.background[k];
            }
            out.depth(y, x) = d;
            out.alpha(y, x) = 1.0 - t_acc;
        }
    });
    return out;
}

namespace {

// Per-splat image-space gradient slots accumulated by the pixel pass.
struct SplatGrad {
    double center[2];
    double conic[3]; // d/d(ca), d/d(cb) (shared off-diagonal), d/d(cc)
    double opacity;
    double color[3];
    double depth;
};

} // namespace

RenderGradients render_backward(const RenderOutput &out, const ImageD &dL_dcolor, const ImageD &dL_ddepth,
                                const GaussianCloud &cloud, const Pose &pose, const CameraIntrinsics &intr,
                                const RenderConfig &cfg) {
    return render_backward(out, dL_dcolor, dL_ddepth, ImageD(), cloud, pose, intr, cfg);
}

RenderGradients render_backward(const RenderOutput &out, const ImageD &dL_dcolor, const ImageD &dL_ddepth,
                                const ImageD &dL_dalpha, const GaussianCloud &cloud, const Pose &pose,
                                const CameraIntrinsics &intr, const RenderConfig &cfg) {
    const RasterState &st = out.state;
    if (!st.valid || st.cloud_size != cloud.size() || !(st.pose == pose) || !(st.intr == intr) || !(st.cfg == cfg)) {
        throw std::invalid_argument("render_backward: saved state does not match the given inputs");
    }
    if (dL_dcolor.height() != intr.height || dL_dcolor.width() != intr.width || dL_dcolor.channels() != 3 ||
        dL_ddepth.height() != intr.height || dL_ddepth.width() != intr.width || dL_ddepth.channels() != 1) {
        throw std::invalid_argument("render_backward: gradient image shape mismatch");
    }
    const bool with_alpha = dL_dalpha.size() != 0;
    if (with_alpha && (dL_dalpha.height() != intr.height || dL_dalpha.width() != intr.width ||
                       dL_dalpha.channels() != 1)) {
        throw std::invalid_argument("render_backward: alpha gradient shape mismatch");
    }

    const std::size_t n_splats = st.splats.size();
    const int workers = std::max(1, std::min<int>(worker_count(), static_cast<int>(st.tile_offsets.size() - 1)));
    std::vector<std::vector<SplatGrad>> partial(static_cast<std::size_t>(workers),
                                                std::vector<SplatGrad>(n_splats, SplatGrad{}));
    const int ts = cfg.tile_size;
    const std::size_t tiles = st.tile_offsets.size() - 1;

    parallel_for(tiles, [&](int worker, std::size_t t) {
        std::vector<SplatGrad> &acc = partial[static_cast<std::size_t>(worker)];
        const int tx = static_cast<int>(t % st.tiles_x);
        const int ty = static_cast<int>(t / st.tiles_x);
        const std::uint32_t begin = st.tile_offsets[t];
        const int y_end = std::min(intr.height, (ty + 1) * ts);
        const int x_end = std::min(intr.width, (tx + 1) * ts);
        for (int y = ty * ts; y < y_end; ++y) {
            for (int x = tx * ts; x < x_end; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * intr.width + x;
                const std::uint32_t consumed = st.contributors[p];
                if (consumed == 0) {
                    continue;
                }
                const double t_final = st.final_transmittance[p];
                const double gr = dL_dcolor(y, x, 0), gg = dL_dcolor(y, x, 1), gb = dL_dcolor(y, x, 2);
                const double gd = dL_ddepth(y, x);
                // Background shows through T_final and alpha is 1 - T_final.
                const double bg_dot = cfg.background[0] * gr + cfg.background[1] * gg + cfg.background[2] * gb -
                                      (with_alpha ? dL_dalpha(y, x) : 0.0);
                double t_acc = t_final;
                double sr = 0.0, sg = 0.0, sb = 0.0, sd = 0.0; // blended suffix behind the current splat
                for (std::uint32_t e = begin + consumed; e-- > begin;) {
                    const std::uint32_t k = st.tile_entries[e];
                    const Splat &s = st.splats[k];
                    double alpha, gauss;
                    bool clamped;
                    if (!splat_alpha(s, x, y, cfg, alpha, gauss, clamped)) {
                        continue;
                    }
                    const double one_minus = 1.0 - alpha;
                    t_acc /= one_minus; // transmittance in front of k
                    const double wgt = alpha * t_acc;
                    SplatGrad &g = acc[k];
                    g.color[0] += wgt * gr;
                    g.color[1] += wgt * gg;
                    g.color[2] += wgt * gb;
                    g.depth += wgt * gd;

                    const double dl_dalpha = t_acc * ((s.r - sr) * gr + (s.g - sg) * gg + (s.b - sb) * gb +
                                                      (s.depth - sd) * gd) -
                                             t_final / one_minus * bg_dot;
                    sr = alpha * s.r + one_minus * sr;
                    sg = alpha * s.g + one_minus * sg;
                    sb = alpha * s.b + one_minus * sb;
                    sd = alpha * s.depth + one_minus * sd;
                    if (clamped) {
                        continue;
                    }
                    g.opacity += dl_dalpha * gauss;
                    const double dl_dpower = dl_dalpha * alpha;
                    const double dx = s.cx - x;
                    const double dy = s.cy - y;
                    g.center[0] += -dl_dpower * (s.ca * dx + s.cb * dy);
                    g.center[1] += -dl_dpower * (s.cb * dx + s.cc * dy);
                    g.conic[0] += -0.5 * dl_dpower * dx * dx;
                    g.conic[1] += -dl_dpower * dx * dy;
                    g.conic[2] += -0.5 * dl_dpower * dy * dy;
                }
            }
        }
    });

    for (int wk = 1; wk < workers; ++wk) {
        for (std::size_t k = 0; k < n_splats; ++k) {
            SplatGrad &dst = partial[0][k];
            const SplatGrad &src = partial[static_cast<std::size_t>(wk)][k];
            for (int j = 0; j < 2; ++j) dst.center[j] += src.center[j];
            for (int j = 0; j < 3; ++j) dst.conic[j] += src.conic[j];
            for (int j = 0; j < 3; ++j) dst.color[j] += src.color[j];
            dst.opacity += src.opacity;
            dst.depth += src.depth;
        }
    }
    const std::vector<SplatGrad> &grad2d = partial[0];

    RenderGradients result;
    result.cloud = CloudGradients(cloud.size());
    const Mat3 w = pose.rotation_matrix();
    std::vector<Vec3> pose_dt(n_splats, Vec3::Zero());
    std::vector<Mat3> pose_dw(n_splats, Mat3::Zero());

    parallel_for(n_splats, [&](int, std::size_t k) {
        const Splat &s = st.splats[k];
        const ProjectionRecord &rec = st.records[k];
        const SplatGrad &g = grad2d[k];
        const std::size_t i = s.id;

        // Clamped color passes gradient only inside [0, 1].
        const Vec3 raw = cloud.color(i);
        for (int c = 0; c < 3; ++c) {
            result.cloud.colors[3 * i + c] = (raw[c] >= 0.0 && raw[c] <= 1.0) ? g.color[c] : 0.0;
        }
        const double o = s.opacity;
        result.cloud.opacity_logits[i] = g.opacity * o * (1.0 - o);

        // conic -> 2D covariance
        const Mat2 dl_dconic{{g.conic[0], 0.5 * g.conic[1]}, {0.5 * g.conic[1], g.conic[2]}};
        const Mat2 dl_dcov2d = -rec.conic * dl_dconic * rec.conic;
        // 2D covariance -> camera covariance and projection Jacobian
        const Mat3 dl_dcovcam = rec.jacobian.transpose() * dl_dcov2d * rec.jacobian;
        const Mat23 dl_dj = 2.0 * dl_dcov2d * rec.jacobian * rec.cov_cam;

        const double mx = rec.mean_c.x(), my = rec.mean_c.y(), mz = rec.mean_c.z();
        const double iz = 1.0 / mz, iz2 = iz * iz, iz3 = iz2 * iz;
        Vec3 dl_dmean_c = rec.jacobian.transpose() * Vec2(g.center[0], g.center[1]);
        dl_dmean_c.z() += g.depth;
        dl_dmean_c.x() += dl_dj(0, 2) * (-intr.fx * iz2);
        dl_dmean_c.y() += dl_dj(1, 2) * (-intr.fy * iz2);
        dl_dmean_c.z() += dl_dj(0, 0) * (-intr.fx * iz2) + dl_dj(0, 2) * (2.0 * intr.fx * mx * iz3) +
                          dl_dj(1, 1) * (-intr.fy * iz2) + dl_dj(1, 2) * (2.0 * intr.fy * my * iz3);

        const Vec3 mu = cloud.mean(i);
        const Vec3 dl_dmu = w.transpose() * dl_dmean_c;
        for (int c = 0; c < 3; ++c) {
            result.cloud.means[3 * i + c] = dl_dmu[c];
        }

        const Mat3 r = cloud.rotation(i).to_matrix();
        const Vec3 sc = cloud.scale(i);
        const Mat3 m = r * sc.asDiagonal();
        const Mat3 cov_obj = m * m.transpose();
        const Mat3 dl_dcov = w.transpose() * dl_dcovcam * w;
        const Mat3 dl_dm = 2.0 * dl_dcov * m;
        const Mat3 dl_dr = dl_dm * sc.asDiagonal();
        for (int j = 0; j < 3; ++j) {
            result.cloud.log_scales[3 * i + j] = sc[j] * r.col(j).dot(dl_dm.col(j));
        }
        const Eigen::Vector4d dq = rotation_matrix_vjp(cloud.rotation(i), dl_dr);
        for (int j = 0; j < 4; ++j) {
            result.cloud.rotations[4 * i + j] = dq[j];
        }

        pose_dt[k] = dl_dmean_c;
        pose_dw[k] = dl_dmean_c * mu.transpose() + 2.0 * dl_dcovcam * w * cov_obj;
    });

    Vec3 dt = Vec3::Zero();
    Mat3 dw = Mat3::Zero();
    for (std::size_t k = 0; k < n_splats; ++k) {
        dt += pose_dt[k];
        dw += pose_dw[k];
    }
    result.pose.head<3>() = dt;
    result.pose.tail<4>() = rotation_matrix_vjp(pose.rotation, dw);
    return result;
}

} // namespace gstrack
