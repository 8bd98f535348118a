// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/gradcheck.hpp"

#include "gstrack/loss.hpp"
#include "gstrack/raster.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>

namespace gstrack {

RandomScene random_scene(std::uint64_t seed, int gaussians, int width, int height, double spread) {
    if (gaussians < 0 || width < 1 || height < 1) {
        throw std::invalid_argument("random_scene: invalid size");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0), unit(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    RandomScene s;
    s.intr = CameraIntrinsics{1.25 * width, 1.25 * width, width / 2.0, height / 2.0, width, height, 0.01, 100.0};
    s.pose.rotation = Quaternion::from_axis_angle({g(rng), g(rng), g(rng)}, 0.5 * u(rng));
    s.pose.translation = {0.1 * u(rng), 0.1 * u(rng), 3.0};
    for (int i = 0; i < gaussians; ++i) {
        const Vec3 mean = gaussians == 1 ? Vec3(0.05 * u(rng), 0.05 * u(rng), 0.0)
                                         : Vec3(spread * u(rng), spread * u(rng), spread * u(rng));
        s.cloud.add(mean,
                    {std::log(0.05 + 0.2 * unit(rng)), std::log(0.05 + 0.2 * unit(rng)),
                     std::log(0.05 + 0.2 * unit(rng))},
                    Quaternion{g(rng), g(rng), g(rng), g(rng)}.normalized(), -1.0 + 2.5 * unit(rng),
                    {0.1 + 0.8 * unit(rng), 0.1 + 0.8 * unit(rng), 0.1 + 0.8 * unit(rng)});
    }
    s.obs = make_empty_frame(height, width);
    std::bernoulli_distribution keep(0.7), hole(0.1);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < 3; ++c) {
                s.obs.color(y, x, c) = unit(rng);
            }
            s.obs.mask(y, x) = keep(rng) ? 1 : 0;
            s.obs.depth(y, x) = hole(rng) ? 0.0 : 2.5 + unit(rng);
        }
    }
    return s;
}

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

struct Checker {
    const GradcheckOptions &opts;
    GradcheckReport &report;
    double &worst;
    std::string label;

    void add(double analytic, double l0, double lp, double lm, double h, const std::string &what) {
        const double fwd = (lp - l0) / h, bwd = (l0 - lm) / h;
        if (rel_err(fwd, bwd) > 1e-2 && std::abs(fwd - bwd) > 1e-6) {
            ++report.kinks;
            return;
        }
        ++report.checked;
        const double e = rel_err(analytic, 0.5 * (fwd + bwd));
        if (e > worst) {
            worst = e;
            if (e >= report.worst_recon && e >= report.worst_track) {
                report.worst_entry = label + " " + what;
            }
        }
    }
};

template <class LossFn>
void check_scene(RandomScene &s, const LossFn &loss_fn, const GradcheckOptions &opts, GradcheckReport &report,
                 double &worst, const std::string &label) {
    const RenderConfig cfg;
    auto loss_at = [&](const GaussianCloud &c, const Pose &p) {
        return loss_fn(render(c, p, s.intr, cfg), s.obs).report.total;
    };
    const RenderOutput out = render(s.cloud, s.pose, s.intr, cfg);
    const LossResult l = loss_fn(out, s.obs);
    RenderGradients g = render_backward(out, l.dL_dcolor, l.dL_ddepth, l.dL_dalpha, s.cloud, s.pose, s.intr, cfg);
    if (opts.corrupt && !g.cloud.colors.empty()) {
        g.cloud.colors[0] = 1.5 * g.cloud.colors[0] + 1e-3;
    }
    const double l0 = l.report.total;
    Checker check{opts, report, worst, label};
    for (ParamGroup grp : kAllGroups) {
        auto params = s.cloud.params(grp);
        const auto analytic = g.cloud.group(grp);
        for (std::size_t k = 0; k < params.size(); ++k) {
            const double orig = params[k];
            const double h = opts.step * std::max(1.0, std::abs(orig));
            params[k] = orig + h;
            const double lp = loss_at(s.cloud, s.pose);
            params[k] = orig - h;
            const double lm = loss_at(s.cloud, s.pose);
            params[k] = orig;
            check.add(analytic[k], l0, lp, lm, h, std::string(group_name(grp)) + "[" + std::to_string(k) + "]");
        }
    }
    const PoseVector v = pose_to_vector(s.pose);
    for (int k = 0; k < 7; ++k) {
        PoseVector p = v, m = v;
        p[k] += opts.step;
        m[k] -= opts.step;
        check.add(g.pose[k], l0, loss_at(s.cloud, pose_from_vector(p)), loss_at(s.cloud, pose_from_vector(m)),
                  opts.step, "pose[" + std::to_string(k) + "]");
    }
}

} // namespace

GradcheckReport run_gradcheck(const GradcheckOptions &opts) {
    if (opts.seeds < 1 || opts.gaussians < 1 || opts.image_size < 11 || !(opts.step > 0.0) ||
        !(opts.tolerance > 0.0)) {
        throw std::invalid_argument("gradcheck: seeds and gaussians must be >= 1, image size >= 11");
    }
    const auto t0 = std::chrono::steady_clock::now();
    GradcheckReport report;
    const LossWeights w;
    for (int i = 0; i < opts.seeds; ++i) {
        const std::uint64_t seed = opts.seed + static_cast<std::uint64_t>(i);
        RandomScene s = random_scene(seed, opts.gaussians, opts.image_size, opts.image_size);
        check_scene(
            s, [&](const RenderOutput &o, const FrameObservation &f) { return recon_loss(o, f, w); }, opts, report,
            report.worst_recon, "recon seed " + std::to_string(seed));
        check_scene(
            s, [&](const RenderOutput &o, const FrameObservation &f) { return track_loss(o, f, w); }, opts, report,
            report.worst_track, "track seed " + std::to_string(seed));
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.passed = report.checked > 0 && report.worst_recon < opts.tolerance && report.worst_track < opts.tolerance &&
                    report.kinks <= report.checked / 20;
    return report;
}

} // namespace gstrack
