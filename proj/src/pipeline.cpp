// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/pipeline.hpp"

#include "gstrack/dataio.hpp"
#include "gstrack/log.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

namespace gstrack {

using nlohmann::ordered_json;

void PipelineConfig::validate() const {
    if (recon_steps <= 0 || track_steps <= 0) {
        throw std::invalid_argument("PipelineConfig: step counts must be positive");
    }
    if (window_max < 2) {
        throw std::invalid_argument("PipelineConfig: window_max must be at least 2");
    }
    if (keyframe_capacity < window_max) {
        throw std::invalid_argument("PipelineConfig: keyframe_capacity must be at least window_max");
    }
    if (init_stride < 1 || densify.stride < 1) {
        throw std::invalid_argument("PipelineConfig: strides must be at least 1");
    }
    if (!(prune_threshold >= 0.0 && prune_threshold < 1.0)) {
        throw std::invalid_argument("PipelineConfig: prune_threshold must lie in [0, 1)");
    }
    loss.validate();
    render.validate();
}

const char *phase_name(Phase p) { return p == Phase::Track ? "track" : "reconstruct"; }

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class T> void read_field(const nlohmann::json &j, const char *key, T &out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

void reject_unknown(const nlohmann::json &j, std::initializer_list<const char *> keys, const std::string &where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char *k) { return it.key() == k; })) {
            throw std::invalid_argument("config: unknown field '" + it.key() + "' in " + where);
        }
    }
}

bool finite_report(const LossReport &r) { return std::isfinite(r.total); }

bool mask_empty(const FrameObservation &f) {
    for (int y = 0; y < f.height(); ++y) {
        for (int x = 0; x < f.width(); ++x) {
            if (f.mask(y, x) != 0) {
                return false;
            }
        }
    }
    return true;
}

Quaternion random_rotation(std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Quaternion q{n(rng), n(rng), n(rng), n(rng)};
    return q.normalized();
}

} // namespace

std::string config_to_json(const PipelineConfig &c) {
    ordered_json j;
    j["recon_steps"] = c.recon_steps;
    j["track_steps"] = c.track_steps;
    j["window_max"] = c.window_max;
    j["keyframe_capacity"] = c.keyframe_capacity;
    j["loss"] = {{"lambda", c.loss.lambda}, {"beta", c.loss.beta}};
    j["render"] = {{"tile_size", c.render.tile_size},
                   {"alpha_min", c.render.alpha_min},
                   {"alpha_max", c.render.alpha_max},
                   {"transmittance_floor", c.render.transmittance_floor},
                   {"dilation", c.render.dilation},
                   {"background", {c.render.background.x(), c.render.background.y(), c.render.background.z()}}};
    j["rates"] = {{"means", c.rates.means},
                  {"colors", c.rates.colors},
                  {"opacity_logits", c.rates.opacity_logits},
                  {"log_scales", c.rates.log_scales},
                  {"rotations", c.rates.rotations},
                  {"pose_translation", c.rates.pose_translation},
                  {"pose_rotation", c.rates.pose_rotation}};
    j["densify"] = {{"stride", c.densify.stride},
                    {"alpha_floor", c.densify.alpha_floor},
                    {"depth_fraction", c.densify.depth_fraction}};
    j["init_stride"] = c.init_stride;
    j["prune_threshold"] = c.prune_threshold;
    j["init_recon"] = c.init_recon;
    j["seed"] = c.seed;
    return j.dump(2);
}

PipelineConfig config_from_json(const std::string &text) {
    const auto j = nlohmann::json::parse(text);
    PipelineConfig c;
    reject_unknown(j,
                   {"recon_steps", "track_steps", "window_max", "keyframe_capacity", "loss", "render", "rates",
                    "densify", "init_stride", "prune_threshold", "init_recon", "seed"},
                   "pipeline config");
    read_field(j, "recon_steps", c.recon_steps);
    read_field(j, "track_steps", c.track_steps);
    read_field(j, "window_max", c.window_max);
    read_field(j, "keyframe_capacity", c.keyframe_capacity);
    if (j.contains("loss")) {
        const auto &l = j.at("loss");
        reject_unknown(l, {"lambda", "beta"}, "loss");
        read_field(l, "lambda", c.loss.lambda);
        read_field(l, "beta", c.loss.beta);
    }
    if (j.contains("render")) {
        const auto &r = j.at("render");
        reject_unknown(r, {"tile_size", "alpha_min", "alpha_max", "transmittance_floor", "dilation", "background"},
                       "render");
        read_field(r, "tile_size", c.render.tile_size);
        read_field(r, "alpha_min", c.render.alpha_min);
        read_field(r, "alpha_max", c.render.alpha_max);
        read_field(r, "transmittance_floor", c.render.transmittance_floor);
        read_field(r, "dilation", c.render.dilation);
        if (r.contains("background")) {
            const auto bg = r.at("background").get<std::vector<double>>();
            if (bg.size() != 3) {
                throw std::invalid_argument("config: render.background needs 3 values");
            }
            c.render.background = Vec3(bg[0], bg[1], bg[2]);
        }
    }
    if (j.contains("rates")) {
        const auto &r = j.at("rates");
        reject_unknown(r,
                       {"means", "colors", "opacity_logits", "log_scales", "rotations", "pose_translation",
                        "pose_rotation"},
                       "rates");
        read_field(r, "means", c.rates.means);
        read_field(r, "colors", c.rates.colors);
        read_field(r, "opacity_logits", c.rates.opacity_logits);
        read_field(r, "log_scales", c.rates.log_scales);
        read_field(r, "rotations", c.rates.rotations);
        read_field(r, "pose_translation", c.rates.pose_translation);
        read_field(r, "pose_rotation", c.rates.pose_rotation);
    }
    if (j.contains("densify")) {
        const auto &d = j.at("densify");
        reject_unknown(d, {"stride", "alpha_floor", "depth_fraction"}, "densify");
        read_field(d, "stride", c.densify.stride);
        read_field(d, "alpha_floor", c.densify.alpha_floor);
        read_field(d, "depth_fraction", c.densify.depth_fraction);
    }
    read_field(j, "init_stride", c.init_stride);
    read_field(j, "prune_threshold", c.prune_threshold);
    read_field(j, "init_recon", c.init_recon);
    read_field(j, "seed", c.seed);
    c.validate();
    return c;
}

namespace {

/// Cloud optimization over the current keyframe window; the poses are held.
void optimize_cloud(PipelineState &s, bool &flagged) {
    const std::vector<std::size_t> window = select_keyframes(s);
    s.last_selection.clear();
    for (std::size_t k : window) {
        s.last_selection.push_back(s.keyframes[k].index);
    }
    CloudOptimizer opt(s.cloud, s.cfg.rates, s.extent);
    std::uniform_int_distribution<std::size_t> pick(0, window.size() - 1);
    for (int step = 0; step < s.cfg.recon_steps; ++step) {
        const Keyframe &kf = s.keyframes[window[pick(s.rng)]];
        const RenderOutput out = render(s.cloud, kf.pose, s.intr, s.cfg.render);
        const LossResult l = recon_loss(out, kf.frame, s.cfg.loss, s.cfg.render.background);
        if (!finite_report(l.report)) {
            warn("reconstruct: non-finite loss at frame " + std::to_string(kf.index) + ", phase stopped");
            flagged = true;
            break;
        }
        const RenderGradients g = render_backward(out, l.dL_dcolor, l.dL_ddepth, l.dL_dalpha, s.cloud, kf.pose, s.intr, s.cfg.render);
        if (opt.step(s.cloud, g.cloud) > 0) {
            flagged = true;
        }
    }
}

/// Loss of the current cloud against the newest keyframe.
LossReport newest_keyframe_loss(const PipelineState &s) {
    const Keyframe &cur = s.keyframes.back();
    const RenderOutput out = render(s.cloud, cur.pose, s.intr, s.cfg.render);
    return recon_loss(out, cur.frame, s.cfg.loss, s.cfg.render.background).report;
}

void evict_keyframes(PipelineState &s) {
    while (static_cast<int>(s.keyframes.size()) > s.cfg.keyframe_capacity) {
        const std::size_t n = s.keyframes.size();
        bool erased = false;
        for (std::size_t i = 0; i + 2 < n; ++i) {
            const int idx = s.keyframes[i].index;
            if (std::find(s.last_selection.begin(), s.last_selection.end(), idx) == s.last_selection.end()) {
                s.keyframes.erase(s.keyframes.begin() + static_cast<std::ptrdiff_t>(i));
                erased = true;
                break;
            }
        }
        if (!erased) {
            s.keyframes.erase(s.keyframes.begin());
        }
    }
}

} // namespace

PipelineState initialize(const FrameObservation &first, const CameraIntrinsics &intr, const PipelineConfig &cfg,
                         const std::optional<Pose> &gt_pose) {
    cfg.validate();
    intr.validate();
    first.validate();
    if (first.width() != intr.width || first.height() != intr.height) {
        throw std::invalid_argument("initialize: frame size does not match the intrinsics");
    }
    PipelineState s;
    s.intr = intr;
    s.cfg = cfg;
    s.rng.seed(cfg.seed);

    Vec3 centroid = Vec3::Zero();
    std::size_t count = 0;
    for (int y = 0; y < first.height(); ++y) {
        for (int x = 0; x < first.width(); ++x) {
            if (first.valid(y, x)) {
                centroid += deproject(intr, x, y, first.depth(y, x));
                ++count;
            }
        }
    }
    if (count == 0) {
        throw InitializationError("initialize: first frame has no masked pixels with valid depth");
    }
    centroid /= static_cast<double>(count);

    const auto t0 = std::chrono::steady_clock::now();
    Pose pose;
    if (gt_pose) {
        pose = *gt_pose;
    } else {
        pose.rotation = random_rotation(s.rng);
        pose.translation = centroid;
    }
    s.cloud = init_from_rgbd(first, intr, pose, cfg.init_stride);
    if (s.cloud.empty()) {
        throw InitializationError("initialize: no Gaussians could be seeded from the first frame");
    }
    s.extent = s.cloud.extent();
    if (!(s.extent > 0.0)) {
        s.extent = 1.0;
    }
    s.keyframes.push_back({first, pose, first.index});
    s.poses.push_back(pose);

    FrameRecord rec;
    rec.index = first.index;
    rec.phase = Phase::Reconstruct;
    rec.pose = pose;
    rec.initial_loss = newest_keyframe_loss(s).total;
    if (cfg.init_recon) {
        optimize_cloud(s, rec.flagged);
        rec.pruned = prune(s.cloud, cfg.prune_threshold);
    }
    rec.loss = newest_keyframe_loss(s);
    rec.added = s.cloud.size() + rec.pruned;
    rec.cloud_size = s.cloud.size();
    rec.seconds = seconds_since(t0);
    s.records.push_back(rec);
    s.frames_processed = 1;
    s.next_phase = Phase::Track;
    return s;
}

std::vector<std::size_t> select_farthest(const std::vector<Quaternion> &rotations,
                                         const std::vector<std::size_t> &seeds, int w_max) {
    const std::size_t n = rotations.size();
    const std::size_t cap = std::min(n, static_cast<std::size_t>(std::max(w_max, 0)));
    std::vector<std::size_t> chosen;
    std::vector<bool> taken(n, false);
    for (std::size_t s : seeds) {
        if (s >= n) {
            throw std::out_of_range("select_farthest: seed index out of range");
        }
        if (!taken[s] && chosen.size() < cap) {
            taken[s] = true;
            chosen.push_back(s);
        }
    }
    std::vector<double> dmin(n, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c : chosen) {
            dmin[i] = std::min(dmin[i], rotation_distance(rotations[i], rotations[c]));
        }
    }
    while (chosen.size() < cap) {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (!taken[i] && (best == n || dmin[i] > dmin[best])) {
                best = i;
            }
        }
        taken[best] = true;
        chosen.push_back(best);
        for (std::size_t i = 0; i < n; ++i) {
            dmin[i] = std::min(dmin[i], rotation_distance(rotations[i], rotations[best]));
        }
    }
    return chosen;
}

std::vector<std::size_t> select_keyframes(const PipelineState &state) {
    const std::size_t n = state.keyframes.size();
    if (n == 0) {
        throw std::logic_error("select_keyframes: keyframe store is empty");
    }
    std::vector<Quaternion> rotations;
    rotations.reserve(n);
    for (const Keyframe &k : state.keyframes) {
        rotations.push_back(k.pose.rotation);
    }
    std::vector<std::size_t> seeds{n - 1};
    if (n >= 2) {
        seeds.push_back(n - 2);
    }
    return select_farthest(rotations, seeds, state.cfg.window_max);
}

Pose predicted_pose(const PipelineState &state) {
    if (state.poses.empty()) {
        throw std::logic_error("predicted_pose: no pose history");
    }
    if (state.poses.size() == 1) {
        return state.poses.back();
    }
    return extrapolate_pose(state.poses[state.poses.size() - 2], state.poses.back());
}

FrameRecord track_frame(PipelineState &s, const FrameObservation &frame) {
    if (s.next_phase != Phase::Track) {
        throw std::logic_error("track_frame: pipeline expects a reconstruct phase");
    }
    const auto t0 = std::chrono::steady_clock::now();
    FrameRecord rec;
    rec.index = frame.index;
    rec.phase = Phase::Track;
    rec.flagged = mask_empty(frame);

    const Pose start = predicted_pose(s);
    PoseVector v = pose_to_vector(start);
    PoseVector best_v = v;
    LossReport best;
    best.total = std::numeric_limits<double>::infinity();
    PoseOptimizer opt(s.cfg.rates, s.extent);
    for (int step = 0; step <= s.cfg.track_steps; ++step) {
        const Pose p = pose_from_vector(v);
        const RenderOutput out = render(s.cloud, p, s.intr, s.cfg.render);
        const LossResult l = track_loss(out, frame, s.cfg.loss, s.cfg.render.background);
        if (!finite_report(l.report)) {
            warn("track: non-finite loss at frame " + std::to_string(frame.index) + ", keeping last finite pose");
            rec.flagged = true;
            break;
        }
        if (step == 0) {
            rec.initial_loss = l.report.total;
        }
        if (l.report.total < best.total) {
            best = l.report;
            best_v = v;
        }
        if (step == s.cfg.track_steps) {
            break;
        }
        const RenderGradients g = render_backward(out, l.dL_dcolor, l.dL_ddepth, l.dL_dalpha, s.cloud, p, s.intr, s.cfg.render);
        if (!opt.step(v, g.pose)) {
            rec.flagged = true;
        }
    }
    if (!std::isfinite(best.total)) {
        best_v = pose_to_vector(s.poses.back());
        best = LossReport{};
        best.total = std::numeric_limits<double>::quiet_NaN();
    }
    rec.pose = pose_from_vector(best_v);
    rec.loss = best;
    rec.cloud_size = s.cloud.size();
    s.poses.push_back(rec.pose);
    s.frames_processed += 1;
    s.next_phase = Phase::Reconstruct;
    rec.seconds = seconds_since(t0);
    s.records.push_back(rec);
    return rec;
}

FrameRecord reconstruct_frame(PipelineState &s, const FrameObservation &frame) {
    if (s.next_phase != Phase::Reconstruct) {
        throw std::logic_error("reconstruct_frame: pipeline expects a track phase");
    }
    const auto t0 = std::chrono::steady_clock::now();
    FrameRecord rec;
    rec.index = frame.index;
    rec.phase = Phase::Reconstruct;
    rec.pose = predicted_pose(s);
    rec.flagged = mask_empty(frame);

    {
        const RenderOutput out = render(s.cloud, rec.pose, s.intr, s.cfg.render);
        rec.initial_loss = recon_loss(out, frame, s.cfg.loss, s.cfg.render.background).report.total;
        rec.added = densify(s.cloud, frame, out.depth, out.alpha, rec.pose, s.intr, s.cfg.densify);
    }
    s.keyframes.push_back({frame, rec.pose, frame.index});
    evict_keyframes(s);
    bool flagged = false;
    optimize_cloud(s, flagged);
    rec.flagged = rec.flagged || flagged;
    rec.pruned = prune(s.cloud, s.cfg.prune_threshold);
    rec.loss = newest_keyframe_loss(s);
    rec.cloud_size = s.cloud.size();
    s.poses.push_back(rec.pose);
    s.frames_processed += 1;
    s.next_phase = Phase::Track;
    rec.seconds = seconds_since(t0);
    s.records.push_back(rec);
    return rec;
}

RunResult process_sequence(const FrameSource &next, int frame_count, const CameraIntrinsics &intr,
                           const PipelineConfig &cfg, const RunOptions &opts) {
    if (frame_count < 2) {
        throw std::invalid_argument("process_sequence: at least 2 frames are required");
    }
    std::vector<int> checkpoints = opts.checkpoints.empty() ? checkpoint_frames(frame_count) : opts.checkpoints;
    std::sort(checkpoints.begin(), checkpoints.end());
    checkpoints.erase(std::unique(checkpoints.begin(), checkpoints.end()), checkpoints.end());
    for (int c : checkpoints) {
        if (c < 0 || c > frame_count) {
            throw std::invalid_argument("process_sequence: checkpoint " + std::to_string(c) + " outside the run");
        }
    }
    // Checkpoint c is taken once frame min(c, N-1) has been processed.
    auto snapshot_due = [&](int frame) {
        std::vector<int> out;
        for (int c : checkpoints) {
            if (std::min(c, frame_count - 1) == frame) {
                out.push_back(c);
            }
        }
        return out;
    };

    RunResult r;
    std::optional<FrameObservation> f = next();
    if (!f) {
        throw std::invalid_argument("process_sequence: frame source is empty");
    }
    r.gt_poses.push_back(f->gt_pose);
    std::optional<Pose> init_pose;
    if (opts.gt_init) {
        if (!f->gt_pose) {
            throw InitializationError("process_sequence: gt init requested but frame 0 has no pose");
        }
        init_pose = f->gt_pose;
    }
    r.state = initialize(*f, intr, cfg, init_pose);
    PipelineState &s = r.state;
    if (opts.on_frame) {
        opts.on_frame(s.records.back());
    }
    for (int c : snapshot_due(0)) {
        r.snapshots[c] = s.cloud;
    }
    for (int i = 1; i < frame_count; ++i) {
        f = next();
        if (!f) {
            throw DataError("process_sequence: frame source ended at frame " + std::to_string(i) + " of " +
                            std::to_string(frame_count));
        }
        r.gt_poses.push_back(f->gt_pose);
        const FrameRecord rec = s.next_phase == Phase::Track ? track_frame(s, *f) : reconstruct_frame(s, *f);
        if (rec.flagged) {
            warn("frame " + std::to_string(rec.index) + " flagged during " + phase_name(rec.phase));
        }
        if (opts.on_frame) {
            opts.on_frame(rec);
        }
        for (int c : snapshot_due(i)) {
            r.snapshots[c] = s.cloud;
        }
    }
    r.records = s.records;

    MetricsReport &m = r.metrics;
    const bool have_gt = std::all_of(r.gt_poses.begin(), r.gt_poses.end(), [](const auto &p) { return p.has_value(); });
    if (have_gt) {
        std::vector<Pose> est, gt;
        for (std::size_t i = 0; i < r.records.size(); ++i) {
            m.frames.push_back(r.records[i].index);
            est.push_back(r.records[i].pose);
            gt.push_back(*r.gt_poses[i]);
        }
        m.errors = pose_errors(est, gt);
    }
    if (!opts.gt_points.empty()) {
        for (const auto &[c, cloud] : r.snapshots) {
            if (cloud.empty()) {
                warn("checkpoint " + std::to_string(c) + ": cloud is empty, chamfer skipped");
                continue;
            }
            const ChamferResult cd = chamfer(cloud.means(), opts.gt_points, opts.chamfer_samples, cfg.seed);
            m.chamfer.push_back({c, cd.mean, cd.std});
        }
    }
    double init = 0.0, track = 0.0, recon = 0.0;
    for (std::size_t i = 0; i < r.records.size(); ++i) {
        const FrameRecord &rec = r.records[i];
        (i == 0 ? init : rec.phase == Phase::Track ? track : recon) += rec.seconds;
    }
    m.timing["init"] = init;
    m.timing["track"] = track;
    m.timing["reconstruct"] = recon;
    m.timing["total"] = init + track + recon;
    return r;
}

std::string trajectory_to_json(const std::vector<FrameRecord> &records, bool with_timing) {
    ordered_json frames = ordered_json::array();
    for (const FrameRecord &r : records) {
        ordered_json f;
        f["frame"] = r.index;
        f["phase"] = phase_name(r.phase);
        f["t"] = {r.pose.translation.x(), r.pose.translation.y(), r.pose.translation.z()};
        f["q"] = {r.pose.rotation.w, r.pose.rotation.x, r.pose.rotation.y, r.pose.rotation.z};
        f["loss"] = {{"total", r.loss.total},
                     {"l1_color", r.loss.l1_color},
                     {"ssim", r.loss.ssim},
                     {"l1_depth", r.loss.l1_depth},
                     {"initial", r.initial_loss}};
        f["flagged"] = r.flagged;
        f["added"] = r.added;
        f["pruned"] = r.pruned;
        f["cloud_size"] = r.cloud_size;
        if (with_timing) {
            f["seconds"] = r.seconds;
        }
        frames.push_back(std::move(f));
    }
    ordered_json j;
    j["frames"] = std::move(frames);
    return j.dump(2);
}

std::vector<Pose> trajectory_poses_from_json(const std::string &text) {
    const auto j = nlohmann::json::parse(text);
    std::vector<Pose> out;
    for (const auto &f : j.at("frames")) {
        const auto t = f.at("t").get<std::vector<double>>();
        const auto q = f.at("q").get<std::vector<double>>();
        if (t.size() != 3 || q.size() != 4) {
            throw DataError("trajectory.json: malformed pose at frame " + std::to_string(f.value("frame", -1)));
        }
        out.push_back(Pose{Quaternion{q[0], q[1], q[2], q[3]}, Vec3(t[0], t[1], t[2])});
    }
    return out;
}

void write_run_artifacts(const RunResult &r, const std::filesystem::path &dir, bool deterministic) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / "trajectory.json", trajectory_to_json(r.records, !deterministic));
    ordered_json timing = ordered_json::array();
    for (const FrameRecord &rec : r.records) {
        timing.push_back({{"frame", rec.index}, {"phase", phase_name(rec.phase)}, {"seconds", rec.seconds}});
    }
    ordered_json totals = ordered_json::object();
    for (const auto &[k, v] : r.metrics.timing) {
        totals[k] = v;
    }
    write_text_file(dir / "timing.json", ordered_json{{"totals", totals}, {"frames", timing}}.dump(2) + "\n");
    std::filesystem::create_directories(dir / "snapshots");
    for (const auto &[c, cloud] : r.snapshots) {
        char name[32];
        std::snprintf(name, sizeof(name), "cloud_%06d.ply", c);
        save_ply(cloud, dir / "snapshots" / name);
    }
    emit_report(r.metrics, dir);
}

} // namespace gstrack
