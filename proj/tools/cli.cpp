// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include "gstrack/eval.hpp"
#include "gstrack/gradcheck.hpp"
#include "gstrack/log.hpp"
#include "gstrack/parallel.hpp"
#include "gstrack/raster.hpp"
#include "gstrack/synthgen.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <sstream>

namespace gstrack::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

json noise_json(const NoiseSpec &n) {
    return {{"color_std", n.color_std}, {"depth_std", n.depth_std}, {"bleed_px", n.bleed_px}, {"seed", n.seed}};
}

NoiseSpec noise_from(const json &j) {
    NoiseSpec n;
    for (const auto &[k, v] : j.items()) {
        if (k == "color_std") {
            n.color_std = v.get<double>();
        } else if (k == "depth_std") {
            n.depth_std = v.get<double>();
        } else if (k == "bleed_px") {
            n.bleed_px = v.get<int>();
        } else if (k == "seed") {
            n.seed = v.get<std::uint64_t>();
        } else {
            throw std::invalid_argument("run config: unknown noise field '" + k + "'");
        }
    }
    n.validate();
    return n;
}

std::string fmt(const char *f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

CameraIntrinsics intrinsics_from_flags(int width, int height, double fx, double fy, double cx, double cy) {
    CameraIntrinsics intr;
    intr.width = width;
    intr.height = height;
    intr.fx = fx;
    intr.fy = fy > 0 ? fy : fx;
    intr.cx = cx >= 0 ? cx : width / 2.0;
    intr.cy = cy >= 0 ? cy : height / 2.0;
    intr.validate();
    return intr;
}

std::vector<std::optional<Pose>> gt_from_trajectory(const fs::path &seq, int n) {
    const SequenceMeta meta = load_meta(seq);
    auto poses = load_poses(seq, meta.frame_count);
    poses.resize(std::min<std::size_t>(n, poses.size()));
    return poses;
}

// --- gen -------------------------------------------------------------------

struct GenArgs {
    std::string object = "cuboid-sat";
    int frames = 100;
    double radius = 16.0;
    double turns = 3.0;
    std::string noise = "none";
    std::uint64_t seed = 0;
    double spacing = 0.08;
    int width = 160, height = 120;
    double fx = 400.0, fy = 0.0, cx = -1.0, cy = -1.0;
    double depth_scale_mm = 1.0;
    std::string out;
};

int cmd_gen(const GenArgs &a, std::ostream &out) {
    const CameraIntrinsics intr = intrinsics_from_flags(a.width, a.height, a.fx, a.fy, a.cx, a.cy);
    TrajectorySpec traj{a.radius, a.turns, a.frames};
    traj.validate();
    if (!(a.spacing > 0.0)) {
        throw UsageError("--spacing must be positive");
    }
    const ToyObject obj = make_toy_object(parse_toy_kind(a.object), a.spacing, a.seed);
    GenerateOptions opts;
    if (a.noise == "default") {
        opts.noise = NoiseSpec{};
        opts.noise->seed = a.seed;
    }
    opts.depth_scale_mm = a.depth_scale_mm;
    opts.generator_json = json{{"object", a.object},
                               {"spacing", a.spacing},
                               {"radius", a.radius},
                               {"turns", a.turns},
                               {"seed", a.seed},
                               {"extent", obj.extent},
                               {"gaussians", obj.cloud.size()}}
                              .dump();
    generate_sequence(obj, make_spiral_trajectory(traj), intr, a.out, opts);
    out << "wrote " << a.frames << " frames of " << a.object << " to " << a.out << "\n";
    return kOk;
}

// --- track -----------------------------------------------------------------

int cmd_track(const RunConfig &rc, bool quiet, std::ostream &out) {
    if (rc.seq.empty() || rc.out.empty()) {
        throw UsageError("track needs --seq and --out (directly or through --config)");
    }
    rc.pipeline.validate();
    std::optional<ScopedWorkers> single;
    if (rc.deterministic) {
        single.emplace(1);
    }
    SequenceReader reader(rc.seq);
    const SequenceMeta meta = reader.meta();
    const int n = rc.max_frames > 0 ? std::min(rc.max_frames, meta.frame_count) : meta.frame_count;
    RunOptions opts;
    opts.gt_init = rc.gt_init;
    opts.chamfer_samples = rc.chamfer_samples;
    const fs::path gt_points = fs::path(rc.seq) / "gt_points.ply";
    if (fs::exists(gt_points)) {
        opts.gt_points = load_points_ply(gt_points);
    }
    if (!quiet) {
        opts.on_frame = [&out](const FrameRecord &r) {
            out << "frame " << r.index << " " << phase_name(r.phase) << " loss " << fmt("%.4f", r.initial_loss)
                << " -> " << fmt("%.4f", r.loss.total) << " gaussians " << r.cloud_size << "\n";
        };
    }
    int produced = 0;
    const FrameSource source = [&]() -> std::optional<FrameObservation> {
        if (produced >= n) {
            return std::nullopt;
        }
        std::optional<FrameObservation> f = reader.next();
        ++produced;
        if (f && rc.noise) {
            f = add_noise(*f, *rc.noise);
        }
        return f;
    };
    const RunResult result = process_sequence(source, n, meta.intr, rc.pipeline, opts);
    fs::create_directories(rc.out);
    write_run_artifacts(result, rc.out, rc.deterministic);
    write_text_file(fs::path(rc.out) / "run_config.json", run_config_to_json(rc));
    for (const CheckpointMetric &c : result.metrics.chamfer) {
        out << checkpoint_label(c.frame) << " " << fmt("%.4f", c.mean) << " +- " << fmt("%.4f", c.std) << "\n";
    }
    if (!result.metrics.errors.empty()) {
        const PoseError &last = result.metrics.errors.back();
        out << "final error t " << fmt("%.4f", last.t_err) << " m, theta " << fmt("%.3f", last.theta_err_deg)
            << " deg\n";
    }
    return kOk;
}

// --- eval ------------------------------------------------------------------

int cmd_eval(const std::string &run, const std::string &seq, std::string report_dir, std::size_t samples,
             std::uint64_t seed, std::ostream &out) {
    const fs::path run_dir(run);
    const std::vector<Pose> est = trajectory_poses_from_json(read_text_file(run_dir / "trajectory.json"));
    MetricsReport report;
    const auto gt = gt_from_trajectory(seq, static_cast<int>(est.size()));
    if (gt.size() == est.size() && std::all_of(gt.begin(), gt.end(), [](const auto &p) { return p.has_value(); })) {
        std::vector<Pose> g;
        for (const auto &p : gt) {
            g.push_back(*p);
        }
        report.errors = pose_errors(est, g);
        for (std::size_t i = 0; i < est.size(); ++i) {
            report.frames.push_back(static_cast<int>(i));
        }
    } else {
        out << "sequence has no ground-truth poses for every frame; pose errors skipped\n";
    }
    const fs::path gt_points = fs::path(seq) / "gt_points.ply";
    const fs::path snaps = run_dir / "snapshots";
    if (fs::exists(gt_points) && fs::exists(snaps)) {
        const std::vector<Vec3> points = load_points_ply(gt_points);
        std::vector<fs::path> files;
        for (const auto &e : fs::directory_iterator(snaps)) {
            if (e.path().extension() == ".ply") {
                files.push_back(e.path());
            }
        }
        std::sort(files.begin(), files.end());
        for (const fs::path &f : files) {
            const std::string stem = f.stem().string();
            const int frame = std::stoi(stem.substr(stem.find('_') + 1));
            const ChamferResult c = chamfer(load_points_ply(f), points, samples, seed);
            report.chamfer.push_back({frame, c.mean, c.std});
        }
    }
    const fs::path timing = run_dir / "timing.json";
    if (fs::exists(timing)) {
        const json t = json::parse(read_text_file(timing));
        if (t.contains("totals")) {
            for (const auto &[k, v] : t.at("totals").items()) {
                report.timing[k] = v.get<double>();
            }
        }
    }
    if (report_dir.empty()) {
        report_dir = run;
    }
    fs::create_directories(report_dir);
    emit_report(report, report_dir);
    for (const CheckpointMetric &c : report.chamfer) {
        out << checkpoint_label(c.frame) << " " << fmt("%.4f", c.mean) << " +- " << fmt("%.4f", c.std) << "\n";
    }
    if (!report.errors.empty()) {
        double worst_t = 0, worst_r = 0;
        for (const PoseError &e : report.errors) {
            worst_t = std::max(worst_t, e.t_err);
            worst_r = std::max(worst_r, e.theta_err_deg);
        }
        out << "max error t " << fmt("%.4f", worst_t) << " m, theta " << fmt("%.3f", worst_r) << " deg\n";
    }
    return kOk;
}

// --- render ----------------------------------------------------------------

struct RenderArgs {
    std::string cloud;
    std::string seq;
    int frame = -1;
    std::vector<double> pose;
    int width = 160, height = 120;
    double fx = 400.0, fy = 0.0, cx = -1.0, cy = -1.0;
    std::string out;
    std::string depth_out;
};

int cmd_render(const RenderArgs &a, std::ostream &out) {
    const GaussianCloud cloud = load_ply(a.cloud);
    CameraIntrinsics intr = intrinsics_from_flags(a.width, a.height, a.fx, a.fy, a.cx, a.cy);
    Pose pose;
    if (!a.pose.empty()) {
        if (a.pose.size() != 7) {
            throw UsageError("--pose takes 7 values: tx ty tz qw qx qy qz");
        }
        PoseVector v;
        for (int k = 0; k < 7; ++k) {
            v[k] = a.pose[k];
        }
        pose = pose_from_vector(v);
    }
    if (!a.seq.empty()) {
        const SequenceMeta meta = load_meta(a.seq);
        intr = meta.intr;
        if (a.pose.empty()) {
            if (a.frame < 0 || a.frame >= meta.frame_count) {
                throw UsageError("--frame out of range for the sequence");
            }
            const auto poses = load_poses(a.seq, meta.frame_count);
            if (!poses[a.frame]) {
                throw DataError("sequence has no pose for frame " + std::to_string(a.frame));
            }
            pose = *poses[a.frame];
        }
    } else if (a.pose.empty()) {
        throw UsageError("render needs --pose, or --seq with --frame");
    }
    const RenderOutput r = render(cloud, pose, intr);
    write_color_png(a.out, r.color);
    if (!a.depth_out.empty()) {
        ImageD d = r.depth;
        for (int y = 0; y < d.height(); ++y) {
            for (int x = 0; x < d.width(); ++x) {
                d(y, x) = r.alpha(y, x) > 0.5 ? r.depth(y, x) / r.alpha(y, x) : 0.0;
            }
        }
        write_depth_png(a.depth_out, d, 1.0);
    }
    out << "rendered " << cloud.size() << " gaussians to " << a.out << "\n";
    return kOk;
}

// --- gradcheck -------------------------------------------------------------

int cmd_gradcheck(const GradcheckOptions &o, std::ostream &out) {
    const GradcheckReport r = run_gradcheck(o);
    out << "recon_loss worst rel err " << fmt("%.3e", r.worst_recon) << "\n"
        << "track_loss worst rel err " << fmt("%.3e", r.worst_track) << "\n"
        << "checked " << r.checked << " entries, skipped " << r.kinks << " at kinks, " << fmt("%.2f", r.seconds)
        << " s\n";
    if (!r.worst_entry.empty()) {
        out << "worst entry: " << r.worst_entry << "\n";
    }
    out << (r.passed ? "PASS" : "FAIL") << " (tolerance " << fmt("%.1e", o.tolerance) << ")\n";
    return r.passed ? kOk : kCheckFailed;
}

void add_intrinsics(CLI::App *cmd, int &w, int &h, double &fx, double &fy, double &cx, double &cy) {
    cmd->add_option("--width", w, "Image width")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--height", h, "Image height")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--fx", fx, "Focal length x, pixels")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--fy", fy, "Focal length y (default fx)");
    cmd->add_option("--cx", cx, "Principal point x (default width/2)");
    cmd->add_option("--cy", cy, "Principal point y (default height/2)");
}

} // namespace

std::string run_config_to_json(const RunConfig &c) {
    json j;
    j["pipeline"] = json::parse(config_to_json(c.pipeline));
    j["noise"] = c.noise ? noise_json(*c.noise) : json(nullptr);
    j["seq"] = c.seq;
    j["out"] = c.out;
    j["gt_init"] = c.gt_init;
    j["deterministic"] = c.deterministic;
    j["chamfer_samples"] = c.chamfer_samples;
    j["max_frames"] = c.max_frames;
    return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string &text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception &e) {
        throw std::invalid_argument(std::string("run config: ") + e.what());
    }
    if (!j.is_object()) {
        throw std::invalid_argument("run config: expected an object");
    }
    RunConfig c;
    try {
        for (const auto &[k, v] : j.items()) {
            if (k == "pipeline") {
                c.pipeline = config_from_json(v.dump());
            } else if (k == "noise") {
                c.noise = v.is_null() ? std::nullopt : std::optional<NoiseSpec>(noise_from(v));
            } else if (k == "seq") {
                c.seq = v.get<std::string>();
            } else if (k == "out") {
                c.out = v.get<std::string>();
            } else if (k == "gt_init") {
                c.gt_init = v.get<bool>();
            } else if (k == "deterministic") {
                c.deterministic = v.get<bool>();
            } else if (k == "chamfer_samples") {
                c.chamfer_samples = v.get<std::size_t>();
            } else if (k == "max_frames") {
                c.max_frames = v.get<int>();
            } else {
                throw std::invalid_argument("run config: unknown field '" + k + "'");
            }
        }
    } catch (const json::exception &e) {
        throw std::invalid_argument(std::string("run config: ") + e.what());
    }
    if (c.max_frames < 0 || c.chamfer_samples == 0) {
        throw std::invalid_argument("run config: max_frames must be >= 0 and chamfer_samples > 0");
    }
    return c;
}

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"Gaussian-splatting object reconstruction and pose tracking"};
    app.name("gstrack");
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App *gen_cmd = app.add_subcommand("gen", "Generate a synthetic RGB-D sequence");
    gen_cmd->add_option("--object", gen.object, "cuboid-sat, two-panel-sat, textured-sphere or unit-cube")
        ->check(CLI::IsMember({"cuboid-sat", "two-panel-sat", "textured-sphere", "unit-cube"}))
        ->capture_default_str();
    gen_cmd->add_option("--frames", gen.frames, "Number of frames (>= 2)")
        ->check(CLI::Range(2, 1 << 20))
        ->capture_default_str();
    gen_cmd->add_option("--radius", gen.radius, "Camera distance, meters")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    gen_cmd->add_option("--turns", gen.turns, "Spiral revolutions")->check(CLI::PositiveNumber)->capture_default_str();
    gen_cmd->add_option("--noise", gen.noise, "none or default")
        ->check(CLI::IsMember({"none", "default"}))
        ->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "Texture and noise seed")->capture_default_str();
    gen_cmd->add_option("--spacing", gen.spacing, "Surfel spacing, meters")->capture_default_str();
    gen_cmd->add_option("--depth-scale-mm", gen.depth_scale_mm, "Millimeters per stored depth unit")
        ->check(CLI::PositiveNumber);
    add_intrinsics(gen_cmd, gen.width, gen.height, gen.fx, gen.fy, gen.cx, gen.cy);
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();

    RunConfig rc;
    std::string config_file, track_noise = "none";
    std::uint64_t noise_seed = 0;
    int recon_steps = 0, track_steps = 0;
    std::uint64_t seed = 0;
    bool quiet = false;
    CLI::App *track_cmd = app.add_subcommand("track", "Reconstruct and track a sequence");
    CLI::Option *seq_opt = track_cmd->add_option("--seq", rc.seq, "Sequence directory");
    CLI::Option *out_opt = track_cmd->add_option("--out", rc.out, "Run output directory");
    track_cmd->add_option("--config", config_file, "RunConfig JSON; flags given as well override it");
    CLI::Option *gt_opt = track_cmd->add_flag("--gt-init", "Initialize from the ground-truth first pose");
    CLI::Option *det_opt = track_cmd->add_flag("--deterministic", "Single-threaded, timing-free trajectory.json");
    CLI::Option *noise_opt = track_cmd->add_option("--noise", track_noise, "Extra noise at load: none or default")
                                 ->check(CLI::IsMember({"none", "default"}));
    CLI::Option *noise_seed_opt = track_cmd->add_option("--noise-seed", noise_seed, "Seed for load-time noise");
    CLI::Option *recon_opt =
        track_cmd->add_option("--recon-steps", recon_steps, "Adam steps per reconstruction")->check(CLI::PositiveNumber);
    CLI::Option *track_opt =
        track_cmd->add_option("--track-steps", track_steps, "Adam steps per tracking")->check(CLI::PositiveNumber);
    CLI::Option *seed_opt = track_cmd->add_option("--seed", seed, "Pipeline seed");
    int max_frames = 0;
    CLI::Option *max_opt =
        track_cmd->add_option("--max-frames", max_frames, "Use only the first N frames")->check(CLI::Range(2, 1 << 20));
    track_cmd->add_flag("--quiet", quiet, "No per-frame progress");

    std::string eval_run, eval_seq, eval_out;
    std::size_t eval_samples = 20000;
    std::uint64_t eval_seed = 0;
    CLI::App *eval_cmd = app.add_subcommand("eval", "Recompute metrics for a finished run");
    eval_cmd->add_option("--run", eval_run, "Run directory")->required();
    eval_cmd->add_option("--seq", eval_seq, "Sequence directory")->required();
    eval_cmd->add_option("--out", eval_out, "Report directory (default: the run directory)");
    eval_cmd->add_option("--samples", eval_samples, "Chamfer subsample size")->check(CLI::PositiveNumber);
    eval_cmd->add_option("--seed", eval_seed, "Chamfer sampling seed");

    RenderArgs ra;
    CLI::App *render_cmd = app.add_subcommand("render", "Render a cloud snapshot to PNG");
    render_cmd->add_option("--cloud", ra.cloud, "Cloud PLY")->required();
    render_cmd->add_option("--seq", ra.seq, "Take intrinsics (and the pose of --frame) from a sequence");
    render_cmd->add_option("--frame", ra.frame, "Frame index in --seq");
    render_cmd->add_option("--pose", ra.pose, "tx ty tz qw qx qy qz (T_CO)")->expected(7);
    add_intrinsics(render_cmd, ra.width, ra.height, ra.fx, ra.fy, ra.cx, ra.cy);
    render_cmd->add_option("--out", ra.out, "Color PNG")->required();
    render_cmd->add_option("--depth-out", ra.depth_out, "Optional 16-bit depth PNG, millimeters");

    GradcheckOptions go;
    CLI::App *gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
    gc_cmd->add_option("--seeds", go.seeds, "Random scenes")->check(CLI::PositiveNumber)->capture_default_str();
    gc_cmd->add_option("--scene-size", go.gaussians, "Gaussians per scene")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    gc_cmd->add_option("--image-size", go.image_size, "Square image side")
        ->check(CLI::Range(11, 4096))
        ->capture_default_str();
    gc_cmd->add_option("--tolerance", go.tolerance, "Relative error bound")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    gc_cmd->add_option("--seed", go.seed, "First scene seed")->capture_default_str();
    gc_cmd->add_flag("--corrupt", go.corrupt)->group("");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp &) {
        out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
        return kOk;
    } catch (const CLI::ParseError &e) {
        err << "gstrack: " << e.what() << "\n";
        return kUsage;
    }

    const WarningSink saved = set_warning_sink([&err](const std::string &m) { err << "warning: " << m << "\n"; });
    struct Restore {
        WarningSink s;
        ~Restore() { set_warning_sink(std::move(s)); }
    } restore{saved};
    try {
        if (gen_cmd->parsed()) {
            return cmd_gen(gen, out);
        }
        if (track_cmd->parsed()) {
            RunConfig cfg;
            if (!config_file.empty()) {
                cfg = run_config_from_json(read_text_file(config_file));
            }
            if (seq_opt->count()) {
                cfg.seq = rc.seq;
            }
            if (out_opt->count()) {
                cfg.out = rc.out;
            }
            if (gt_opt->count()) {
                cfg.gt_init = true;
            }
            if (det_opt->count()) {
                cfg.deterministic = true;
            }
            if (noise_opt->count()) {
                cfg.noise = track_noise == "default" ? std::optional<NoiseSpec>(NoiseSpec{}) : std::nullopt;
            }
            if (noise_seed_opt->count()) {
                if (!cfg.noise) {
                    throw UsageError("--noise-seed needs load-time noise");
                }
                cfg.noise->seed = noise_seed;
            }
            if (recon_opt->count()) {
                cfg.pipeline.recon_steps = recon_steps;
            }
            if (track_opt->count()) {
                cfg.pipeline.track_steps = track_steps;
            }
            if (seed_opt->count()) {
                cfg.pipeline.seed = seed;
            }
            if (max_opt->count()) {
                cfg.max_frames = max_frames;
            }
            return cmd_track(cfg, quiet, out);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(eval_run, eval_seq, eval_out, eval_samples, eval_seed, out);
        }
        if (render_cmd->parsed()) {
            return cmd_render(ra, out);
        }
        if (gc_cmd->parsed()) {
            return cmd_gradcheck(go, out);
        }
    } catch (const UsageError &e) {
        err << "gstrack: " << e.what() << "\n";
        return kUsage;
    } catch (const std::invalid_argument &e) {
        err << "gstrack: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception &e) {
        err << "gstrack: " << e.what() << "\n";
        return kRuntime;
    }
    return kUsage;
}

} // namespace gstrack::cli
