// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include "gstrack/dataio.hpp"
#include "gstrack/eval.hpp"
#include "gstrack/gradcheck.hpp"
#include "gstrack/loss.hpp"
#include "gstrack/pipeline.hpp"
#include "gstrack/raster.hpp"
#include "gstrack/synthgen.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace gstrack;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> image_to_numpy(const ImageD &img) {
    std::vector<py::ssize_t> shape = {img.height(), img.width()};
    if (img.channels() > 1) {
        shape.push_back(img.channels());
    }
    py::array_t<double> a(shape);
    std::copy(img.data().begin(), img.data().end(), a.mutable_data());
    return a;
}

ImageD numpy_to_image(const Array &a, int channels, const char *what) {
    const bool ok = channels == 1 ? (a.ndim() == 2 || (a.ndim() == 3 && a.shape(2) == 1))
                                  : (a.ndim() == 3 && a.shape(2) == channels);
    if (!ok) {
        throw std::invalid_argument(std::string(what) + ": expected shape (H, W" +
                                    (channels == 1 ? "" : ", " + std::to_string(channels)) + ")");
    }
    ImageD img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), channels);
    std::copy(a.data(), a.data() + img.size(), img.data().begin());
    return img;
}

py::array_t<double> rows(std::span<const double> flat, int width) {
    const py::ssize_t n = static_cast<py::ssize_t>(flat.size()) / width;
    py::array_t<double> a = width == 1 ? py::array_t<double>({n}) : py::array_t<double>({n, py::ssize_t(width)});
    std::copy(flat.begin(), flat.end(), a.mutable_data());
    return a;
}

void check_rows(const Array &a, std::size_t n, int width, const char *what) {
    const bool ok = width == 1 ? (a.ndim() == 1 && std::size_t(a.shape(0)) == n)
                               : (a.ndim() == 2 && std::size_t(a.shape(0)) == n && a.shape(1) == width);
    if (!ok) {
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(n) + " rows of " +
                                    std::to_string(width));
    }
}

GaussianCloud cloud_from_arrays(const Array &means, const Array &log_scales, const Array &rotations,
                                const Array &opacity_logits, const Array &colors) {
    if (means.ndim() != 2 || means.shape(1) != 3) {
        throw std::invalid_argument("means: expected shape (N, 3)");
    }
    const std::size_t n = means.shape(0);
    check_rows(log_scales, n, 3, "log_scales");
    check_rows(rotations, n, 4, "rotations");
    check_rows(opacity_logits, n, 1, "opacity_logits");
    check_rows(colors, n, 3, "colors");
    GaussianCloud c;
    c.reserve(n);
    const double *m = means.data(), *s = log_scales.data(), *r = rotations.data(), *o = opacity_logits.data(),
                 *k = colors.data();
    for (std::size_t i = 0; i < n; ++i) {
        c.add({m[3 * i], m[3 * i + 1], m[3 * i + 2]}, {s[3 * i], s[3 * i + 1], s[3 * i + 2]},
              {r[4 * i], r[4 * i + 1], r[4 * i + 2], r[4 * i + 3]}, o[i], {k[3 * i], k[3 * i + 1], k[3 * i + 2]});
    }
    c.validate();
    return c;
}

Vec3 vec3(const Array &a) {
    if (a.size() != 3) {
        throw std::invalid_argument("expected 3 values");
    }
    return {a.data()[0], a.data()[1], a.data()[2]};
}

Quaternion quat(const Array &q) {
    if (q.size() != 4) {
        throw std::invalid_argument("q: expected 4 values (w, x, y, z)");
    }
    return {q.data()[0], q.data()[1], q.data()[2], q.data()[3]};
}

Pose pose_from(const Array &t, const Array &q) { return {quat(q), vec3(t)}; }

FrameObservation frame_from(const Array &color, const Array &depth, const py::array_t<std::uint8_t> &mask) {
    FrameObservation f;
    f.color = numpy_to_image(color, 3, "color");
    f.depth = numpy_to_image(depth, 1, "depth");
    if (mask.size() != static_cast<py::ssize_t>(f.depth.size())) {
        throw std::invalid_argument("mask: expected shape (H, W)");
    }
    f.mask = Mask(f.depth.height(), f.depth.width(), 1);
    const std::uint8_t *p = mask.data();
    for (std::size_t k = 0; k < f.mask.size(); ++k) {
        f.mask.data()[k] = p[k] ? 1 : 0;
    }
    f.validate();
    return f;
}

py::dict frame_to_dict(const FrameObservation &f) {
    py::dict d;
    d["index"] = f.index;
    d["color"] = image_to_numpy(f.color);
    d["depth"] = image_to_numpy(f.depth);
    py::array_t<std::uint8_t> m({py::ssize_t(f.height()), py::ssize_t(f.width())});
    std::copy(f.mask.data().begin(), f.mask.data().end(), m.mutable_data());
    d["mask"] = m;
    d["gt_pose"] = f.gt_pose ? py::cast(*f.gt_pose) : py::none();
    return d;
}

py::dict render_dict(const RenderOutput &r) {
    py::dict d;
    d["color"] = image_to_numpy(r.color);
    d["depth"] = image_to_numpy(r.depth);
    d["alpha"] = image_to_numpy(r.alpha);
    return d;
}

py::dict loss_dict(const LossResult &l, const RenderGradients &g, bool with_cloud) {
    py::dict d;
    d["total"] = l.report.total;
    d["l1_color"] = l.report.l1_color;
    d["ssim"] = l.report.ssim;
    d["l1_depth"] = l.report.l1_depth;
    py::array_t<double> pose(7);
    std::copy(g.pose.data(), g.pose.data() + 7, pose.mutable_data());
    d["pose_grad"] = pose;
    if (with_cloud) {
        py::dict c;
        for (ParamGroup grp : kAllGroups) {
            c[group_name(grp)] = rows(g.cloud.group(grp), group_width(grp));
        }
        d["cloud_grad"] = c;
    }
    return d;
}

} // namespace

PYBIND11_MODULE(_gstrack, m) {
    m.doc() = "Gaussian-splatting object reconstruction and 6-DoF tracking";

    py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
    py::register_exception<InitializationError>(m, "InitializationError", PyExc_RuntimeError);

    py::class_<CameraIntrinsics>(m, "Intrinsics")
        .def(py::init([](double fx, double fy, double cx, double cy, int width, int height, double near, double far) {
                 CameraIntrinsics c{fx, fy, cx, cy, width, height, near, far};
                 c.validate();
                 return c;
             }),
             py::arg("fx") = 400.0, py::arg("fy") = 400.0, py::arg("cx") = 80.0, py::arg("cy") = 60.0,
             py::arg("width") = 160, py::arg("height") = 120, py::arg("near") = 0.01, py::arg("far") = 1000.0)
        .def_readonly("fx", &CameraIntrinsics::fx)
        .def_readonly("fy", &CameraIntrinsics::fy)
        .def_readonly("cx", &CameraIntrinsics::cx)
        .def_readonly("cy", &CameraIntrinsics::cy)
        .def_readonly("width", &CameraIntrinsics::width)
        .def_readonly("height", &CameraIntrinsics::height)
        .def_readonly("near", &CameraIntrinsics::near)
        .def_readonly("far", &CameraIntrinsics::far)
        .def("__eq__", [](const CameraIntrinsics &a, const CameraIntrinsics &b) { return a == b; });

    py::class_<Pose>(m, "Pose", "Rigid transform T_CO; q is (w, x, y, z)")
        .def(py::init([](const Array &t, const Array &q) { return pose_from(t, q); }), py::arg("t"), py::arg("q"))
        .def(py::init([]() { return Pose::identity(); }))
        .def_property_readonly("t",
                               [](const Pose &p) {
                                   py::array_t<double> a(3);
                                   std::copy(p.translation.data(), p.translation.data() + 3, a.mutable_data());
                                   return a;
                               })
        .def_property_readonly("q",
                               [](const Pose &p) {
                                   py::array_t<double> a(4);
                                   const double v[4] = {p.rotation.w, p.rotation.x, p.rotation.y, p.rotation.z};
                                   std::copy(v, v + 4, a.mutable_data());
                                   return a;
                               })
        .def("matrix",
             [](const Pose &p) {
                 py::array_t<double> a({4, 4});
                 auto r = a.mutable_unchecked<2>();
                 const Mat3 rot = p.rotation_matrix();
                 for (int i = 0; i < 4; ++i) {
                     for (int j = 0; j < 4; ++j) {
                         r(i, j) = i < 3 ? (j < 3 ? rot(i, j) : p.translation[i]) : (j == 3 ? 1.0 : 0.0);
                     }
                 }
                 return a;
             })
        .def("inverse", &Pose::inverse)
        .def("__mul__", [](const Pose &a, const Pose &b) { return a * b; })
        .def("__repr__", [](const Pose &p) {
            std::ostringstream s;
            s.precision(6);
            s << "Pose(t=[" << p.translation.x() << ", " << p.translation.y() << ", " << p.translation.z()
              << "], q=[" << p.rotation.w << ", " << p.rotation.x << ", " << p.rotation.y << ", " << p.rotation.z
              << "])";
            return s.str();
        });

    m.def("rotation_distance",
          [](const Array &q1, const Array &q2) { return rotation_distance(quat(q1), quat(q2)); },
          py::arg("q1"), py::arg("q2"), "Geodesic angle in radians, folded over the double cover");
    m.def("extrapolate_pose", &extrapolate_pose, py::arg("prev"), py::arg("curr"));

    py::class_<GaussianCloud>(m, "GaussianCloud")
        .def(py::init<>())
        .def(py::init(&cloud_from_arrays), py::arg("means"), py::arg("log_scales"), py::arg("rotations"),
             py::arg("opacity_logits"), py::arg("colors"))
        .def("__len__", &GaussianCloud::size)
        .def_property_readonly("means", [](const GaussianCloud &c) { return rows(c.params(ParamGroup::Means), 3); })
        .def_property_readonly("log_scales",
                               [](const GaussianCloud &c) { return rows(c.params(ParamGroup::LogScales), 3); })
        .def_property_readonly("rotations",
                               [](const GaussianCloud &c) { return rows(c.params(ParamGroup::Rotations), 4); })
        .def_property_readonly("opacity_logits",
                               [](const GaussianCloud &c) { return rows(c.params(ParamGroup::OpacityLogits), 1); })
        .def_property_readonly("colors", [](const GaussianCloud &c) { return rows(c.params(ParamGroup::Colors), 3); })
        .def("extent", &GaussianCloud::extent)
        .def("save_ply", [](const GaussianCloud &c, const std::filesystem::path &p) { save_ply(c, p); })
        .def_static("load_ply", &load_ply, py::arg("path"));

    m.def(
        "render",
        [](const GaussianCloud &c, const Pose &p, const CameraIntrinsics &intr, bool reference) {
            py::gil_scoped_release release;
            RenderOutput r = reference ? render_reference(c, p, intr) : render(c, p, intr);
            py::gil_scoped_acquire acquire;
            return render_dict(r);
        },
        py::arg("cloud"), py::arg("pose"), py::arg("intrinsics"), py::arg("reference") = false,
        "Returns color (H, W, 3), unnormalized depth (H, W) and alpha (H, W)");

    m.def(
        "loss",
        [](const GaussianCloud &c, const Pose &p, const CameraIntrinsics &intr, const Array &color,
           const Array &depth, const py::array_t<std::uint8_t> &mask, const std::string &kind, double lam,
           double beta) {
            const FrameObservation f = frame_from(color, depth, mask);
            const LossWeights w{lam, beta};
            const RenderOutput out = render(c, p, intr);
            LossResult l;
            if (kind == "recon") {
                l = recon_loss(out, f, w);
            } else if (kind == "track") {
                l = track_loss(out, f, w);
            } else {
                throw std::invalid_argument("kind must be 'recon' or 'track'");
            }
            const RenderGradients g = render_backward(out, l.dL_dcolor, l.dL_ddepth, l.dL_dalpha, c, p, intr, {});
            return loss_dict(l, g, kind == "recon");
        },
        py::arg("cloud"), py::arg("pose"), py::arg("intrinsics"), py::arg("color"), py::arg("depth"),
        py::arg("mask"), py::arg("kind") = "track", py::arg("lam") = 0.2, py::arg("beta") = 0.2,
        "Loss terms, the pose gradient (tx, ty, tz, qw, qx, qy, qz) and, for 'recon', per-group cloud gradients");

    m.def(
        "make_toy_object",
        [](const std::string &kind, double spacing, std::uint64_t seed) {
            ToyObject o = make_toy_object(parse_toy_kind(kind), spacing, seed);
            std::vector<double> flat;
            for (const Vec3 &p : o.surface_points) {
                flat.insert(flat.end(), {p.x(), p.y(), p.z()});
            }
            return py::make_tuple(o.cloud, rows(flat, 3), o.extent);
        },
        py::arg("kind") = "cuboid-sat", py::arg("spacing") = 0.08, py::arg("seed") = 0,
        "Returns (cloud, surface_points, extent)");

    m.def(
        "spiral_trajectory",
        [](double radius, double turns, int frames) { return make_spiral_trajectory({radius, turns, frames}); },
        py::arg("radius") = 16.0, py::arg("turns") = 3.0, py::arg("frames") = 100);

    m.def(
        "load_sequence",
        [](const std::filesystem::path &root) {
            SequenceMeta meta;
            const auto frames = load_sequence(root, &meta);
            py::list out;
            for (const auto &f : frames) {
                out.append(frame_to_dict(f));
            }
            return py::make_tuple(meta.intr, out);
        },
        py::arg("root"), "Returns (intrinsics, frames)");

    m.def(
        "chamfer",
        [](const Array &a, const Array &b, std::size_t samples, std::uint64_t seed) {
            auto pts = [](const Array &x, const char *what) {
                if (x.ndim() != 2 || x.shape(1) != 3) {
                    throw std::invalid_argument(std::string(what) + ": expected shape (N, 3)");
                }
                std::vector<Vec3> v(x.shape(0));
                for (std::size_t i = 0; i < v.size(); ++i) {
                    v[i] = {x.data()[3 * i], x.data()[3 * i + 1], x.data()[3 * i + 2]};
                }
                return v;
            };
            const ChamferResult r = chamfer(pts(a, "a"), pts(b, "b"), samples, seed);
            return py::make_tuple(r.mean, r.std);
        },
        py::arg("a"), py::arg("b"), py::arg("samples") = 20000, py::arg("seed") = 0, "Returns (mean, std)");

    m.def(
        "pose_errors",
        [](const std::vector<Pose> &est, const std::vector<Pose> &gt) {
            const auto e = pose_errors(est, gt);
            py::array_t<double> a({py::ssize_t(e.size()), py::ssize_t(2)});
            auto r = a.mutable_unchecked<2>();
            for (std::size_t i = 0; i < e.size(); ++i) {
                r(i, 0) = e[i].t_err;
                r(i, 1) = e[i].theta_err_deg;
            }
            return a;
        },
        py::arg("est"), py::arg("gt"), "Per-frame (t_err meters, theta_err degrees)");

    m.def(
        "gradcheck",
        [](int seeds, int gaussians, int image_size, double tolerance, std::uint64_t seed) {
            GradcheckOptions o;
            o.seeds = seeds;
            o.gaussians = gaussians;
            o.image_size = image_size;
            o.tolerance = tolerance;
            o.seed = seed;
            GradcheckReport r;
            {
                py::gil_scoped_release release;
                r = run_gradcheck(o);
            }
            py::dict d;
            d["passed"] = r.passed;
            d["worst_recon"] = r.worst_recon;
            d["worst_track"] = r.worst_track;
            d["worst_entry"] = r.worst_entry;
            d["checked"] = r.checked;
            d["kinks"] = r.kinks;
            d["seconds"] = r.seconds;
            return d;
        },
        py::arg("seeds") = 50, py::arg("gaussians") = 8, py::arg("image_size") = 32, py::arg("tolerance") = 1e-3,
        py::arg("seed") = 0);

    m.def(
        "track_sequence",
        [](const std::filesystem::path &seq, bool gt_init, const std::string &config_json, int max_frames) {
            const PipelineConfig cfg = config_json.empty() ? PipelineConfig{} : config_from_json(config_json);
            RunResult res;
            {
                py::gil_scoped_release release;
                SequenceReader reader(seq);
                const int n = max_frames > 0 ? std::min(max_frames, reader.meta().frame_count)
                                             : reader.meta().frame_count;
                RunOptions opts;
                opts.gt_init = gt_init;
                if (std::filesystem::exists(seq / "gt_points.ply")) {
                    opts.gt_points = load_points_ply(seq / "gt_points.ply");
                }
                int k = 0;
                res = process_sequence(
                    [&]() -> std::optional<FrameObservation> {
                        if (k++ >= n) {
                            return std::nullopt;
                        }
                        return reader.next();
                    },
                    n, reader.meta().intr, cfg, opts);
            }
            py::dict d;
            std::vector<Pose> poses;
            std::vector<std::string> phases;
            for (const FrameRecord &r : res.records) {
                poses.push_back(r.pose);
                phases.push_back(phase_name(r.phase));
            }
            d["poses"] = poses;
            d["phases"] = phases;
            py::dict cd;
            for (const CheckpointMetric &c : res.metrics.chamfer) {
                cd[py::int_(c.frame)] = py::make_tuple(c.mean, c.std);
            }
            d["chamfer"] = cd;
            py::list errs;
            for (const PoseError &e : res.metrics.errors) {
                errs.append(py::make_tuple(e.t_err, e.theta_err_deg));
            }
            d["errors"] = errs;
            d["cloud"] = res.state.cloud;
            d["timing"] = res.metrics.timing;
            return d;
        },
        py::arg("seq"), py::arg("gt_init") = false, py::arg("config_json") = "", py::arg("max_frames") = 0,
        "Runs the full pipeline over a sequence directory");

    m.def("default_config_json", []() { return config_to_json(PipelineConfig{}); });

    m.def(
        "run_cli",
        [](const std::vector<std::string> &args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a gstrack subcommand; returns (exit_code, stdout, stderr)");
}
