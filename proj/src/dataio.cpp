// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/dataio.hpp"

#include "gstrack/log.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <fstream>
#include <random>
#include <sstream>

namespace gstrack {

namespace fs = std::filesystem;
using nlohmann::json;

void NoiseSpec::validate() const {
    if (!(color_std >= 0.0) || !(depth_std >= 0.0)) {
        throw std::invalid_argument("NoiseSpec: standard deviations must be non-negative");
    }
    if (bleed_px < 0) {
        throw std::invalid_argument("NoiseSpec: bleed_px must be non-negative");
    }
}

namespace {

struct RawPng {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 0;
    std::vector<std::uint16_t> samples; // row-major, interleaved
};

struct FileCloser {
    void operator()(std::FILE *f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngErrorBuffer {
    char message[256] = "unknown libpng error";
};

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
    auto *buf = static_cast<PngErrorBuffer *>(png_get_error_ptr(png));
    std::snprintf(buf->message, sizeof(buf->message), "%s", msg);
    png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

// libpng reports errors by longjmp; every object with a destructor is
// created before setjmp so that the jump skips none of them.
void write_png(const fs::path &path, const RawPng &img) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) {
        throw DataError("cannot write " + path.string());
    }
    const int bytes = img.bit_depth / 8;
    const std::size_t per_row = static_cast<std::size_t>(img.width) * img.channels;
    std::vector<png_byte> buf(per_row * bytes * img.height);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) {
        png_byte *row = buf.data() + per_row * bytes * y;
        rows[y] = row;
        for (std::size_t k = 0; k < per_row; ++k) {
            const std::uint16_t v = img.samples[y * per_row + k];
            if (bytes == 2) {
                row[2 * k] = static_cast<png_byte>(v >> 8);
                row[2 * k + 1] = static_cast<png_byte>(v & 0xff);
            } else {
                row[k] = static_cast<png_byte>(v);
            }
        }
    }
    PngErrorBuffer err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError(path.string() + ": libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError(path.string() + ": " + err.message);
    }
    png_init_io(png, f.get());
    const int color_type = img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), img.bit_depth,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(f.get()) != 0) {
        throw DataError("write failed: " + path.string());
    }
}

// Header fields and decoded bytes of a PNG, filled under setjmp.
struct PngDecode {
    png_uint_32 width = 0, height = 0;
    int channels = 0, bit_depth = 0;
    std::size_t rowbytes = 0;
};

bool decode_png(std::FILE *f, PngErrorBuffer &err, PngDecode &d, std::vector<png_byte> &buf,
                std::vector<png_bytep> &rows) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_init_io(png, f);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    }
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (color_type & PNG_COLOR_MASK_ALPHA) {
        png_set_strip_alpha(png);
    }
    png_set_interlace_handling(png);
    png_read_update_info(png, info);
    d.width = png_get_image_width(png, info);
    d.height = png_get_image_height(png, info);
    d.channels = png_get_channels(png, info);
    d.bit_depth = png_get_bit_depth(png, info);
    d.rowbytes = png_get_rowbytes(png, info);
    if (d.width > 1u << 15 || d.height > 1u << 15) {
        std::snprintf(err.message, sizeof(err.message), "image too large");
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    buf.resize(d.rowbytes * d.height);
    rows.resize(d.height);
    for (png_uint_32 y = 0; y < d.height; ++y) {
        rows[y] = buf.data() + d.rowbytes * y;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

RawPng read_png(const fs::path &path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) {
        throw DataError("cannot open " + path.string());
    }
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw DataError(path.string() + ": not a PNG file");
    }
    PngErrorBuffer err;
    PngDecode d;
    std::vector<png_byte> buf;
    std::vector<png_bytep> rows;
    if (!decode_png(f.get(), err, d, buf, rows)) {
        throw DataError(path.string() + ": " + err.message);
    }
    RawPng img;
    img.width = static_cast<int>(d.width);
    img.height = static_cast<int>(d.height);
    img.channels = d.channels;
    img.bit_depth = d.bit_depth;
    const std::size_t per_row = static_cast<std::size_t>(img.width) * img.channels;
    img.samples.resize(per_row * img.height);
    for (int y = 0; y < img.height; ++y) {
        const png_byte *p = rows[y];
        for (std::size_t k = 0; k < per_row; ++k) {
            img.samples[y * per_row + k] =
                img.bit_depth == 16 ? static_cast<std::uint16_t>((p[2 * k] << 8) | p[2 * k + 1]) : p[k];
        }
    }
    return img;
}

std::uint16_t encode_color(double v) { return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::uint16_t encode_depth(double d, double scale_mm) {
    const double units = std::round(std::max(d, 0.0) * 1000.0 / scale_mm);
    return static_cast<std::uint16_t>(std::min(units, 65535.0));
}

double decode_depth(std::uint16_t v, double scale_mm) { return v * scale_mm / 1000.0; }

} // namespace

void write_color_png(const fs::path &path, const ImageD &color) {
    if (color.channels() != 3) {
        throw std::invalid_argument("write_color_png: expected 3 channels");
    }
    RawPng img{color.width(), color.height(), 3, 8, {}};
    img.samples.reserve(color.size());
    for (double v : color.data()) img.samples.push_back(encode_color(v));
    write_png(path, img);
}

void write_depth_png(const fs::path &path, const ImageD &depth, double scale_mm) {
    RawPng img{depth.width(), depth.height(), 1, 16, {}};
    img.samples.reserve(depth.size());
    for (double v : depth.data()) img.samples.push_back(encode_depth(v, scale_mm));
    write_png(path, img);
}

void write_mask_png(const fs::path &path, const Mask &mask) {
    RawPng img{mask.width(), mask.height(), 1, 8, {}};
    img.samples.reserve(mask.size());
    for (auto v : mask.data()) img.samples.push_back(v ? 255 : 0);
    write_png(path, img);
}

ImageD read_color_png(const fs::path &path) {
    const RawPng raw = read_png(path);
    if (raw.bit_depth != 8 || (raw.channels != 3 && raw.channels != 1)) {
        throw DataError(path.string() + ": expected 8-bit RGB color");
    }
    ImageD out(raw.height, raw.width, 3);
    for (std::size_t p = 0; p < out.pixels(); ++p) {
        for (int c = 0; c < 3; ++c) {
            const std::uint16_t v = raw.samples[p * raw.channels + (raw.channels == 3 ? c : 0)];
            out.data()[3 * p + c] = v / 255.0;
        }
    }
    return out;
}

ImageD read_depth_png(const fs::path &path, double scale_mm) {
    const RawPng raw = read_png(path);
    if (raw.bit_depth != 16 || raw.channels != 1) {
        throw DataError(path.string() + ": expected 16-bit single-channel depth");
    }
    ImageD out(raw.height, raw.width, 1);
    for (std::size_t p = 0; p < out.pixels(); ++p) {
        out.data()[p] = decode_depth(raw.samples[p], scale_mm);
    }
    return out;
}

Mask read_mask_png(const fs::path &path) {
    const RawPng raw = read_png(path);
    if (raw.channels != 1) {
        throw DataError(path.string() + ": expected single-channel mask");
    }
    Mask out(raw.height, raw.width, 1);
    for (std::size_t p = 0; p < out.pixels(); ++p) {
        out.data()[p] = raw.samples[p] != 0 ? 1 : 0;
    }
    return out;
}

FrameObservation quantize_frame(const FrameObservation &frame, double scale_mm) {
    FrameObservation q = frame;
    for (auto &v : q.color.data()) v = encode_color(v) / 255.0;
    for (auto &v : q.depth.data()) v = decode_depth(encode_depth(v, scale_mm), scale_mm);
    for (auto &v : q.mask.data()) v = v ? 1 : 0;
    return q;
}

fs::path frame_path(const fs::path &root, int index, const char *kind) {
    char name[64];
    std::snprintf(name, sizeof(name), "%06d.%s.png", index, kind);
    return root / "frames" / name;
}

std::string read_text_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
}

namespace {

json meta_to_json(const SequenceMeta &m) {
    json j;
    j["format"] = "gstrack-sequence";
    j["version"] = 1;
    j["frame_count"] = m.frame_count;
    j["intrinsics"] = {{"fx", m.intr.fx},       {"fy", m.intr.fy},         {"cx", m.intr.cx},
                       {"cy", m.intr.cy},       {"width", m.intr.width},   {"height", m.intr.height},
                       {"near", m.intr.near},   {"far", m.intr.far}};
    j["depth_scale_mm"] = m.depth_scale_mm;
    if (m.noise) {
        j["noise"] = {{"color_std", m.noise->color_std},
                      {"depth_std", m.noise->depth_std},
                      {"bleed_px", m.noise->bleed_px},
                      {"seed", m.noise->seed}};
    } else {
        j["noise"] = nullptr;
    }
    return j;
}

json pose_json(int frame, const Pose &p) {
    return {{"frame", frame},
            {"t", {p.translation.x(), p.translation.y(), p.translation.z()}},
            {"q", {p.rotation.w, p.rotation.x, p.rotation.y, p.rotation.z}}};
}

} // namespace

void save_poses(const fs::path &path, const std::vector<Pose> &poses) {
    json arr = json::array();
    for (std::size_t i = 0; i < poses.size(); ++i) {
        arr.push_back(pose_json(static_cast<int>(i), poses[i]));
    }
    write_text_file(path, arr.dump(2) + "\n");
}

void save_sequence(const fs::path &root, const SequenceMeta &meta, const std::vector<FrameObservation> &frames,
                   const std::string &extra_json) {
    if (static_cast<int>(frames.size()) != meta.frame_count) {
        throw std::invalid_argument("save_sequence: frame_count does not match the frames given");
    }
    fs::create_directories(root / "frames");
    json j = meta_to_json(meta);
    j["generator"] = json::parse(extra_json);
    write_text_file(root / "meta.json", j.dump(2) + "\n");
    std::vector<Pose> poses;
    for (const auto &f : frames) {
        if (f.gt_pose) poses.push_back(*f.gt_pose);
    }
    if (poses.size() == frames.size()) {
        save_poses(root / "poses.json", poses);
    }
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const int idx = static_cast<int>(i);
        write_color_png(frame_path(root, idx, "color"), frames[i].color);
        write_depth_png(frame_path(root, idx, "depth"), frames[i].depth, meta.depth_scale_mm);
        write_mask_png(frame_path(root, idx, "mask"), frames[i].mask);
    }
}

SequenceMeta load_meta(const fs::path &root) {
    const fs::path path = root / "meta.json";
    SequenceMeta m;
    try {
        const json j = json::parse(read_text_file(path));
        const json &in = j.at("intrinsics");
        m.intr.fx = in.at("fx").get<double>();
        m.intr.fy = in.at("fy").get<double>();
        m.intr.cx = in.at("cx").get<double>();
        m.intr.cy = in.at("cy").get<double>();
        m.intr.width = in.at("width").get<int>();
        m.intr.height = in.at("height").get<int>();
        m.intr.near = in.value("near", m.intr.near);
        m.intr.far = in.value("far", m.intr.far);
        m.frame_count = j.at("frame_count").get<int>();
        m.depth_scale_mm = j.value("depth_scale_mm", 1.0);
        if (j.contains("noise") && !j.at("noise").is_null()) {
            const json &n = j.at("noise");
            NoiseSpec s;
            s.color_std = n.at("color_std").get<double>();
            s.depth_std = n.at("depth_std").get<double>();
            s.bleed_px = n.at("bleed_px").get<int>();
            s.seed = n.at("seed").get<std::uint64_t>();
            m.noise = s;
        }
        m.intr.validate();
    } catch (const DataError &) {
        throw;
    } catch (const std::exception &e) {
        throw DataError(path.string() + ": malformed meta: " + e.what());
    }
    if (m.frame_count < 1) {
        throw DataError(path.string() + ": frame_count must be at least 1");
    }
    if (!(m.depth_scale_mm > 0.0)) {
        throw DataError(path.string() + ": depth_scale_mm must be positive");
    }
    return m;
}

std::vector<std::optional<Pose>> load_poses(const fs::path &root, int frame_count) {
    std::vector<std::optional<Pose>> poses(static_cast<std::size_t>(frame_count));
    const fs::path path = root / "poses.json";
    if (!fs::exists(path)) {
        return poses;
    }
    try {
        const json j = json::parse(read_text_file(path));
        for (const json &e : j) {
            const int f = e.at("frame").get<int>();
            if (f < 0 || f >= frame_count) {
                throw DataError(path.string() + ": frame " + std::to_string(f) + " out of range");
            }
            const auto t = e.at("t").get<std::vector<double>>();
            const auto q = e.at("q").get<std::vector<double>>();
            if (t.size() != 3 || q.size() != 4) {
                throw DataError(path.string() + ": pose of frame " + std::to_string(f) + " has wrong arity");
            }
            poses[f] = Pose{{q[0], q[1], q[2], q[3]}, {t[0], t[1], t[2]}};
        }
    } catch (const DataError &) {
        throw;
    } catch (const std::exception &e) {
        throw DataError(path.string() + ": malformed poses: " + e.what());
    }
    return poses;
}

SequenceReader::SequenceReader(fs::path root) : root_(std::move(root)) {
    if (!fs::is_directory(root_)) {
        throw DataError("sequence directory not found: " + root_.string());
    }
    meta_ = load_meta(root_);
    poses_ = load_poses(root_, meta_.frame_count);
    for (int i = 0; i < meta_.frame_count; ++i) {
        for (const char *kind : {"color", "depth"}) {
            const fs::path p = frame_path(root_, i, kind);
            if (!fs::exists(p)) {
                throw DataError("missing frame file " + p.string());
            }
        }
    }
    prefetch();
}

SequenceReader::~SequenceReader() {
    if (pending_.valid()) {
        pending_.wait();
    }
}

FrameObservation SequenceReader::decode(int index) const {
    FrameObservation f;
    f.index = index;
    const fs::path cp = frame_path(root_, index, "color"), dp = frame_path(root_, index, "depth"),
                   mp = frame_path(root_, index, "mask");
    f.color = read_color_png(cp);
    if (f.color.height() != meta_.intr.height || f.color.width() != meta_.intr.width) {
        throw DataError(cp.string() + ": image size differs from meta.json");
    }
    f.depth = read_depth_png(dp, meta_.depth_scale_mm);
    if (!f.depth.same_extent(f.color)) {
        throw DataError(dp.string() + ": shape differs from the color image");
    }
    if (fs::exists(mp)) {
        f.mask = read_mask_png(mp);
        if (!f.mask.same_extent(f.color)) {
            throw DataError(mp.string() + ": shape differs from the color image");
        }
    } else {
        warn("missing mask " + mp.string() + ", using the full frame");
        f.mask = Mask(f.color.height(), f.color.width(), 1, 1);
    }
    f.gt_pose = poses_[static_cast<std::size_t>(index)];
    return f;
}

void SequenceReader::prefetch() {
    if (next_index_ < meta_.frame_count) {
        pending_ = std::async(std::launch::async, [this, i = next_index_] { return decode(i); });
    }
}

std::optional<FrameObservation> SequenceReader::next() {
    if (next_index_ >= meta_.frame_count) {
        return std::nullopt;
    }
    FrameObservation f = pending_.get();
    ++next_index_;
    prefetch();
    return f;
}

std::vector<FrameObservation> load_sequence(const fs::path &root, SequenceMeta *meta) {
    SequenceReader reader(root);
    if (meta) {
        *meta = reader.meta();
    }
    std::vector<FrameObservation> frames;
    while (auto f = reader.next()) {
        frames.push_back(std::move(*f));
    }
    return frames;
}

ImageD bleed_depth_edges(const ImageD &depth, const Mask &mask, double threshold, int bleed_px) {
    ImageD cur = depth;
    const int h = depth.height(), w = depth.width();
    constexpr int kDx[4] = {1, -1, 0, 0};
    constexpr int kDy[4] = {0, 0, 1, -1};
    for (int pass = 0; pass < bleed_px; ++pass) {
        ImageD next = cur;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double d = cur(y, x);
                if (mask(y, x) == 0 || !(d > 0.0)) {
                    continue;
                }
                double best = d;
                for (int k = 0; k < 4; ++k) {
                    const int nx = x + kDx[k], ny = y + kDy[k];
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) {
                        continue;
                    }
                    const double nd = cur(ny, nx);
                    if (nd > 0.0 && d - nd > threshold && nd < best) {
                        best = nd;
                    }
                }
                next(y, x) = best;
            }
        }
        cur = std::move(next);
    }
    return cur;
}

FrameObservation add_noise(const FrameObservation &frame, std::uint64_t seed, double color_std, double depth_std,
                           int bleed_px) {
    NoiseSpec{color_std, depth_std, bleed_px, seed}.validate();
    FrameObservation out = frame;
    // Below one centimeter a "discontinuity" is just a slanted surface.
    const double threshold = std::max(10.0 * depth_std, 0.01);
    out.depth = bleed_depth_edges(frame.depth, frame.mask, threshold, bleed_px);

    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(frame.index), 0x9e3779b9u};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int y = 0; y < frame.height(); ++y) {
        for (int x = 0; x < frame.width(); ++x) {
            if (frame.mask(y, x) == 0) {
                continue;
            }
            for (int c = 0; c < 3; ++c) {
                const double n = unit(rng);
                if (color_std > 0.0) {
                    out.color(y, x, c) = std::clamp(out.color(y, x, c) + color_std * n, 0.0, 1.0);
                }
            }
            const double n = unit(rng);
            if (depth_std > 0.0 && out.depth(y, x) > 0.0) {
                out.depth(y, x) = std::max(0.0, out.depth(y, x) + depth_std * n);
            }
        }
    }
    return out;
}

FrameObservation add_noise(const FrameObservation &frame, const NoiseSpec &spec) {
    return add_noise(frame, spec.seed, spec.color_std, spec.depth_std, spec.bleed_px);
}

} // namespace gstrack
