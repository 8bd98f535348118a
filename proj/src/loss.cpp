// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/loss.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace gstrack {

void LossWeights::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument("LossWeights: lambda must lie in [0, 1]");
    }
    if (!(beta >= 0.0)) {
        throw std::invalid_argument("LossWeights: beta must be non-negative");
    }
}

ImageLoss l1_image(const ImageD &a, const ImageD &b, const ImageD &weight) {
    if (!a.same_shape(b) || !a.same_extent(weight) || weight.channels() != 1) {
        throw std::invalid_argument("l1_image: shape mismatch");
    }
    ImageLoss out{0.0, ImageD(a.height(), a.width(), a.channels())};
    const int ch = a.channels();
    std::size_t count = 0;
    for (std::size_t p = 0; p < a.pixels(); ++p) {
        count += weight.data()[p] != 0.0;
    }
    if (count == 0) {
        return out;
    }
    const double norm = 1.0 / (static_cast<double>(count) * ch);
    const auto da = a.data(), db = b.data(), dw = weight.data();
    auto g = out.grad.data();
    double sum = 0.0;
    for (std::size_t p = 0; p < a.pixels(); ++p) {
        const double wp = dw[p];
        if (wp == 0.0) {
            continue;
        }
        for (int c = 0; c < ch; ++c) {
            const std::size_t k = p * ch + c;
            const double d = da[k] - db[k];
            sum += wp * std::abs(d);
            g[k] = wp * norm * static_cast<double>((d > 0.0) - (d < 0.0));
        }
    }
    out.value = sum * norm;
    return out;
}

namespace {

constexpr int kRadius = 5;
constexpr int kWindow = 2 * kRadius + 1;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
    std::array<double, kWindow> w{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kRadius;
        w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += w[i];
    }
    for (auto &v : w) {
        v /= sum;
    }
    return w;
}

int reflect(int i, int n) {
    if (i < 0) {
        return -i;
    }
    if (i >= n) {
        return 2 * (n - 1) - i;
    }
    return i;
}

// Single-channel plane, row-major.
using Plane = std::vector<double>;

// Separable Gaussian blur with reflected borders, or its adjoint.
Plane blur(const Plane &in, int h, int w, bool adjoint) {
    static const auto win = gaussian_window();
    Plane tmp(in.size(), 0.0), out(in.size(), 0.0);
    if (!adjoint) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int k = -kRadius; k <= kRadius; ++k) {
                    s += win[k + kRadius] * in[static_cast<std::size_t>(y) * w + reflect(x + k, w)];
                }
                tmp[static_cast<std::size_t>(y) * w + x] = s;
            }
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int k = -kRadius; k <= kRadius; ++k) {
                    s += win[k + kRadius] * tmp[static_cast<std::size_t>(reflect(y + k, h)) * w + x];
                }
                out[static_cast<std::size_t>(y) * w + x] = s;
            }
        }
        return out;
    }
    // Transpose of the two passes, applied in reverse order as scatters.
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double v = in[static_cast<std::size_t>(y) * w + x];
            for (int k = -kRadius; k <= kRadius; ++k) {
                tmp[static_cast<std::size_t>(reflect(y + k, h)) * w + x] += win[k + kRadius] * v;
            }
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double v = tmp[static_cast<std::size_t>(y) * w + x];
            for (int k = -kRadius; k <= kRadius; ++k) {
                out[static_cast<std::size_t>(y) * w + reflect(x + k, w)] += win[k + kRadius] * v;
            }
        }
    }
    return out;
}

} // namespace

ImageLoss ssim(const ImageD &a, const ImageD &b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("ssim: shape mismatch");
    }
    const int h = a.height(), w = a.width(), ch = a.channels();
    if (h < kWindow || w < kWindow) {
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    }
    const std::size_t n = a.pixels();
    const double norm = 1.0 / (static_cast<double>(n) * ch);
    ImageLoss out{0.0, ImageD(h, w, ch)};
    double total = 0.0;
    for (int c = 0; c < ch; ++c) {
        Plane pa(n), pb(n), paa(n), pbb(n), pab(n);
        for (std::size_t p = 0; p < n; ++p) {
            pa[p] = a.data()[p * ch + c];
            pb[p] = b.data()[p * ch + c];
            paa[p] = pa[p] * pa[p];
            pbb[p] = pb[p] * pb[p];
            pab[p] = pa[p] * pb[p];
        }
        const Plane ma = blur(pa, h, w, false), mb = blur(pb, h, w, false);
        const Plane maa = blur(paa, h, w, false), mbb = blur(pbb, h, w, false), mab = blur(pab, h, w, false);
        Plane g_ma(n), g_maa(n), g_mab(n);
        for (std::size_t p = 0; p < n; ++p) {
            const double va = maa[p] - ma[p] * ma[p];
            const double vb = mbb[p] - mb[p] * mb[p];
            const double cov = mab[p] - ma[p] * mb[p];
            const double a1 = 2.0 * ma[p] * mb[p] + kC1, a2 = 2.0 * cov + kC2;
            const double b1 = ma[p] * ma[p] + mb[p] * mb[p] + kC1, b2 = va + vb + kC2;
            const double s = a1 * a2 / (b1 * b2);
            total += s;
            const double d_a1 = a2 / (b1 * b2), d_a2 = a1 / (b1 * b2);
            const double d_b1 = -s / b1, d_b2 = -s / b2;
            g_ma[p] = norm * (2.0 * mb[p] * d_a1 - 2.0 * mb[p] * d_a2 + 2.0 * ma[p] * d_b1 - 2.0 * ma[p] * d_b2);
            g_maa[p] = norm * d_b2;
            g_mab[p] = norm * 2.0 * d_a2;
        }
        const Plane ga = blur(g_ma, h, w, true), gaa = blur(g_maa, h, w, true), gab = blur(g_mab, h, w, true);
        for (std::size_t p = 0; p < n; ++p) {
            out.grad.data()[p * ch + c] = ga[p] + 2.0 * pa[p] * gaa[p] + pb[p] * gab[p];
        }
    }
    out.value = total * norm;
    return out;
}

ImageD masked_color(const FrameObservation &obs, const Vec3 &background) {
    ImageD out = obs.color;
    for (int y = 0; y < obs.height(); ++y) {
        for (int x = 0; x < obs.width(); ++x) {
            if (obs.mask(y, x) == 0) {
                for (int c = 0; c < 3; ++c) {
                    out(y, x, c) = background[c];
                }
            }
        }
    }
    return out;
}

ImageD depth_weight(const RenderOutput &rendered, const FrameObservation &obs) {
    ImageD wgt(obs.height(), obs.width(), 1);
    for (int y = 0; y < obs.height(); ++y) {
        for (int x = 0; x < obs.width(); ++x) {
            wgt(y, x) = (obs.valid(y, x) && rendered.alpha(y, x) > 0.5) ? 1.0 : 0.0;
        }
    }
    return wgt;
}

ImageD normalized_depth(const RenderOutput &rendered, const ImageD &weight) {
    ImageD out(rendered.depth.height(), rendered.depth.width(), 1);
    for (std::size_t k = 0; k < out.size(); ++k) {
        if (weight.data()[k] != 0.0) {
            out.data()[k] = rendered.depth.data()[k] / rendered.alpha.data()[k];
        }
    }
    return out;
}

namespace {

LossResult combined_loss(const RenderOutput &rendered, const FrameObservation &obs, double lambda, double beta,
                         const Vec3 &background) {
    if (!rendered.color.same_shape(obs.color) || !rendered.depth.same_shape(obs.depth) ||
        !rendered.alpha.same_extent(obs.depth)) {
        throw std::invalid_argument("loss: rendered and observed shapes differ");
    }
    const ImageD target = masked_color(obs, background);
    const ImageD full(obs.height(), obs.width(), 1, 1.0);
    LossResult r;
    const ImageLoss lc = l1_image(rendered.color, target, full);
    const ImageD wd = depth_weight(rendered, obs);
    const ImageD nd = normalized_depth(rendered, wd);
    const ImageLoss ld = l1_image(nd, obs.depth, wd);
    r.report.l1_color = lc.value;
    r.report.l1_depth = ld.value;
    r.dL_dcolor = lc.grad;
    for (auto &v : r.dL_dcolor.data()) {
        v *= 1.0 - lambda;
    }
    if (lambda > 0.0) {
        const ImageLoss s = ssim(rendered.color, target);
        r.report.ssim = s.value;
        for (std::size_t k = 0; k < r.dL_dcolor.size(); ++k) {
            r.dL_dcolor.data()[k] -= lambda * s.grad.data()[k];
        }
    }
    // d(D/a)/dD = 1/a, d(D/a)/da = -D/a².
    r.dL_ddepth = ImageD(obs.height(), obs.width(), 1);
    r.dL_dalpha = ImageD(obs.height(), obs.width(), 1);
    for (std::size_t k = 0; k < nd.size(); ++k) {
        const double g = ld.grad.data()[k];
        if (g != 0.0) {
            const double a = rendered.alpha.data()[k];
            r.dL_ddepth.data()[k] = beta * g / a;
            r.dL_dalpha.data()[k] = -beta * g * nd.data()[k] / a;
        }
    }
    r.report.total = (1.0 - lambda) * r.report.l1_color + lambda * (1.0 - r.report.ssim) + beta * r.report.l1_depth;
    return r;
}

} // namespace

LossResult recon_loss(const RenderOutput &rendered, const FrameObservation &obs, const LossWeights &w,
                      const Vec3 &background) {
    w.validate();
    return combined_loss(rendered, obs, w.lambda, w.beta, background);
}

LossResult track_loss(const RenderOutput &rendered, const FrameObservation &obs, const LossWeights &w,
                      const Vec3 &background) {
    w.validate();
    return combined_loss(rendered, obs, 0.0, w.beta, background);
}

} // namespace gstrack
