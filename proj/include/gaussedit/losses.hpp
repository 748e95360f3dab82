#pragma once

// Image losses with gradients with respect to the first (rendered) image.

#include "gaussedit/error.hpp"
#include "gaussedit/image.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <vector>

namespace gaussedit {

struct LossWithGrad {
    double value = 0.0;
    Image grad;
};

namespace loss_detail {

inline void check_pair(const Image& a, const Image& b, const char* what) {
    require(a.same_shape(b), ErrorKind::Argument,
            std::string(what) + ": shape mismatch (" + std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                " vs " + std::to_string(b.width()) + "x" + std::to_string(b.height()) + ")");
    require(a.pixel_count() > 0, ErrorKind::Argument, std::string(what) + ": empty images");
}

} // namespace loss_detail

inline double mse_loss(const Image& a, const Image& b) {
    loss_detail::check_pair(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data().size());
}

inline LossWithGrad mse_loss_grad(const Image& render, const Image& target) {
    LossWithGrad out{mse_loss(render, target), Image(render.width(), render.height())};
    const double k = 2.0 / static_cast<double>(render.data().size());
    for (std::size_t i = 0; i < render.data().size(); ++i) out.grad.data()[i] = k * (render.data()[i] - target.data()[i]);
    return out;
}

inline double l1_loss(const Image& a, const Image& b) {
    loss_detail::check_pair(a, b, "l1");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
    return s / static_cast<double>(a.data().size());
}

inline LossWithGrad l1_loss_grad(const Image& render, const Image& target) {
    LossWithGrad out{l1_loss(render, target), Image(render.width(), render.height())};
    const double k = 1.0 / static_cast<double>(render.data().size());
    for (std::size_t i = 0; i < render.data().size(); ++i) {
        const double d = render.data()[i] - target.data()[i];
        out.grad.data()[i] = d > 0 ? k : (d < 0 ? -k : 0.0);
    }
    return out;
}

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace ssim_detail {

inline const std::array<double, kSsimWindow>& window() {
    static const std::array<double, kSsimWindow> w = [] {
        std::array<double, kSsimWindow> k{};
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double x = i - kSsimWindow / 2;
            k[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
            sum += k[i];
        }
        for (double& v : k) v /= sum;
        return k;
    }();
    return w;
}

// Single-channel plane, row-major.
struct Plane {
    int w = 0, h = 0;
    std::vector<double> v;
    Plane(int w_, int h_) : w(w_), h(h_), v(static_cast<std::size_t>(w_) * h_, 0.0) {}
    double& at(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
    double at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

// Separable Gaussian correlation keeping only fully covered windows.
inline Plane filter_valid(const Plane& in) {
    const auto& k = window();
    const int ow = in.w - kSsimWindow + 1, oh = in.h - kSsimWindow + 1;
    Plane tmp(ow, in.h), out(ow, oh);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * in.at(x + i, y);
            tmp.at(x, y) = s;
        }
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[i] * tmp.at(x, y + i);
            out.at(x, y) = s;
        }
    return out;
}

// Adjoint of filter_valid: scatters each map entry back over its window.
inline Plane filter_adjoint(const Plane& map, int w, int h) {
    const auto& k = window();
    Plane tmp(map.w, h), out(w, h);
    for (int y = 0; y < map.h; ++y)
        for (int x = 0; x < map.w; ++x)
            for (int i = 0; i < kSsimWindow; ++i) tmp.at(x, y + i) += k[i] * map.at(x, y);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < map.w; ++x)
            for (int i = 0; i < kSsimWindow; ++i) out.at(x + i, y) += k[i] * tmp.at(x, y);
    return out;
}

inline Plane channel(const Image& img, int c) {
    Plane p(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) p.at(x, y) = img.at(x, y, c);
    return p;
}

inline Plane product(const Plane& a, const Plane& b) {
    Plane p(a.w, a.h);
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = a.v[i] * b.v[i];
    return p;
}

} // namespace ssim_detail

/// Mean SSIM over all fully covered 11x11 Gaussian windows (sigma 1.5),
/// averaged over the three channels. When `d_a` is given it receives the
/// gradient with respect to `a`.
inline double ssim(const Image& a, const Image& b, Image* d_a = nullptr) {
    using namespace ssim_detail;
    loss_detail::check_pair(a, b, "ssim");
    require(a.width() >= kSsimWindow && a.height() >= kSsimWindow, ErrorKind::Argument,
            "ssim: images must be at least 11x11");
    const int mw = a.width() - kSsimWindow + 1, mh = a.height() - kSsimWindow + 1;
    const double norm = 1.0 / (3.0 * mw * mh);
    if (d_a) *d_a = Image(a.width(), a.height());
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const Plane x = channel(a, c), y = channel(b, c);
        const Plane mx = filter_valid(x), my = filter_valid(y);
        const Plane exx = filter_valid(product(x, x)), eyy = filter_valid(product(y, y)),
                    exy = filter_valid(product(x, y));
        Plane g_mu(mw, mh), g_xx(mw, mh), g_xy(mw, mh);
        for (std::size_t i = 0; i < mx.v.size(); ++i) {
            const double ux = mx.v[i], uy = my.v[i];
            const double vx = exx.v[i] - ux * ux, vy = eyy.v[i] - uy * uy, cxy = exy.v[i] - ux * uy;
            const double a1 = 2 * ux * uy + kSsimC1, a2 = 2 * cxy + kSsimC2;
            const double b1 = ux * ux + uy * uy + kSsimC1, b2 = vx + vy + kSsimC2;
            const double s = a1 * a2 / (b1 * b2);
            total += s;
            if (!d_a) continue;
            // Partials with the raw moments (mean, E[x^2], E[xy]) as variables.
            g_mu.v[i] = norm * ((2 * uy * a2 - 2 * uy * a1) / (b1 * b2) - s * (2 * ux / b1 - 2 * ux / b2));
            g_xx.v[i] = norm * (-s / b2);
            g_xy.v[i] = norm * (2 * a1 / (b1 * b2));
        }
        if (!d_a) continue;
        const Plane p_mu = filter_adjoint(g_mu, a.width(), a.height());
        const Plane p_xx = filter_adjoint(g_xx, a.width(), a.height());
        const Plane p_xy = filter_adjoint(g_xy, a.width(), a.height());
        for (int yy = 0; yy < a.height(); ++yy)
            for (int xx = 0; xx < a.width(); ++xx)
                d_a->at(xx, yy, c) = p_mu.at(xx, yy) + 2 * x.at(xx, yy) * p_xx.at(xx, yy) + y.at(xx, yy) * p_xy.at(xx, yy);
    }
    return total / (3.0 * mw * mh);
}

inline double dssim(const Image& a, const Image& b) { return 0.5 * (1.0 - ssim(a, b)); }

inline LossWithGrad dssim_grad(const Image& render, const Image& target) {
    LossWithGrad out;
    // Identical images sit at the maximum; the rounding residue of the
    // analytic gradient would otherwise be amplified by adaptive optimizers.
    if (render == target) {
        out.value = dssim(render, target);
        out.grad = Image(render.width(), render.height());
        return out;
    }
    out.value = 0.5 * (1.0 - ssim(render, target, &out.grad));
    for (double& g : out.grad.data()) g *= -0.5;
    return out;
}

/// (1 - lambda) * L1 + lambda * D-SSIM.
inline double rec_loss(const Image& render, const Image& target, double lambda) {
    require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::Argument, "rec_loss: lambda must lie in [0, 1]");
    if (lambda == 0.0) return l1_loss(render, target);
    if (lambda == 1.0) return dssim(render, target);
    return (1.0 - lambda) * l1_loss(render, target) + lambda * dssim(render, target);
}

inline LossWithGrad rec_loss_grad(const Image& render, const Image& target, double lambda) {
    require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::Argument, "rec_loss: lambda must lie in [0, 1]");
    LossWithGrad l1 = l1_loss_grad(render, target);
    if (lambda == 0.0) return l1;
    LossWithGrad ds = dssim_grad(render, target);
    if (lambda == 1.0) return ds;
    LossWithGrad out{(1.0 - lambda) * l1.value + lambda * ds.value, Image(render.width(), render.height())};
    for (std::size_t i = 0; i < out.grad.data().size(); ++i)
        out.grad.data()[i] = (1.0 - lambda) * l1.grad.data()[i] + lambda * ds.grad.data()[i];
    return out;
}

} // namespace gaussedit
