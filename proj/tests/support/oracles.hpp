#pragma once

// Test-only reference implementations. None of these share code paths with the
// optimized library routines they check.

#include "gaussedit/camera.hpp"
#include "gaussedit/image.hpp"
#include "gaussedit/renderer.hpp"
#include "gaussedit/scene.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace gaussedit::oracle {

inline Gaussian random_gaussian(Rng& rng, double extent = 1.0) {
    Gaussian g;
    g.mu = {uniform(rng, -extent, extent), uniform(rng, -extent, extent), uniform(rng, -extent, extent)};
    g.log_scale = {uniform(rng, -2.3, -1.0), uniform(rng, -2.3, -1.0), uniform(rng, -2.3, -1.0)};
    Vec4 q(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    if (q.norm() < 0.1) q = identity_quaternion();
    g.rot = q.normalized();
    g.sh0 = {uniform(rng, -1.5, 1.5), uniform(rng, -1.5, 1.5), uniform(rng, -1.5, 1.5)};
    g.opacity_logit = uniform(rng, -2.0, 2.0);
    return g;
}

inline GaussianScene random_scene(Rng& rng, std::size_t count, std::size_t editable, double extent = 1.0) {
    std::vector<Gaussian> gs;
    for (std::size_t i = 0; i < count; ++i) gs.push_back(random_gaussian(rng, extent));
    GaussianScene scene(std::move(gs));
    scene.set_editable_suffix(editable);
    return scene;
}

inline Camera test_camera(int width, int height, double azimuth = 30.0, double elevation = 20.0, double radius = 4.0) {
    return orbit_camera({azimuth, elevation, radius}, Vec3::Zero(), Vec3::UnitZ(), width, height, 50.0);
}

/// Direct evaluation of front-to-back compositing at every pixel: every
/// non-culled splat, no tiling and no early termination.
inline Image naive_render(const GaussianScene& scene, const Camera& cam, RenderSubset subset,
                          const RenderSettings& settings = {}) {
    struct Item {
        std::size_t index;
        Splat2D splat;
    };
    std::vector<Item> items;
    const IndexRange range = subset == RenderSubset::All ? IndexRange{0, scene.size()} : scene.editable_range();
    for (std::size_t i = range.begin; i < range.end; ++i)
        if (auto s = project(scene[i], cam, settings.dilation)) items.push_back({i, *s});
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        return a.splat.depth < b.splat.depth || (a.splat.depth == b.splat.depth && a.index < b.index);
    });
    Image out(cam.width, cam.height);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Vec2 px(x + 0.5, y + 0.5);
            Vec3 c = Vec3::Zero();
            double t = 1.0;
            for (const Item& it : items) {
                const Vec2 d = px - it.splat.mean2d;
                const double q = d.dot(it.splat.cov2d.inverse() * d);
                const double sigma = std::min(settings.max_sigma, it.splat.opacity * std::exp(-0.5 * q));
                c += it.splat.color * sigma * t;
                t *= 1.0 - sigma;
            }
            out.set(x, y, c + t * settings.background);
        }
    }
    return out;
}

/// Sum of w * render, the scalar whose gradient render_backward returns.
inline double weighted_sum(const Image& img, const Image& weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < img.data().size(); ++i) s += img.data()[i] * weights.data()[i];
    return s;
}

/// Every scalar stored parameter of a Gaussian, by flat index 0..13.
inline double& parameter(Gaussian& g, int k) {
    if (k < 3) return g.mu[k];
    if (k < 6) return g.log_scale[k - 3];
    if (k < 10) return g.rot[k - 6];
    if (k < 13) return g.sh0[k - 10];
    return g.opacity_logit;
}

inline double parameter(const GaussianGrad& g, int k) {
    if (k < 3) return g.d_mu[k];
    if (k < 6) return g.d_log_scale[k - 3];
    if (k < 10) return g.d_rot[k - 6];
    if (k < 13) return g.d_sh0[k - 10];
    return g.d_opacity_logit;
}

inline const char* parameter_class(int k) {
    if (k < 3) return "mu";
    if (k < 6) return "log_scale";
    if (k < 10) return "rot";
    if (k < 13) return "sh0";
    return "opacity_logit";
}

/// Central difference of `loss` with respect to parameter k of Gaussian i.
inline double central_difference(const GaussianScene& scene, std::size_t i, int k, double h,
                                 const std::function<double(const GaussianScene&)>& loss) {
    auto gs = scene.gaussians();
    const double base = parameter(gs[i], k);
    parameter(gs[i], k) = base + h;
    GaussianScene plus(gs, scene.editable_range().begin);
    parameter(gs[i], k) = base - h;
    GaussianScene minus(gs, scene.editable_range().begin);
    return (loss(plus) - loss(minus)) / (2.0 * h);
}

/// Windowed SSIM evaluated directly: a full 2D Gaussian window per output
/// location and centered second moments. Only fully covered windows count.
inline double reference_ssim(const Image& a, const Image& b) {
    constexpr int n = 11;
    constexpr double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    double w[n][n];
    double sum = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sum += w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * sigma * sigma));
    for (auto& row : w)
        for (double& v : row) v /= sum;
    double total = 0.0;
    int count = 0;
    for (int c = 0; c < 3; ++c) {
        for (int y0 = 0; y0 + n <= a.height(); ++y0) {
            for (int x0 = 0; x0 + n <= a.width(); ++x0) {
                double mx = 0, my = 0;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) {
                        mx += w[i][j] * a.at(x0 + j, y0 + i, c);
                        my += w[i][j] * b.at(x0 + j, y0 + i, c);
                    }
                double vx = 0, vy = 0, cov = 0;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double dx = a.at(x0 + j, y0 + i, c) - mx, dy = b.at(x0 + j, y0 + i, c) - my;
                        vx += w[i][j] * dx * dx;
                        vy += w[i][j] * dy * dy;
                        cov += w[i][j] * dx * dy;
                    }
                total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        }
    }
    return total / count;
}

inline Image random_image(Rng& rng, int w, int h) {
    Image img(w, h);
    for (double& v : img.data()) v = uniform01(rng);
    return img;
}

} // namespace gaussedit::oracle
