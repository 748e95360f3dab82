#pragma once

// Differentiable CPU splatting: EWA projection, front-to-back compositing and
// the analytic backward pass onto stored Gaussian parameters.

#include "gaussedit/camera.hpp"
#include "gaussedit/error.hpp"
#include "gaussedit/image.hpp"
#include "gaussedit/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gaussedit {

#ifdef NDEBUG
inline constexpr bool kDebugBuild = false;
#else
inline constexpr bool kDebugBuild = true;
#endif

enum class RenderSubset { All, EditableOnly };

struct RenderSettings {
    Vec3 background = Vec3::Zero();
    double max_sigma = 0.99;
    double min_transmittance = 1e-4;
    double dilation = 0.3;
    int tile_size = 16;
    bool check_order = kDebugBuild;
};

struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    Mat2 cov2d = Mat2::Identity();
    double depth = 0.0;
    Vec3 color = Vec3::Zero();
    double opacity = 0.0;
};

/// Gradient of a scalar loss with respect to one Gaussian's stored parameters.
struct GaussianGrad {
    Vec3 d_mu = Vec3::Zero();
    Vec3 d_log_scale = Vec3::Zero();
    Vec4 d_rot = Vec4::Zero();
    Vec3 d_sh0 = Vec3::Zero();
    double d_opacity_logit = 0.0;

    GaussianGrad& operator+=(const GaussianGrad& o) {
        d_mu += o.d_mu;
        d_log_scale += o.d_log_scale;
        d_rot += o.d_rot;
        d_sh0 += o.d_sh0;
        d_opacity_logit += o.d_opacity_logit;
        return *this;
    }
    GaussianGrad& operator*=(double k) {
        d_mu *= k;
        d_log_scale *= k;
        d_rot *= k;
        d_sh0 *= k;
        d_opacity_logit *= k;
        return *this;
    }
    bool all_finite() const {
        return d_mu.allFinite() && d_log_scale.allFinite() && d_rot.allFinite() && d_sh0.allFinite() &&
               std::isfinite(d_opacity_logit);
    }
};

/// One entry per Gaussian of the scene's editable range, in storage order.
using SceneGradients = std::vector<GaussianGrad>;

namespace render_detail {

// Contributions below this are left out of tile binning; well under the
// tolerance at which tiled and untiled rendering are compared.
inline constexpr double kBinningEpsilon = 1e-12;

struct Projection {
    Splat2D splat;
    Mat2 conic = Mat2::Identity();
    double cull_radius = 0.0;
    double bin_radius = 0.0;
};

inline double max_eigenvalue(const Mat2& m) {
    const double mid = 0.5 * (m(0, 0) + m(1, 1));
    const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    return mid + std::sqrt(std::max(0.1, mid * mid - det));
}

inline std::optional<Projection> project_full(const Gaussian& g, const Camera& cam, double dilation) {
    const Vec3 p = cam.world_to_camera.apply(g.mu);
    if (p.z() <= cam.znear) return std::nullopt;
    const double z = p.z();
    Mat23 j;
    j << cam.fx / z, 0.0, -cam.fx * p.x() / (z * z), 0.0, cam.fy / z, -cam.fy * p.y() / (z * z);
    const Mat23 t = j * cam.world_to_camera.rotation;
    const Mat3 sigma = covariance_from(g.rot, g.scale());
    Mat2 cov = t * sigma * t.transpose();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    cov += dilation * Mat2::Identity();

    Projection out;
    out.splat.mean2d = {cam.fx * p.x() / z + cam.cx, cam.fy * p.y() / z + cam.cy};
    out.splat.cov2d = cov;
    out.splat.depth = z;
    out.splat.color = color_from_sh0(g.sh0);
    out.splat.opacity = g.opacity();
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
    if (!(det > 0.0)) return std::nullopt;
    out.conic << cov(1, 1) / det, -cov(0, 1) / det, -cov(0, 1) / det, cov(0, 0) / det;

    const double lambda = max_eigenvalue(cov);
    out.cull_radius = 3.0 * std::sqrt(lambda);
    const Vec2& m = out.splat.mean2d;
    if (m.x() + out.cull_radius < 0.0 || m.x() - out.cull_radius > cam.width || m.y() + out.cull_radius < 0.0 ||
        m.y() - out.cull_radius > cam.height)
        return std::nullopt;
    const double a = out.splat.opacity;
    out.bin_radius = a > kBinningEpsilon ? std::sqrt(2.0 * lambda * std::log(a / kBinningEpsilon)) : 0.0;
    return out;
}

struct SortedSplat {
    std::size_t gaussian = 0;
    Projection proj;
};

inline std::vector<SortedSplat> project_and_sort(const GaussianScene& scene, const Camera& cam, RenderSubset subset,
                                                 double dilation) {
    cam.validate();
    const IndexRange range = subset == RenderSubset::All ? IndexRange{0, scene.size()} : scene.editable_range();
    std::vector<SortedSplat> out;
    out.reserve(range.size());
    for (std::size_t i = range.begin; i < range.end; ++i) {
        if (auto p = project_full(scene[i], cam, dilation)) out.push_back({i, *p});
    }
    std::stable_sort(out.begin(), out.end(), [](const SortedSplat& a, const SortedSplat& b) {
        if (a.proj.splat.depth != b.proj.splat.depth) return a.proj.splat.depth < b.proj.splat.depth;
        return a.gaussian < b.gaussian;
    });
    return out;
}

inline double footprint(const Mat2& conic, const Vec2& d) {
    return std::exp(-0.5 * (conic(0, 0) * d.x() * d.x() + 2.0 * conic(0, 1) * d.x() * d.y() +
                            conic(1, 1) * d.y() * d.y()));
}

struct Tiling {
    int tile = 16;
    int tiles_x = 0;
    int tiles_y = 0;
    int bands = 0;

    Tiling(const Camera& cam, int tile_size) : tile(std::max(1, tile_size)) {
        tiles_x = (cam.width + tile - 1) / tile;
        tiles_y = (cam.height + tile - 1) / tile;
        bands = std::min(8, tiles_y);
    }
    int band_begin(int band) const { return band * tiles_y / bands; }
    int band_end(int band) const { return (band + 1) * tiles_y / bands; }
};

// Indices (into the sorted array) of splats whose binning box touches the tile.
inline void tile_list(std::span<const SortedSplat> splats, int x0, int y0, int x1, int y1,
                      std::vector<std::uint32_t>& out) {
    out.clear();
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const auto& p = splats[i].proj;
        const Vec2& m = p.splat.mean2d;
        const double r = p.bin_radius;
        if (m.x() + r < x0 || m.x() - r > x1 || m.y() + r < y0 || m.y() - r > y1) continue;
        out.push_back(static_cast<std::uint32_t>(i));
    }
}

struct Grad2D {
    Vec2 mean = Vec2::Zero();
    Vec3 conic = Vec3::Zero(); // (a, b, c) of the symmetric conic [[a, b], [b, c]]
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
};

struct Contribution {
    std::uint32_t splat = 0;
    double g = 0.0;
    double sigma = 0.0;
    double transmittance = 0.0;
    bool clamped = false;
};

/// Front-to-back compositing over `list` (sorted indices); records what the
/// backward pass needs when `record` is non-null. Returns final transmittance.
inline double composite(std::span<const SortedSplat> splats, std::span<const std::uint32_t> list, const Vec2& pixel,
                        const RenderSettings& settings, Vec3& color, std::vector<Contribution>* record) {
    double t = 1.0;
    color.setZero();
    for (std::uint32_t idx : list) {
        const Projection& p = splats[idx].proj;
        const double g = footprint(p.conic, pixel - p.splat.mean2d);
        const double raw = p.splat.opacity * g;
        const bool clamped = raw > settings.max_sigma;
        const double sigma = clamped ? settings.max_sigma : raw;
        const double next = t * (1.0 - sigma);
        if (next < settings.min_transmittance) break;
        color += p.splat.color * (sigma * t);
        if (record) record->push_back({idx, g, sigma, t, clamped});
        t = next;
    }
    color += t * settings.background;
    return t;
}

// Chain rule from 2D splat gradients back to stored parameters.
inline GaussianGrad backward_projection(const Gaussian& g, const Camera& cam, double dilation, const Grad2D& g2) {
    const Mat3& w = cam.world_to_camera.rotation;
    const Vec3 p = cam.world_to_camera.apply(g.mu);
    const double x = p.x(), y = p.y(), z = p.z();
    const double fx = cam.fx, fy = cam.fy;
    Mat23 j;
    j << fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z);
    const Mat23 t = j * w;

    const Vec4 qhat = g.rot / g.rot.norm();
    const Mat3 r = rotation_from_quaternion(qhat);
    const Vec3 s = g.scale();
    const Mat3 m = r * s.asDiagonal();
    const Mat3 sigma = m * m.transpose();
    Mat2 cov = t * sigma * t.transpose();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    cov += dilation * Mat2::Identity();

    // conic entries (a, b, c) as functions of the covariance entries (A, B, C).
    const double ca = cov(0, 0), cb = cov(0, 1), cc = cov(1, 1);
    const double det = ca * cc - cb * cb;
    const double det2 = det * det;
    const double ga = g2.conic[0], gb = g2.conic[1], gc = g2.conic[2];
    const double d_a = ga * (-cc * cc / det2) + gb * (cb * cc / det2) + gc * (-cb * cb / det2);
    const double d_b = ga * (2.0 * cb * cc / det2) + gb * (-1.0 / det - 2.0 * cb * cb / det2) + gc * (2.0 * ca * cb / det2);
    const double d_c = ga * (-cb * cb / det2) + gb * (ca * cb / det2) + gc * (-ca * ca / det2);

    Mat2 g_cov;
    g_cov << d_a, 0.5 * d_b, 0.5 * d_b, d_c;
    const Mat3 g_sigma = t.transpose() * g_cov * t;
    const Mat23 g_t = 2.0 * g_cov * t * sigma;
    const Mat23 g_j = g_t * w.transpose();

    Vec3 g_p;
    g_p.x() = g2.mean.x() * fx / z + g_j(0, 2) * (-fx / (z * z));
    g_p.y() = g2.mean.y() * fy / z + g_j(1, 2) * (-fy / (z * z));
    g_p.z() = -g2.mean.x() * fx * x / (z * z) - g2.mean.y() * fy * y / (z * z) + g_j(0, 0) * (-fx / (z * z)) +
              g_j(0, 2) * (2.0 * fx * x / (z * z * z)) + g_j(1, 1) * (-fy / (z * z)) +
              g_j(1, 2) * (2.0 * fy * y / (z * z * z));

    GaussianGrad out;
    out.d_mu = w.transpose() * g_p;

    const Mat3 g_m = 2.0 * g_sigma * m;
    Mat3 g_r;
    for (int col = 0; col < 3; ++col) {
        out.d_log_scale[col] = g_m.col(col).dot(r.col(col)) * s[col];
        g_r.col(col) = g_m.col(col) * s[col];
    }
    out.d_rot = normalize_backward(g.rot, rotation_backward(qhat, g_r));

    for (int c = 0; c < 3; ++c) {
        const double raw = 0.5 + kShC0 * g.sh0[c];
        out.d_sh0[c] = (raw > 0.0 && raw < 1.0) ? g2.color[c] * kShC0 : 0.0;
    }
    const double alpha = g.opacity();
    out.d_opacity_logit = g2.opacity * alpha * (1.0 - alpha);
    return out;
}

} // namespace render_detail

/// Screen-space splat of `g`, or nullopt when culled (behind znear or with a
/// 3-sigma footprint entirely outside the viewport).
inline std::optional<Splat2D> project(const Gaussian& g, const Camera& cam, double dilation = 0.3) {
    if (auto p = render_detail::project_full(g, cam, dilation)) return p->splat;
    return std::nullopt;
}

/// Front-to-back compositing of depth-sorted splats at one pixel position.
inline Vec3 composite_pixel(std::span<const Splat2D> splats, const Vec2& pixel, const RenderSettings& settings = {}) {
    if (settings.check_order) {
        for (std::size_t i = 1; i < splats.size(); ++i)
            require(splats[i - 1].depth <= splats[i].depth, ErrorKind::ContractViolation,
                    "composite_pixel: splats are not sorted by depth");
    }
    double t = 1.0;
    Vec3 color = Vec3::Zero();
    for (const Splat2D& s : splats) {
        const Mat2 conic = s.cov2d.inverse();
        const double sigma = std::clamp(s.opacity * render_detail::footprint(conic, pixel - s.mean2d), 0.0,
                                        settings.max_sigma);
        const double next = t * (1.0 - sigma);
        if (next < settings.min_transmittance) break;
        color += s.color * (sigma * t);
        t = next;
    }
    return color + t * settings.background;
}

/// Renders the selected subset; pixel (u, v) is sampled at (u + 0.5, v + 0.5).
/// The returned image carries the accumulated alpha.
inline Image render(const GaussianScene& scene, const Camera& cam, RenderSubset subset,
                    const RenderSettings& settings = {}) {
    using namespace render_detail;
    const auto splats = project_and_sort(scene, cam, subset, settings.dilation);
    Image image(cam.width, cam.height);
    std::vector<double> alpha(image.pixel_count(), 0.0);
    const Tiling tiling(cam, settings.tile_size);

#pragma omp parallel for schedule(dynamic, 1)
    for (int band = 0; band < tiling.bands; ++band) {
        std::vector<std::uint32_t> list;
        for (int ty = tiling.band_begin(band); ty < tiling.band_end(band); ++ty) {
            for (int tx = 0; tx < tiling.tiles_x; ++tx) {
                const int x0 = tx * tiling.tile, y0 = ty * tiling.tile;
                const int x1 = std::min(x0 + tiling.tile, cam.width), y1 = std::min(y0 + tiling.tile, cam.height);
                tile_list(splats, x0, y0, x1, y1, list);
                for (int y = y0; y < y1; ++y) {
                    for (int x = x0; x < x1; ++x) {
                        Vec3 c;
                        const double t = composite(splats, list, Vec2(x + 0.5, y + 0.5), settings, c, nullptr);
                        image.set(x, y, c);
                        alpha[static_cast<std::size_t>(y) * cam.width + x] = 1.0 - t;
                    }
                }
            }
        }
    }
    image.alpha() = std::move(alpha);
    return image;
}

/// Gradients of L = sum(d_image * render(scene, cam, subset)) with respect to
/// every editable Gaussian. Frozen Gaussians take part in compositing but get
/// no entry.
inline SceneGradients render_backward(const GaussianScene& scene, const Camera& cam, RenderSubset subset,
                                      const Image& d_image, const RenderSettings& settings = {}) {
    using namespace render_detail;
    require(d_image.width() == cam.width && d_image.height() == cam.height, ErrorKind::Argument,
            "render_backward: gradient image does not match the camera viewport");
    require(d_image.all_finite(), ErrorKind::Propagation, "render_backward: non-finite upstream gradient");

    const IndexRange editable = scene.editable_range();
    SceneGradients grads(editable.size());
    const auto splats = project_and_sort(scene, cam, subset, settings.dilation);
    if (splats.empty()) return grads;
    const Tiling tiling(cam, settings.tile_size);

    // One dense accumulator per band, reduced in band order so the result does
    // not depend on thread scheduling.
    std::vector<std::vector<Grad2D>> partial(tiling.bands);

#pragma omp parallel for schedule(dynamic, 1)
    for (int band = 0; band < tiling.bands; ++band) {
        std::vector<Grad2D> acc(splats.size());
        std::vector<std::uint32_t> list;
        std::vector<Contribution> record;
        for (int ty = tiling.band_begin(band); ty < tiling.band_end(band); ++ty) {
            for (int tx = 0; tx < tiling.tiles_x; ++tx) {
                const int x0 = tx * tiling.tile, y0 = ty * tiling.tile;
                const int x1 = std::min(x0 + tiling.tile, cam.width), y1 = std::min(y0 + tiling.tile, cam.height);
                tile_list(splats, x0, y0, x1, y1, list);
                if (list.empty()) continue;
                for (int y = y0; y < y1; ++y) {
                    for (int x = x0; x < x1; ++x) {
                        const Vec3 dl = d_image.pixel(x, y);
                        if (dl.isZero(0.0)) continue;
                        const Vec2 pixel(x + 0.5, y + 0.5);
                        record.clear();
                        Vec3 c;
                        const double t_final = composite(splats, list, pixel, settings, c, &record);
                        // Suffix sum of everything composited behind entry i, background included.
                        Vec3 behind = t_final * settings.background;
                        for (std::size_t k = record.size(); k-- > 0;) {
                            const Contribution& e = record[k];
                            const Projection& p = splats[e.splat].proj;
                            Grad2D& g = acc[e.splat];
                            g.color += dl * (e.sigma * e.transmittance);
                            const double d_sigma = dl.dot(p.splat.color * e.transmittance - behind / (1.0 - e.sigma));
                            behind += p.splat.color * (e.sigma * e.transmittance);
                            if (e.clamped) continue;
                            g.opacity += d_sigma * e.g;
                            const double d_power = d_sigma * p.splat.opacity * e.g;
                            const Vec2 d = pixel - p.splat.mean2d;
                            g.mean += d_power * (p.conic * d);
                            g.conic += d_power * Vec3(-0.5 * d.x() * d.x(), -d.x() * d.y(), -0.5 * d.y() * d.y());
                        }
                    }
                }
            }
        }
        partial[band] = std::move(acc);
    }

    std::vector<Grad2D> total(splats.size());
    for (const auto& band : partial) {
        for (std::size_t i = 0; i < total.size(); ++i) {
            total[i].mean += band[i].mean;
            total[i].conic += band[i].conic;
            total[i].opacity += band[i].opacity;
            total[i].color += band[i].color;
        }
    }
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const std::size_t gi = splats[i].gaussian;
        if (!editable.contains(gi)) continue;
        grads[gi - editable.begin] = backward_projection(scene[gi], cam, settings.dilation, total[i]);
    }
    for (const auto& g : grads)
        require(g.all_finite(), ErrorKind::Propagation, "render_backward: non-finite gradient");
    return grads;
}

} // namespace gaussedit
