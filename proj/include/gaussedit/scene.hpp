#pragma once

#include "gaussedit/error.hpp"
#include "gaussedit/math.hpp"

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gaussedit {

// Degree-0 spherical harmonic basis constant.
inline constexpr double kShC0 = 0.28209479177387814;

/// One anisotropic Gaussian in storage (pre-activation) form.
///
/// Scales are kept as logs and opacity as a logit so unconstrained gradient
/// steps cannot leave the valid domain; activations happen at render time.
struct Gaussian {
    Vec3 mu = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Vec4 rot = identity_quaternion();
    Vec3 sh0 = Vec3::Zero();
    double opacity_logit = 0.0;

    Vec3 scale() const { return log_scale.array().exp(); }
    double opacity() const { return sigmoid(opacity_logit); }

    bool operator==(const Gaussian&) const = default;
};

inline double color_from_sh0(double sh0) { return std::clamp(0.5 + kShC0 * sh0, 0.0, 1.0); }

inline Vec3 color_from_sh0(const Vec3& sh0) {
    return {color_from_sh0(sh0[0]), color_from_sh0(sh0[1]), color_from_sh0(sh0[2])};
}

inline double sh0_from_color(double c) { return (c - 0.5) / kShC0; }

/// Half-open index interval [begin, end).
struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool empty() const { return end == begin; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }

    bool operator==(const IndexRange&) const = default;
};

/// Concatenated storage of frozen Gaussians followed by the editable suffix.
class GaussianScene {
public:
    GaussianScene() = default;

    explicit GaussianScene(std::vector<Gaussian> gaussians) : gaussians_(std::move(gaussians)) {
        editable_ = {gaussians_.size(), gaussians_.size()};
    }

    GaussianScene(std::vector<Gaussian> gaussians, std::size_t editable_begin) : gaussians_(std::move(gaussians)) {
        require(editable_begin <= gaussians_.size(), ErrorKind::Argument, "editable range starts past the end of storage");
        editable_ = {editable_begin, gaussians_.size()};
    }

    std::size_t size() const { return gaussians_.size(); }
    bool empty() const { return gaussians_.empty(); }

    const std::vector<Gaussian>& gaussians() const { return gaussians_; }
    const Gaussian& operator[](std::size_t i) const { return gaussians_[i]; }

    IndexRange editable_range() const { return editable_; }

    std::span<const Gaussian> frozen() const { return {gaussians_.data(), editable_.begin}; }
    std::span<const Gaussian> editable() const { return {gaussians_.data() + editable_.begin, editable_.size()}; }
    std::span<Gaussian> editable_mut() { return {gaussians_.data() + editable_.begin, editable_.size()}; }

    /// Marks the trailing `count` Gaussians as editable.
    void set_editable_suffix(std::size_t count) {
        require(count <= gaussians_.size(), ErrorKind::Argument, "editable suffix longer than storage");
        editable_ = {gaussians_.size() - count, gaussians_.size()};
    }

    bool operator==(const GaussianScene&) const = default;

private:
    std::vector<Gaussian> gaussians_;
    IndexRange editable_;
};

/// R diag(s)^2 R^T with R the rotation of `rot`.
inline Mat3 covariance_from(const Vec4& rot, const Vec3& scale) {
    require(rot.allFinite() && scale.allFinite(), ErrorKind::InvalidParameter, "covariance_from: non-finite input");
    require((scale.array() > 0.0).all(), ErrorKind::InvalidParameter, "covariance_from: scale must be positive");
    const double n = rot.norm();
    require(n > 0.0, ErrorKind::InvalidParameter, "covariance_from: zero quaternion");
    const Mat3 m = rotation_from_quaternion(rot / n) * scale.asDiagonal();
    Mat3 sigma = m * m.transpose();
    // Symmetrize exactly; the product is symmetric only up to rounding.
    return 0.5 * (sigma + sigma.transpose());
}

inline Mat3 covariance_of(const Gaussian& g) { return covariance_from(g.rot, g.scale()); }

/// exp(-1/2 x^T Sigma^-1 x) for an offset x from the center.
inline double eval_gaussian(const Mat3& sigma, const Vec3& x) {
    require(sigma.allFinite() && x.allFinite(), ErrorKind::InvalidParameter, "eval_gaussian: non-finite input");
    const double eps = 1e-9 * sigma.trace() / 3.0;
    const Mat3 reg = sigma + eps * Mat3::Identity();
    Eigen::LDLT<Mat3> ldlt(reg);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0.0).any())
        fail(ErrorKind::Degeneracy, "eval_gaussian: covariance is singular after regularization");
    const double q = x.dot(ldlt.solve(x));
    return std::exp(-0.5 * std::max(q, 0.0));
}

inline double eval_gaussian(const Gaussian& g, const Vec3& x) { return eval_gaussian(covariance_of(g), x); }

/// Throws a validation error when a stored Gaussian violates its invariants.
inline void validate(const Gaussian& g, std::size_t index) {
    const bool finite = g.mu.allFinite() && g.log_scale.allFinite() && g.rot.allFinite() && g.sh0.allFinite() &&
                        std::isfinite(g.opacity_logit);
    require(finite, ErrorKind::Validation, "gaussian " + std::to_string(index) + " has non-finite fields");
    require(g.scale().allFinite() && (g.scale().array() > 0.0).all(), ErrorKind::Validation,
            "gaussian " + std::to_string(index) + " has a degenerate scale");
    require(g.rot.norm() > 0.0, ErrorKind::Validation, "gaussian " + std::to_string(index) + " has a zero quaternion");
}

inline void validate(const GaussianScene& scene) {
    for (std::size_t i = 0; i < scene.size(); ++i) validate(scene[i], i);
}

} // namespace gaussedit
