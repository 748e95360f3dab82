#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>

namespace gaussedit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d; // quaternions are stored (w, x, y, z)
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

using Rng = std::mt19937_64;

inline constexpr double kPi = 3.14159265358979323846;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Uniform double in [0, 1) from the top 53 bits; identical on every platform,
// unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline bool all_finite(const Vec3& v) { return v.allFinite(); }

inline Vec4 identity_quaternion() { return Vec4(1.0, 0.0, 0.0, 0.0); }

// Rotation matrix of a unit quaternion (w, x, y, z).
inline Mat3 rotation_from_quaternion(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// Pulls dL/dR back onto the (unit) quaternion components, treating the entries of
// rotation_from_quaternion as polynomials in (w, x, y, z).
inline Vec4 rotation_backward(const Vec4& q, const Mat3& dr) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 g;
    g[0] = 2 * (-z * dr(0, 1) + y * dr(0, 2) + z * dr(1, 0) - x * dr(1, 2) - y * dr(2, 0) + x * dr(2, 1));
    g[1] = 2 * (y * dr(0, 1) + z * dr(0, 2) + y * dr(1, 0) - 2 * x * dr(1, 1) - w * dr(1, 2) + z * dr(2, 0) +
                w * dr(2, 1) - 2 * x * dr(2, 2));
    g[2] = 2 * (-2 * y * dr(0, 0) + x * dr(0, 1) + w * dr(0, 2) + x * dr(1, 0) + z * dr(1, 2) - w * dr(2, 0) +
                z * dr(2, 1) - 2 * y * dr(2, 2));
    g[3] = 2 * (-2 * z * dr(0, 0) - w * dr(0, 1) + x * dr(0, 2) + w * dr(1, 0) - 2 * z * dr(1, 1) + y * dr(1, 2) +
                x * dr(2, 0) + y * dr(2, 1));
    return g;
}

// Gradient through q_hat = q / |q|.
inline Vec4 normalize_backward(const Vec4& q, const Vec4& d_qhat) {
    const double n = q.norm();
    const Vec4 qhat = q / n;
    return (d_qhat - qhat * qhat.dot(d_qhat)) / n;
}

} // namespace gaussedit
