#pragma once

#include "gaussedit/error.hpp"
#include "gaussedit/math.hpp"

#include <cmath>

namespace gaussedit {

/// Rigid transform x -> rotation * x + translation.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
    RigidTransform inverse() const { return {rotation.transpose(), -(rotation.transpose() * translation)}; }
    RigidTransform operator*(const RigidTransform& o) const {
        return {rotation * o.rotation, rotation * o.translation + translation};
    }
};

/// Pinhole camera, OpenCV convention (x right, y down, z forward).
struct Camera {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    int width = 1, height = 1;
    RigidTransform world_to_camera;
    double znear = 0.01;

    void validate() const {
        require(fx > 0 && fy > 0, ErrorKind::InvalidParameter, "camera: focal lengths must be positive");
        require(width >= 1 && height >= 1, ErrorKind::InvalidParameter, "camera: empty viewport");
        const Mat3& r = world_to_camera.rotation;
        require((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6, ErrorKind::InvalidParameter,
                "camera: rotation is not orthonormal");
    }

    Vec3 center() const { return world_to_camera.inverse().translation; }
};

inline double focal_from_fov(int pixels, double fov_deg) {
    return 0.5 * pixels / std::tan(0.5 * fov_deg * kPi / 180.0);
}

/// Camera at `eye` looking at `target`; `up` is the world up direction.
inline Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height, double fov_deg,
                      double znear = 0.01) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    require(right.norm() > 1e-12, ErrorKind::InvalidParameter, "look_at: view direction parallel to up");
    right.normalize();
    const Vec3 down = forward.cross(right);
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = focal_from_fov(width, fov_deg);
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.znear = znear;
    cam.world_to_camera.rotation.row(0) = right;
    cam.world_to_camera.rotation.row(1) = down;
    cam.world_to_camera.rotation.row(2) = forward;
    cam.world_to_camera.translation = -(cam.world_to_camera.rotation * eye);
    return cam;
}

struct OrbitPose {
    double azimuth_deg = 0.0;
    double elevation_deg = 0.0;
    double radius = 1.0;
};

/// Camera on a sphere around `center`. Azimuth is measured in the plane
/// orthogonal to `up`, elevation towards `up`.
inline Camera orbit_camera(const OrbitPose& pose, const Vec3& center, const Vec3& up, int width, int height,
                           double fov_deg) {
    const Vec3 u = up.normalized();
    Vec3 a = std::abs(u.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    a = (a - u * u.dot(a)).normalized();
    const Vec3 b = u.cross(a);
    const double az = pose.azimuth_deg * kPi / 180.0;
    const double el = pose.elevation_deg * kPi / 180.0;
    const Vec3 dir = std::cos(el) * (std::cos(az) * a + std::sin(az) * b) + std::sin(el) * u;
    return look_at(center + pose.radius * dir, center, u, width, height, fov_deg, 0.01 * pose.radius);
}

} // namespace gaussedit
