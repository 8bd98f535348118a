// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#include "gstrack/geom.hpp"

#include <algorithm>
#include <cmath>

namespace gstrack {

Quaternion Quaternion::from_axis_angle(const Vec3 &axis, double angle) {
    const double n = axis.norm();
    if (n == 0.0) {
        return identity();
    }
    const double s = std::sin(0.5 * angle) / n;
    return {std::cos(0.5 * angle), axis.x() * s, axis.y() * s, axis.z() * s};
}

Quaternion Quaternion::from_matrix(const Mat3 &m) {
    // Shepperd: branch on the largest diagonal term for stability.
    const double trace = m.trace();
    Quaternion q;
    if (trace > m(0, 0) && trace > m(1, 1) && trace > m(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + trace);
        q = {0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s, (m(1, 0) - m(0, 1)) / s};
    } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
        q = {(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s, (m(0, 2) + m(2, 0)) / s};
    } else if (m(1, 1) > m(2, 2)) {
        const double s = 2.0 * std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2));
        q = {(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s, (m(1, 2) + m(2, 1)) / s};
    } else {
        const double s = 2.0 * std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1));
        q = {(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s, 0.25 * s};
    }
    if (q.w < 0.0) {
        q = -q;
    }
    return q.normalized();
}

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion Quaternion::normalized() const {
    const double n = norm();
    return {w / n, x / n, y / n, z / n};
}

Mat3 Quaternion::to_matrix() const {
    const Quaternion q = normalized();
    const double xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
    const double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
    const double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
    Mat3 r;
    r << 1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy),
         2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx),
         2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy);
    return r;
}

Quaternion operator*(const Quaternion &a, const Quaternion &b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Pose Pose::inverse() const {
    const Quaternion inv = rotation.normalized().conjugate();
    return {inv, -(inv.to_matrix() * translation)};
}

Pose operator*(const Pose &a, const Pose &b) {
    return {(a.rotation * b.rotation).normalized(), a.rotation.rotate(b.translation) + a.translation};
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0 && fy > 0.0)) {
        throw std::invalid_argument("intrinsics: focal lengths must be positive");
    }
    if (width <= 0 || height <= 0) {
        throw std::invalid_argument("intrinsics: resolution must be positive");
    }
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
        throw std::invalid_argument("intrinsics: principal point outside the image");
    }
    if (!(near > 0.0 && near < far)) {
        throw std::invalid_argument("intrinsics: require 0 < near < far");
    }
}

Vec3 transform_to_camera(const Pose &pose, const Vec3 &point_obj) {
    return pose.rotation_matrix() * point_obj + pose.translation;
}

Vec2 project_point(const CameraIntrinsics &intr, const Vec3 &x_c) {
    if (!(x_c.z() > intr.near)) {
        throw ProjectionError("project_point: point on or behind the near plane");
    }
    return {intr.fx * x_c.x() / x_c.z() + intr.cx, intr.fy * x_c.y() / x_c.z() + intr.cy};
}

Vec3 deproject(const CameraIntrinsics &intr, double u, double v, double depth) {
    return {(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth};
}

Mat23 projection_jacobian(const CameraIntrinsics &intr, const Vec3 &x_c) {
    if (!(x_c.z() > intr.near)) {
        throw ProjectionError("projection_jacobian: point on or behind the near plane");
    }
    const double iz = 1.0 / x_c.z();
    const double iz2 = iz * iz;
    Mat23 j;
    j << intr.fx * iz, 0.0, -intr.fx * x_c.x() * iz2,
         0.0, intr.fy * iz, -intr.fy * x_c.y() * iz2;
    return j;
}

Pose extrapolate_pose(const Pose &prev, const Pose &curr) {
    Pose next;
    next.translation = curr.translation + (curr.translation - prev.translation);
    // Replays the camera-frame increment q_t ⊗ conj(q_{t-1}) on the left.
    next.rotation = (curr.rotation * prev.rotation.conjugate() * curr.rotation).normalized();
    return next;
}

Pose extrapolate_pose_literal(const Pose &prev, const Pose &curr) {
    Pose next;
    next.translation = curr.translation + (curr.translation - prev.translation);
    next.rotation = (curr.rotation * (curr.rotation * prev.rotation.conjugate())).normalized();
    return next;
}

double rotation_distance(const Quaternion &q1, const Quaternion &q2) {
    const Quaternion d = q1.normalized() * q2.normalized().conjugate();
    return 2.0 * std::acos(std::clamp(std::abs(d.w), 0.0, 1.0));
}

double rotation_distance_raw(const Quaternion &q1, const Quaternion &q2) {
    const Quaternion d = q1.normalized() * q2.normalized().conjugate();
    return 2.0 * std::acos(std::clamp(d.w, -1.0, 1.0));
}

Eigen::Vector4d rotation_matrix_vjp(const Quaternion &q_raw, const Mat3 &g) {
    const double n = q_raw.norm();
    const Quaternion q = q_raw.normalized();
    const double w = q.w, x = q.x, y = q.y, z = q.z;

    // <g, dR/dq_k> for each unit-quaternion component.
    const double gw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    const double gx = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) +
                             z * g(2, 0) + w * g(2, 1) - 2.0 * x * g(2, 2));
    const double gy = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                             w * g(2, 0) + z * g(2, 1) - 2.0 * y * g(2, 2));
    const double gz = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) +
                             y * g(1, 2) + x * g(2, 0) + y * g(2, 1));

    const Eigen::Vector4d unit(w, x, y, z);
    const Eigen::Vector4d grad(gw, gx, gy, gz);
    return (grad - unit * unit.dot(grad)) / n;
}

} // namespace gstrack
