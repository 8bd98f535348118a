// Copyright Contributors to the gstrack project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <stdexcept>

namespace gstrack {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

/// Thrown when a point sits on or behind the near plane.
class ProjectionError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

/// Rotation quaternion stored as (w, x, y, z). q and -q are the same rotation.
struct Quaternion {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    static Quaternion identity() { return {}; }
    /// Rotation of `angle` radians about `axis` (need not be normalized).
    static Quaternion from_axis_angle(const Vec3 &axis, double angle);
    /// Nearest unit quaternion to a proper rotation matrix.
    static Quaternion from_matrix(const Mat3 &rotation);

    double norm() const;
    Quaternion normalized() const;
    Quaternion conjugate() const { return {w, -x, -y, -z}; }
    Quaternion operator-() const { return {-w, -x, -y, -z}; }

    /// Standard unit-quaternion rotation matrix of the normalized quaternion.
    Mat3 to_matrix() const;
    Vec3 rotate(const Vec3 &v) const { return to_matrix() * v; }
};

/// Hamilton product, a ⊗ b applies b first.
Quaternion operator*(const Quaternion &a, const Quaternion &b);

/// Rigid transform T_CO taking object-frame points into the camera frame.
struct Pose {
    Quaternion rotation;
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return {}; }

    Pose inverse() const;
    bool operator==(const Pose &o) const {
        return rotation.w == o.rotation.w && rotation.x == o.rotation.x && rotation.y == o.rotation.y &&
               rotation.z == o.rotation.z && translation == o.translation;
    }
    Mat3 rotation_matrix() const { return rotation.to_matrix(); }
};

/// a ∘ b: apply b, then a.
Pose operator*(const Pose &a, const Pose &b);

struct CameraIntrinsics {
    double fx = 400.0;
    double fy = 400.0;
    double cx = 80.0;
    double cy = 60.0;
    int width = 160;
    int height = 120;
    double near = 0.01;
    double far = 1000.0;

    /// Throws std::invalid_argument when the invariants do not hold.
    void validate() const;
    bool operator==(const CameraIntrinsics &) const = default;
};

Vec3 transform_to_camera(const Pose &pose, const Vec3 &point_obj);

/// Pixel coordinates; pixel (i, j) is sampled at (i, j). Throws ProjectionError
/// for z <= near.
Vec2 project_point(const CameraIntrinsics &intr, const Vec3 &x_c);

/// Inverse of project_point at metric depth `depth`.
Vec3 deproject(const CameraIntrinsics &intr, double u, double v, double depth);

/// d(project_point)/d(x_c). Throws ProjectionError for z <= near.
Mat23 projection_jacobian(const CameraIntrinsics &intr, const Vec3 &x_c);

/// Constant-velocity prediction from the last two estimates:
/// t⁺ = 2·t_t − t_{t-1}, q⁺ = q_t ⊗ conj(q_{t-1}) ⊗ q_t.
Pose extrapolate_pose(const Pose &prev, const Pose &curr);

/// Variant with q⁺ = q_t ⊗ (q_t ⊗ conj(q_{t-1})). Agrees with
/// `extrapolate_pose` when the two rotations commute.
Pose extrapolate_pose_literal(const Pose &prev, const Pose &curr);

/// Geodesic angle in [0, pi], folded over the double cover.
double rotation_distance(const Quaternion &q1, const Quaternion &q2);

/// Unfolded 2·acos((q1 ⊗ conj(q2)).w); ranges over [0, 2pi].
double rotation_distance_raw(const Quaternion &q1, const Quaternion &q2);

/// Vector-Jacobian product of `to_matrix` through the normalization:
/// returns dL/dq given dL/dR for R = R(q/|q|).
Eigen::Vector4d rotation_matrix_vjp(const Quaternion &q, const Mat3 &dL_dR);

inline Eigen::Vector4d to_vector(const Quaternion &q) { return {q.w, q.x, q.y, q.z}; }
inline Quaternion to_quaternion(const Eigen::Vector4d &v) { return {v[0], v[1], v[2], v[3]}; }

} // namespace gstrack
