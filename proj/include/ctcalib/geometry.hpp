#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ctcalib {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Repo-wide conventions:
//   * Quaternions are Hamilton, unit norm, stored/stacked as [qv; qw] = (x,y,z,w).
//   * Rotation vectors carry the full rotation angle (so3_exp(phi) rotates by |phi|).
//   * Angles are radians internally; degrees appear only at I/O boundaries.
inline constexpr double kGravityNorm = 9.8;

// Series switch-over for exp/log/Jacobian evaluations near the identity.
inline constexpr double kSmallAngle = 1e-8;

Mat3 skew(const Vec3& v);
Vec3 vee(const Mat3& m);

// Rotation vector -> unit quaternion, Taylor branch below kSmallAngle.
Quat so3_exp(const Vec3& phi);

// Unit quaternion -> rotation vector with |result| <= pi. The antipodal
// representative (w < 0) maps to the same rotation.
Vec3 so3_log(const Quat& q);

// Right Jacobian of so3_exp and its inverse: so3_exp(phi + d) ~
// so3_exp(phi) * so3_exp(Jr(phi) d) to first order.
Mat3 so3_right_jacobian(const Vec3& phi);
Mat3 so3_right_jacobian_inv(const Vec3& phi);
inline Mat3 so3_left_jacobian(const Vec3& phi) { return so3_right_jacobian(-phi); }
inline Mat3 so3_left_jacobian_inv(const Vec3& phi) { return so3_right_jacobian_inv(-phi); }

// 4x4 product matrices on [qv; qw] stackings: quat_left_matrix(q1) * vec4(q2)
// == vec4(q1 * q2) and quat_right_matrix(q2) * vec4(q1) == vec4(q1 * q2).
Mat4 quat_left_matrix(const Quat& q);
Mat4 quat_right_matrix(const Quat& q);

inline Vec4 quat_vec4(const Quat& q) { return Vec4(q.x(), q.y(), q.z(), q.w()); }
inline Quat quat_from_vec4(const Vec4& v) { return Quat(v(3), v(0), v(1), v(2)); }

// Returns q or -q, whichever has a non-negative dot product with ref.
Quat hemisphere_aligned(const Quat& q, const Quat& ref);

// Canonical representative with w >= 0, used when comparing rotations.
Quat canonical(const Quat& q);

// Angle of the relative rotation between two quaternions, in [0, pi].
double rotation_angle(const Quat& a, const Quat& b);

// Intrinsic Z-Y-X Euler angles rpy = (roll, pitch, yaw): R = Rz(yaw) Ry(pitch) Rx(roll).
Mat3 euler_zyx_to_matrix(const Vec3& rpy);
Vec3 matrix_to_euler_zyx(const Mat3& R);

// Rigid transform q,p acting as x -> q * x + p.
struct Pose {
    Quat q = Quat::Identity();
    Vec3 p = Vec3::Zero();

    Pose() = default;
    Pose(const Quat& q_, const Vec3& p_) : q(q_.normalized()), p(p_) {}

    Vec3 act(const Vec3& x) const { return q * x + p; }
    Pose inverse() const {
        Quat qi = q.conjugate();
        return Pose(qi, -(qi * p));
    }
    Pose operator*(const Pose& rhs) const { return Pose(q * rhs.q, q * rhs.p + p); }
};

// Orthonormal basis of the plane orthogonal to unit vector n, as columns.
Eigen::Matrix<double, 3, 2> tangent_basis(const Vec3& n);

}  // namespace ctcalib
