#include "ctcalib/geometry.hpp"

#include <cmath>

namespace ctcalib {

Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(),
         v.z(), 0, -v.x(),
         -v.y(), v.x(), 0;
    return m;
}

Vec3 vee(const Mat3& m) {
    return Vec3(m(2, 1), m(0, 2), m(1, 0));
}

Quat so3_exp(const Vec3& phi) {
    const double angle = phi.norm();
    const double half = 0.5 * angle;
    double k;  // sin(angle/2) / angle
    if (angle < kSmallAngle) {
        k = 0.5 - angle * angle / 48.0;
    } else {
        k = std::sin(half) / angle;
    }
    Quat q(std::cos(half), k * phi.x(), k * phi.y(), k * phi.z());
    return q.normalized();
}

Vec3 so3_log(const Quat& q_in) {
    Quat q = q_in;
    if (q.w() < 0) q.coeffs() = -q.coeffs();
    const double vn = q.vec().norm();
    const double w = q.w();
    if (vn < kSmallAngle) {
        // angle/sin(angle/2) ~ 2/w for tiny angles (w ~ 1).
        return (2.0 / w) * q.vec();
    }
    const double angle = 2.0 * std::atan2(vn, w);
    return (angle / vn) * q.vec();
}

Mat3 so3_right_jacobian(const Vec3& phi) {
    const double a = phi.norm();
    const Mat3 S = skew(phi);
    if (a < kSmallAngle) {
        return Mat3::Identity() - 0.5 * S + (1.0 / 6.0) * S * S;
    }
    const double a2 = a * a;
    return Mat3::Identity() - (1.0 - std::cos(a)) / a2 * S +
           (a - std::sin(a)) / (a2 * a) * S * S;
}

Mat3 so3_right_jacobian_inv(const Vec3& phi) {
    const double a = phi.norm();
    const Mat3 S = skew(phi);
    if (a < kSmallAngle) {
        return Mat3::Identity() + 0.5 * S + (1.0 / 12.0) * S * S;
    }
    const double a2 = a * a;
    const double c = 1.0 / a2 - (1.0 + std::cos(a)) / (2.0 * a * std::sin(a));
    return Mat3::Identity() + 0.5 * S + c * S * S;
}

Mat4 quat_left_matrix(const Quat& q) {
    Mat4 m;
    m.topLeftCorner<3, 3>() = q.w() * Mat3::Identity() + skew(q.vec());
    m.topRightCorner<3, 1>() = q.vec();
    m.bottomLeftCorner<1, 3>() = -q.vec().transpose();
    m(3, 3) = q.w();
    return m;
}

Mat4 quat_right_matrix(const Quat& q) {
    Mat4 m;
    m.topLeftCorner<3, 3>() = q.w() * Mat3::Identity() - skew(q.vec());
    m.topRightCorner<3, 1>() = q.vec();
    m.bottomLeftCorner<1, 3>() = -q.vec().transpose();
    m(3, 3) = q.w();
    return m;
}

Quat hemisphere_aligned(const Quat& q, const Quat& ref) {
    if (q.coeffs().dot(ref.coeffs()) < 0) {
        Quat out = q;
        out.coeffs() = -out.coeffs();
        return out;
    }
    return q;
}

Quat canonical(const Quat& q) {
    if (q.w() < 0) {
        Quat out = q;
        out.coeffs() = -out.coeffs();
        return out;
    }
    return q;
}

double rotation_angle(const Quat& a, const Quat& b) {
    return so3_log(a.conjugate() * b).norm();
}

Mat3 euler_zyx_to_matrix(const Vec3& rpy) {
    return (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) *
            Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
            Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
        .toRotationMatrix();
}

Vec3 matrix_to_euler_zyx(const Mat3& R) {
    // R = Rz(yaw) Ry(pitch) Rx(roll); pitch in [-pi/2, pi/2].
    const double pitch = std::asin(std::clamp(-R(2, 0), -1.0, 1.0));
    double roll, yaw;
    if (std::abs(R(2, 0)) < 1.0 - 1e-12) {
        roll = std::atan2(R(2, 1), R(2, 2));
        yaw = std::atan2(R(1, 0), R(0, 0));
    } else {
        // Gimbal lock: only roll +/- yaw is defined; put everything in roll.
        roll = std::atan2(-R(1, 2), R(1, 1));
        yaw = 0.0;
    }
    return Vec3(roll, pitch, yaw);
}

Eigen::Matrix<double, 3, 2> tangent_basis(const Vec3& n) {
    const Vec3 u = n.normalized();
    Vec3 aux = std::abs(u.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    Eigen::Matrix<double, 3, 2> b;
    b.col(0) = u.cross(aux).normalized();
    b.col(1) = u.cross(b.col(0)).normalized();
    return b;
}

}  // namespace ctcalib
