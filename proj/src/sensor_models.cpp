#include "ctcalib/sensor_models.hpp"

#include <cmath>
#include <stdexcept>

namespace ctcalib {

Mat3 ImuIntrinsics::upper_unitriangular(const Vec3& m) {
    Mat3 M = Mat3::Identity();
    M(0, 1) = m(0);
    M(0, 2) = m(1);
    M(1, 2) = m(2);
    return M;
}

Mat3 ImuIntrinsics::gyro_map() const {
    return scale_gyro.asDiagonal() * upper_unitriangular(misalign_gyro) *
           q_gyro_imu.toRotationMatrix();
}

Mat3 ImuIntrinsics::accel_map() const {
    return scale_accel.asDiagonal() * upper_unitriangular(misalign_accel);
}

Vec3 predict_gyro(const ImuIntrinsics& intr, const ImuNavState& nav, const Vec3& omega_body) {
    return intr.gyro_map() * omega_body + nav.bias_gyro;
}

Vec3 predict_accel(const ImuIntrinsics& intr, const ImuNavState& nav, const Quat& q_world_imu,
                   const Vec3& accel_world) {
    const Vec3 f = q_world_imu.conjugate() * (accel_world - nav.gravity);
    return intr.accel_map() * f + nav.bias_accel;
}

Eigen::Matrix<double, 6, 1> LidarBeamIntrinsics::params() const {
    Eigen::Matrix<double, 6, 1> v;
    v << delta_phi, delta_theta, vert_offset, horiz_offset, scale, delta_rho;
    return v;
}

void LidarBeamIntrinsics::set_params(const Eigen::Matrix<double, 6, 1>& v) {
    delta_phi = v(0);
    delta_theta = v(1);
    vert_offset = v(2);
    horiz_offset = v(3);
    scale = v(4);
    delta_rho = v(5);
}

Vec3 lidar_point_from_raw(const LidarBeamIntrinsics& beam, double range, double azimuth) {
    return lidar_point_from_raw(beam, range, azimuth, nullptr, nullptr);
}

Vec3 lidar_point_from_raw(const LidarBeamIntrinsics& beam, double range, double azimuth,
                          Eigen::Matrix<double, 3, 6>* d_params, Vec3* d_range) {
    if (range <= 0) throw std::invalid_argument("lidar range must be positive");
    const double phi = beam.phi_nominal + beam.delta_phi;
    const double theta = azimuth + beam.delta_theta;
    const double rho = beam.scale * range + beam.delta_rho;
    const double cp = std::cos(phi), sp = std::sin(phi);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double H = beam.horiz_offset;
    Vec3 p(rho * cp * ct + H * st, rho * cp * st + H * ct, rho * sp + beam.vert_offset);
    if (d_params) {
        auto& J = *d_params;
        J.col(0) = Vec3(-rho * sp * ct, -rho * sp * st, rho * cp);          // d/d delta_phi
        J.col(1) = Vec3(-rho * cp * st + H * ct, rho * cp * ct - H * st, 0);// d/d delta_theta
        J.col(2) = Vec3(0, 0, 1);                                           // d/d V
        J.col(3) = Vec3(st, ct, 0);                                         // d/d H
        J.col(4) = range * Vec3(cp * ct, cp * st, sp);                      // d/d scale
        J.col(5) = Vec3(cp * ct, cp * st, sp);                              // d/d delta_rho
    }
    if (d_range) *d_range = beam.scale * Vec3(cp * ct, cp * st, sp);
    return p;
}

std::pair<double, double> lidar_raw_from_point(const LidarBeamIntrinsics& beam,
                                               const Vec3& point) {
    // Solve the x/y rows of the projection for (rho_bar, theta_bar); the z row
    // is consistent by construction for points on the beam surface.
    const double phi = beam.phi_nominal + beam.delta_phi;
    const double cp = std::cos(phi);
    const double H = beam.horiz_offset;
    double theta = std::atan2(point.y(), point.x());
    double rho = point.norm();
    for (int it = 0; it < 50; ++it) {
        const double ct = std::cos(theta), st = std::sin(theta);
        const Vec2 f(rho * cp * ct + H * st - point.x(), rho * cp * st + H * ct - point.y());
        if (f.norm() < 1e-13) break;
        Eigen::Matrix2d J;
        J << cp * ct, -rho * cp * st + H * ct,
             cp * st, rho * cp * ct - H * st;
        const Vec2 d = J.fullPivLu().solve(f);
        rho -= d(0);
        theta -= d(1);
        if (it == 49) throw std::runtime_error("lidar_raw_from_point: Newton did not converge");
    }
    const double range = (rho - beam.delta_rho) / beam.scale;
    if (range <= 0) throw std::runtime_error("lidar_raw_from_point: non-positive range");
    double azimuth = theta - beam.delta_theta;
    const double twopi = 2 * M_PI;
    azimuth = azimuth - twopi * std::floor(azimuth / twopi);
    return {range, azimuth};
}

Pose lidar_pose_at(const TrajectorySpline& traj, const Extrinsics& extr, double time_offset,
                   double tau, double tau0) {
    const Pose T_IL = extr.pose();
    const Pose anchor = traj.pose(tau0 + time_offset) * T_IL;
    return anchor.inverse() * traj.pose(tau + time_offset) * T_IL;
}

}  // namespace ctcalib
