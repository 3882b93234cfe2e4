#pragma once

#include <vector>

#include "ctcalib/geometry.hpp"
#include "ctcalib/trajectory.hpp"

namespace ctcalib {

// IMU intrinsic model: the gyroscope reads S_w M_w R_wI * omega_body + b_w,
// the accelerometer reads S_a M_a * f_body + b_a, with f_body the specific
// force. S diagonal scale, M upper-triangular with unit diagonal (entries
// stored as (m01, m02, m12)), R_wI the rotation from the IMU (accelerometer)
// frame into the gyroscope frame. The accelerometer defines the IMU frame.
struct ImuIntrinsics {
    Vec3 scale_gyro = Vec3::Ones();
    Vec3 misalign_gyro = Vec3::Zero();
    Quat q_gyro_imu = Quat::Identity();
    Vec3 scale_accel = Vec3::Ones();
    Vec3 misalign_accel = Vec3::Zero();

    static Mat3 upper_unitriangular(const Vec3& m);
    Mat3 gyro_map() const;   // S_w M_w R_wI
    Mat3 accel_map() const;  // S_a M_a
};

// Navigation states estimated alongside the trajectory: gravity in the global
// frame (norm pinned to kGravityNorm) and constant additive biases.
struct ImuNavState {
    Vec3 gravity = Vec3(0, 0, -kGravityNorm);
    Vec3 bias_gyro = Vec3::Zero();
    Vec3 bias_accel = Vec3::Zero();
};

struct ImuSample {
    double t = 0;
    Vec3 gyro = Vec3::Zero();
    Vec3 accel = Vec3::Zero();
};

Vec3 predict_gyro(const ImuIntrinsics& intr, const ImuNavState& nav, const Vec3& omega_body);
Vec3 predict_accel(const ImuIntrinsics& intr, const ImuNavState& nav, const Quat& q_world_imu,
                   const Vec3& accel_world);

// Per-beam LiDAR intrinsics around the nominal elevation angle phi:
//   phi_bar = phi + delta_phi, theta_bar = theta + delta_theta,
//   rho_bar = scale * rho + delta_rho,
//   x = rho_bar cos(phi_bar) cos(theta_bar) + H sin(theta_bar)
//   y = rho_bar cos(phi_bar) sin(theta_bar) + H cos(theta_bar)
//   z = rho_bar sin(phi_bar) + V
struct LidarBeamIntrinsics {
    double phi_nominal = 0;  // fixed beam geometry, not estimated
    double delta_phi = 0;
    double delta_theta = 0;
    double vert_offset = 0;   // V
    double horiz_offset = 0;  // H
    double scale = 1;         // s
    double delta_rho = 0;

    // Estimated parameter order used everywhere a 6-slot beam block appears.
    Eigen::Matrix<double, 6, 1> params() const;
    void set_params(const Eigen::Matrix<double, 6, 1>& v);
};

struct RawLidarPoint {
    int beam = 0;
    double t = 0;      // LiDAR-clock timestamp of the individual return
    double range = 0;  // raw rho
    double azimuth = 0;
};

// One revolution of returns. Either raw (range/azimuth per beam) or
// pre-projected Cartesian points; intrinsics are only estimable in raw mode.
struct LidarScan {
    double stamp = 0;  // LiDAR-clock scan label tau_L
    bool cartesian = false;
    std::vector<RawLidarPoint> raw;
    std::vector<double> xyz_t;  // per-point timestamps for cartesian mode
    std::vector<Vec3> xyz;
};

// Decimates a return stream per beam. Returns arrive in firing order, so a
// flat index stride that shares a factor with the beam count would starve
// entire beams; keeping every step-th return of each beam cannot.
class BeamStride {
  public:
    explicit BeamStride(int step) : step_(step < 1 ? 1 : step) {}
    bool keep(int beam) {
        if (static_cast<size_t>(beam) >= count_.size()) count_.resize(beam + 1, 0);
        return count_[beam]++ % step_ == 0;
    }

  private:
    int step_;
    std::vector<int> count_;
};

Vec3 lidar_point_from_raw(const LidarBeamIntrinsics& beam, double range, double azimuth);

// Same projection with sensitivities: d point / d (6 beam parameters) and
// d point / d raw range.
Vec3 lidar_point_from_raw(const LidarBeamIntrinsics& beam, double range, double azimuth,
                          Eigen::Matrix<double, 3, 6>* d_params, Vec3* d_range);

// Numeric inverse used by the simulator and its tests: raw (range, azimuth)
// whose projection reproduces a point on this beam's measurement surface.
// Newton iteration to 1e-12; throws std::runtime_error if it fails.
std::pair<double, double> lidar_raw_from_point(const LidarBeamIntrinsics& beam, const Vec3& point);

// Fixed rigid extrinsics mapping LiDAR-frame vectors into the IMU frame.
struct Extrinsics {
    Quat q_imu_lidar = Quat::Identity();
    Vec3 p_imu_lidar = Vec3::Zero();

    Pose pose() const { return Pose(q_imu_lidar, p_imu_lidar); }
};

// Scalar point-to-plane distance for plane (unit normal n, offset d).
inline double point_to_plane(const Vec3& n, double d, const Vec3& point) {
    return n.dot(point) + d;
}

// LiDAR pose in the map frame anchored at the scan labelled tau0: the IMU
// clock reads tau + t_c when the LiDAR clock reads tau.
Pose lidar_pose_at(const TrajectorySpline& traj, const Extrinsics& extr, double time_offset,
                   double tau, double tau0);

}  // namespace ctcalib
