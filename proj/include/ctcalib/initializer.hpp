#pragma once

#include <vector>

#include "ctcalib/sensor_models.hpp"
#include "ctcalib/trajectory.hpp"

namespace ctcalib {

// Discrete map-from-LiDAR pose at one scan stamp; the first pose of a
// sequence is the identity, anchoring the map frame to that scan.
struct OdometryPose {
    double tau = 0;
    Pose T;
    bool flagged = false;  // registration did not converge; consumers may drop
};

// Paired relative rotations of the two sensors over a common interval.
struct RotationPair {
    Quat q_imu = Quat::Identity();
    Quat q_lidar = Quat::Identity();
};

// True per-scan poses composed with bounded random perturbations; the first
// pose stays exactly identity. Intended for simulation studies that bypass
// scan registration.
std::vector<OdometryPose> perturbed_odometry(const std::vector<double>& stamps,
                                             const std::vector<Pose>& world_lidar_poses,
                                             double sigma_rot, double sigma_trans,
                                             unsigned seed);

// Map parameters are coarser than the calibration-stage surfel map: an
// odometry map seeded from a single sparse scan needs big cells and a low
// point floor before keyframes densify it.
struct IcpOdometryOptions {
    double map_cell = 1.0;
    double map_planarity = 0.3;
    int map_min_points = 8;
    double gate = 0.3;             // association gate during registration, m
    int max_iterations = 10;
    double huber_delta = 0.05;     // m
    double keyframe_trans = 0.3;   // m
    double keyframe_rot = 0.0873;  // rad, ~5 deg
    int point_stride = 1;
    double divergence_rms = 0.3;   // m; above this after max_iterations -> flagged
    std::vector<LidarBeamIntrinsics> beams;  // projection model for raw scans
};

// Scan-to-map point-to-plane registration against an accumulating keyframe
// surfel map. Scans are treated as rigid; distortion is left to the batch
// stage. Returns one pose per scan, first = identity.
std::vector<OdometryPose> plane_icp_odometry(const std::vector<LidarScan>& scans,
                                             const IcpOdometryOptions& opts);

// Rotation-compensates every return of each scan to the scan's stamp using an
// initial rotation spline and extrinsic rotation guess, yielding Cartesian
// scans for a second, cleaner registration pass.
std::vector<LidarScan> derotate_scans(const std::vector<LidarScan>& scans,
                                      const std::vector<LidarBeamIntrinsics>& beams,
                                      const TrajectorySpline& rot_spline, const Quat& q_imu_lidar);

// Fits the spline's rotation control points to raw gyro rates, intrinsics and
// bias ignored; the orientation at the domain start is anchored to the
// identity. Gauss-Newton on the existing knot grid; translation knots are
// untouched. Throws std::invalid_argument when samples are fewer than
// control points.
void init_rotation_spline(TrajectorySpline& spline, const std::vector<ImuSample>& imu,
                          int iterations = 15);

// Relative-rotation pairs over consecutive unflagged odometry intervals,
// with the IMU side read from the rotation spline.
std::vector<RotationPair> make_rotation_pairs(const TrajectorySpline& rot_spline,
                                              const std::vector<OdometryPose>& odom);

// Hand-eye rotation from stacked quaternion products: the minimizer of
// ||(L(q_imu) - R(q_lidar)) q|| over unit q, solved by SVD. Pairs rotating
// less than min_angle are discarded as uninformative. Throws
// std::runtime_error when the remaining axes are degenerate
// (sigma_second_min / sigma_max < 1e-3) or fewer than two pairs survive.
Quat init_extrinsic_rotation(const std::vector<RotationPair>& pairs,
                             double min_angle = 0.00873);

// Fits translation control points so the IMU path explains the odometry
// positions mapped through the extrinsic guess: target p_I(tau) =
// q_IL p_odom + p_IL - R_I(tau) p_IL. Ridge-regularized; knots outside the
// data span inherit their nearest fitted neighbour.
void init_translation_spline(TrajectorySpline& spline, const std::vector<OdometryPose>& odom,
                             const Quat& q_imu_lidar, const Vec3& p_imu_lidar = Vec3::Zero(),
                             double ridge = 1e-6);

// Refines a gyro-fit orientation spline against odometry rotations mapped
// through the extrinsic rotation, jointly estimating the gyro bias that a
// rate-only fit silently absorbs as slow orientation drift. The first control
// point stays frozen so the anchor frame is preserved.
void refine_rotation_spline(TrajectorySpline& spline, const std::vector<ImuSample>& imu,
                            const std::vector<OdometryPose>& odom, const Quat& q_imu_lidar,
                            Vec3* bias_gyro, double gyro_sigma = 3.4e-3,
                            double anchor_sigma = 5e-3, int iterations = 8);

// Joint linear fit of the translation control points together with gravity
// and the accelerometer bias. Odometry pins the path while the specific-force
// samples pin its curvature, so boundary knots the odometry never reaches
// stay consistent instead of collapsing toward the ridge. The recovered
// gravity is rescaled to the standard norm before it is stored.
void init_translation_spline(TrajectorySpline& spline, const std::vector<OdometryPose>& odom,
                             const Quat& q_imu_lidar, const Vec3& p_imu_lidar,
                             const std::vector<ImuSample>& imu, ImuNavState* nav,
                             double odom_sigma = 0.01, double accel_sigma = 1.2e-2);

}  // namespace ctcalib
