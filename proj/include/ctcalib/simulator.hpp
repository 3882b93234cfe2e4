#pragma once

#include <memory>
#include <vector>

#include "ctcalib/dataset.hpp"
#include "ctcalib/trajectory.hpp"

namespace ctcalib {

// Pose and derivatives of a rigid body at one instant; omega is expressed in
// the body frame.
struct TrajectorySample {
    Quat q = Quat::Identity();
    Vec3 p = Vec3::Zero();
    Vec3 vel = Vec3::Zero();
    Vec3 acc = Vec3::Zero();
    Vec3 omega = Vec3::Zero();
};

// Position plus intrinsic Z-Y-X Euler angles (roll rx, pitch ry, yaw rz,
// applied as R = Rz Ry Rx) with their time derivatives.
struct EulerKinematics {
    Vec3 pos = Vec3::Zero();
    Vec3 vel = Vec3::Zero();
    Vec3 acc = Vec3::Zero();
    Vec3 euler = Vec3::Zero();
    Vec3 euler_rate = Vec3::Zero();
};

// Converts Euler kinematics to a pose sample, including the body angular
// velocity implied by the Euler rates.
TrajectorySample euler_sample(const EulerKinematics& k);

class TrajectoryModel {
  public:
    virtual ~TrajectoryModel() = default;
    virtual TrajectorySample at(double t) const = 0;
    virtual double t_begin() const = 0;
    virtual double t_end() const = 0;
    // Motion confined to a plane with yaw-only rotation.
    virtual bool planar() const { return false; }
};

// Fully excited benchmark path: all three position axes and all three Euler
// angles vary. Valid on [0, duration] plus a small clock-skew pad.
class SinusoidTrajectory : public TrajectoryModel {
  public:
    explicit SinusoidTrajectory(double duration = 10.0) : duration_(duration) {}
    TrajectorySample at(double t) const override;
    double t_begin() const override { return 0.0; }
    double t_end() const override { return duration_; }

  private:
    double duration_;
};

// Planar figure-8 sweep at constant height with yaw-only rotation; the
// canonical degenerate motion.
class Figure8Trajectory : public TrajectoryModel {
  public:
    explicit Figure8Trajectory(double duration = 10.0) : duration_(duration) {}
    TrajectorySample at(double t) const override;
    double t_begin() const override { return 0.0; }
    double t_end() const override { return duration_; }
    bool planar() const override { return true; }

  private:
    double duration_;
};

// Long recording alternating planar cruising with fully excited windows,
// blended by a quintic smoothstep so the path stays twice differentiable.
class AlternatingTrajectory : public TrajectoryModel {
  public:
    AlternatingTrajectory(double window = 15.0, int num_windows = 8)
        : window_(window), num_windows_(num_windows) {}
    TrajectorySample at(double t) const override;
    double t_begin() const override { return 0.0; }
    double t_end() const override { return window_ * num_windows_; }
    double window_length() const { return window_; }
    int num_windows() const { return num_windows_; }
    // Even-indexed windows are excited, odd-indexed ones planar.
    bool window_excited(int w) const { return w % 2 == 0; }

  private:
    double window_;
    int num_windows_;
};

// Plays back a spline as ground truth; lets generated data have an exactly
// representable true trajectory.
class SplineTrajectoryModel : public TrajectoryModel {
  public:
    explicit SplineTrajectoryModel(TrajectorySpline spline) : spline_(std::move(spline)) {}
    TrajectorySample at(double t) const override;
    double t_begin() const override { return spline_.t_min(); }
    double t_end() const override { return spline_.t_max() - 1e-9; }
    const TrajectorySpline& spline() const { return spline_; }

  private:
    TrajectorySpline spline_;
};

// Sensor-rig mounting rotation for the degeneracy study: maps the vehicle's
// vertical axis into the IMU frame. 'A' keeps them aligned, 'B' tilts 30
// degrees about y, 'C' adds a 30 degree roll on top.
Mat3 mounting_case(char c);

// Bounded rectangle n.p + d = 0 with in-plane axes spanning the extent.
struct ScenePlane {
    Vec3 normal = Vec3::UnitZ();
    double d = 0;
    Vec3 center = Vec3::Zero();
    Vec3 axis_u = Vec3::UnitX();
    Vec3 axis_v = Vec3::UnitY();
    double half_u = 1;
    double half_v = 1;
};

struct PlaneScene {
    std::vector<ScenePlane> planes;

    // Walled room spanning [-4,8] x [0,10] x [0,10] with tilted interior
    // panels for normal-direction diversity.
    static PlaneScene default_room();

    // Nearest bounded-plane hit strictly in front of the origin. Returns
    // false on a miss; hit distance is Euclidean along the unit direction.
    bool cast(const Vec3& origin, const Vec3& dir, double max_range, double* dist,
              int* plane_index = nullptr) const;
};

// u_hint (projected into the plane) fixes the first in-plane axis so the
// half-extents have a deterministic orientation; the normal is flipped to
// face interior_hint.
ScenePlane make_scene_plane(const Vec3& center, const Vec3& normal, const Vec3& u_hint,
                            double half_u, double half_v, const Vec3& interior_hint);

// Everything the generator knows and an estimator is asked to recover.
struct GroundTruth {
    std::shared_ptr<const TrajectoryModel> vehicle;
    Mat3 mounting = Mat3::Identity();  // IMU orientation of the vehicle's axes
    char mounting_label = 'A';
    ImuIntrinsics imu;
    ImuNavState nav;
    std::vector<LidarBeamIntrinsics> beams;
    Extrinsics extrinsics;
    double time_offset = 0;
    Vec3 degenerate_direction = Vec3::Zero();  // zero when fully observable

    TrajectorySample imu_sample(double t) const;
    Pose imu_pose(double t) const;
};

// Randomized true calibration: per-beam geometry offsets, IMU scale and
// misalignment, gyro frame rotation, biases. The first beam's angular and
// positional offsets stay zero (it is the datum the estimator fixes) while
// its range scale and offset are drawn. sigma_scale = 0 gives exact nominals.
GroundTruth sample_random_calibration(unsigned seed, int num_beams = 16,
                                      double sigma_scale = 1.0);

// Installs a mounting case and the implied unobservable translation direction
// (planar vehicle motion only).
void apply_mounting(GroundTruth& truth, char c);

struct SimOptions {
    double duration = 10.0;
    double imu_rate = 400.0;
    double scan_period = 0.1;
    double azimuth_step_deg = 0.2;
    double max_range = 30.0;
    double range_sigma = 0.01;        // m
    double gyro_sigma = 3.4e-3;       // rad/s per sample
    double accel_sigma = 1.2e-2;      // m/s^2 per sample
    double gyro_walk = 2e-5;          // rad/s per sqrt(s)
    double accel_walk = 5e-4;         // m/s^2 per sqrt(s)
    double time_offset = 0;           // injected clock offset, s
    bool distortion = true;
    unsigned seed = 1;
};

struct Simulation {
    SegmentData data;
    std::vector<double> scan_stamps;    // LiDAR clock
    std::vector<Pose> scan_imu_poses;   // world-from-IMU at each scan stamp
    GroundTruth truth;
};

Simulation simulate(const GroundTruth& truth, const PlaneScene& scene,
                    const SimOptions& opts);

}  // namespace ctcalib
