#pragma once

#include <vector>

#include "ctcalib/sensor_models.hpp"
#include "ctcalib/trajectory.hpp"

namespace ctcalib {

// Trajectory plus navigation states for one contiguous data segment. Joint
// multi-segment calibration shares intrinsics and extrinsics across segments
// while each segment keeps its own spline, gravity, biases, and clock offset.
struct SegmentState {
    TrajectorySpline traj;
    ImuNavState nav;
    double time_offset = 0;

    explicit SegmentState(TrajectorySpline t) : traj(std::move(t)) {}
};

struct CalibState {
    std::vector<SegmentState> segments;
    ImuIntrinsics imu_intrinsics;
    std::vector<LidarBeamIntrinsics> beams;
    Extrinsics extrinsics;
};

// Fixed error-state slot order:
//   per segment: translation knots (3 each), rotation knots (3 each),
//                gravity tangent (2), gyro bias (3), accel bias (3)
//   shared:      gyro scale (3), gyro misalignment (3), gyro frame rotation (3),
//                accel scale (3), accel misalignment (3),
//                per-beam LiDAR intrinsics (6 each),
//                extrinsic rotation (3), extrinsic translation (3)
//   per segment: clock offset (1)
// The extrinsic block is 6 contiguous slots, rotation first.
struct StateLayout {
    struct Segment {
        int n_knots = 0;
        int p_off = 0, q_off = 0, nav_off = 0;
    };
    std::vector<Segment> seg;
    int imu_off = 0;
    int lidar_off = 0;
    int ext_off = 0;
    int tc_off = 0;
    int num_beams = 0;
    int total = 0;

    static StateLayout of(const CalibState& state);

    int p_slot(int s, int knot) const { return seg[s].p_off + 3 * knot; }
    int q_slot(int s, int knot) const { return seg[s].q_off + 3 * knot; }
    int gravity_slot(int s) const { return seg[s].nav_off; }
    int bias_gyro_slot(int s) const { return seg[s].nav_off + 2; }
    int bias_accel_slot(int s) const { return seg[s].nav_off + 5; }
    int scale_gyro_slot() const { return imu_off; }
    int misalign_gyro_slot() const { return imu_off + 3; }
    int gyro_frame_slot() const { return imu_off + 6; }
    int scale_accel_slot() const { return imu_off + 9; }
    int misalign_accel_slot() const { return imu_off + 12; }
    int beam_slot(int b) const { return lidar_off + 6 * b; }
    int ext_rot_slot() const { return ext_off; }
    int ext_trans_slot() const { return ext_off + 3; }
    int tc_slot(int s) const { return tc_off + s; }
};

// Manifold update. Rotations compose right-multiplicatively, gravity moves in
// the tangent plane of its sphere and is renormalized, everything else is
// additive. Clock offsets are clamped to [-tc_bound, tc_bound]. Quaternion
// knots are hemisphere-aligned afterwards.
void apply_increment(CalibState& state, const StateLayout& layout, const VecX& dx,
                     double tc_bound);

// Slot activity mask helpers.
struct ActiveMask {
    std::vector<char> on;

    explicit ActiveMask(int total, bool value = true) : on(total, value) {}
    void set(int slot, int width, bool value) {
        for (int i = 0; i < width; ++i) on[slot + i] = value;
    }
    bool operator[](int i) const { return on[i] != 0; }
    int count() const;
    std::vector<int> active_indices() const;
};

// Fixes the gauge freedoms of every segment: first rotation knot and first
// translation knot.
void mask_gauge(const CalibState& state, const StateLayout& layout, ActiveMask& mask);

// IMU and LiDAR intrinsic slots; the first beam keeps only its two distance
// parameters (scale, offset) adjustable as the per-beam datum.
void mask_intrinsics(const StateLayout& layout, ActiveMask& mask, bool active);
void mask_first_beam_datum(const StateLayout& layout, ActiveMask& mask);

}  // namespace ctcalib
