#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ctcalib/dataset.hpp"
#include "ctcalib/residuals.hpp"
#include "ctcalib/surfel_map.hpp"

namespace ctcalib {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

struct NormalSystem {
    MatX A;
    VecX b;
    double cost = 0;
    int n_gyro = 0;
    int n_accel = 0;
    int n_plane = 0;
    int n_dropped = 0;  // residuals that fell outside the trajectory domain

    void resize(int n);
};

// A = sum w JᵀJ, b = -sum w Jᵀr over the given residual lists. Huber applies
// to the plane residuals only. with_jacobians=false skips A and b and leaves
// the cost/counters, which is all a step-acceptance check needs.
NormalSystem assemble_normal_system(const EvalContext& ctx,
                                    const std::vector<GyroResidual>& gyro,
                                    const std::vector<AccelResidual>& accel,
                                    const std::vector<PlaneResidual>& plane,
                                    double huber_delta, bool with_jacobians = true);

// Slots that are unlocked by the mask and touched by at least one residual
// (positive diagonal). Everything else stays frozen during the solve.
std::vector<int> solvable_indices(const NormalSystem& sys, const ActiveMask& mask);

// (A + mu I) dx = b on the index subset; result scattered to full layout.
VecX solve_damped(const NormalSystem& sys, const std::vector<int>& idx, double mu);

struct TsvdSolution {
    VecX dx;
    int rank = 0;
    VecX sigmas;                // descending spectrum of the solvable block
    std::vector<VecX> dropped;  // unit directions below the threshold, full layout
    double threshold = 0;
};

// Truncated eigen-solve: keep directions with sigma strictly above the
// threshold, freeze the rest. Effective threshold is
// max(abs_threshold, rel_threshold * sigma_max).
TsvdSolution solve_tsvd(const NormalSystem& sys, const std::vector<int>& idx,
                        double abs_threshold, double rel_threshold = 0);

enum class InfoReduction {
    kExtrinsic,  // Schur-complement everything onto the 6-dof extrinsic block
    kFullState,  // spectrum of the whole solvable block
};

struct SegmentInfo {
    int index = 0;
    double t_begin = 0;
    double t_end = 0;
    VecX sigmas;  // descending
    double sigma_min = 0;
    Vec6 u_min = Vec6::Zero();  // weakest direction over [rot; trans] extrinsic slots
    Mat6 info = Mat6::Zero();   // reduced information (kExtrinsic mode)
    bool prior_added = false;   // Schur pivot needed regularization
};

SegmentInfo segment_information(const NormalSystem& sys, const ActiveMask& mask,
                                const StateLayout& layout,
                                InfoReduction mode = InfoReduction::kExtrinsic);

// Indices of segments whose sigma_min is strictly above the threshold, most
// informative first, truncated to n_max.
std::vector<int> select_segments(const std::vector<SegmentInfo>& infos,
                                 double sigma_threshold, int n_max);

struct OptimizeOptions {
    int outer_iterations = 8;   // map rebuilds
    int inner_iterations = 8;   // relinearizations per rebuilt map
    int intrinsics_start = 2;      // iteration from which IMU intrinsics and tc move
    int raw_correction_start = 2;  // from which map projection uses estimated beams
                                   // and the beam parameters themselves unfreeze;
                                   // delaying it keeps early maps on nominal ranges
                                   // at the price of a stale-model bias
    bool calibrate_imu_intrinsics = true;
    bool calibrate_lidar_intrinsics = true;
    bool estimate_time_offset = true;
    double tc_bound = 0.05;

    bool use_tsvd = false;
    double tsvd_rel = 1e-3;
    double tsvd_abs = 0;

    double huber_delta = 0.02;
    double gyro_sigma = 3.4e-3;   // rad/s, per sample
    double accel_sigma = 1.2e-2;  // m/s^2, per sample
    double range_sigma = 0.01;    // m
    double min_incidence = 0.1;

    double map_cell = 0.5;
    double map_planarity = 0.6;
    int map_min_points = 20;
    double assoc_gate = 0.05;
    int point_stride = 1;

    int lm_max_rejects = 8;
    double mu_init_scale = 1e-4;
    double mu_fail_scale = 1e8;
};

struct IterationRecord {
    int iteration = 0;
    double cost_before = 0;
    double cost_after = 0;
    int n_plane = 0;
    int n_imu = 0;
    double mu = 0;
    int rejects = 0;
    int tsvd_rank = -1;
    double sigma_min = 0;
    double sigma_max = 0;
    bool accepted = false;
    double mme = std::numeric_limits<double>::quiet_NaN();
    Extrinsics extrinsics;
    std::vector<double> time_offsets;
};

// Optional per-iteration map-quality probe; receives the undistorted map
// points of every segment at the current linearization point.
using MapCallback =
    std::function<double(const CalibState&, const std::vector<std::vector<Vec3>>&)>;

struct OptimizeReport {
    bool converged = false;
    std::string stop_reason;
    std::vector<IterationRecord> iterations;
    double final_cost = 0;
    double final_mme = std::numeric_limits<double>::quiet_NaN();
    NormalSystem final_system;  // assembled at the returned state
    std::vector<char> final_active;
    std::vector<double> anchor_stamps;
    std::vector<GyroResidual> final_gyro;
    std::vector<AccelResidual> final_accel;
    std::vector<PlaneResidual> final_plane;
};

// Undistorts every (strided) return of a segment into the map frame anchored
// at the first scan, using the given beam parameters for projection.
std::vector<Vec3> project_map_points(const SegmentState& seg, const Extrinsics& ext,
                                     const std::vector<LidarBeamIntrinsics>& beams,
                                     const std::vector<LidarScan>& scans, int stride);

// Alternating map-rebuild / damped-step refinement of the full state.
OptimizeReport optimize(CalibState& state, const std::vector<SegmentData>& data,
                        const OptimizeOptions& opts, const MapCallback& map_cb = {});

}  // namespace ctcalib
