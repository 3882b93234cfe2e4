#include "ctcalib/residuals.hpp"

#include <cmath>

namespace ctcalib {

EvalContext::EvalContext(const CalibState& state, const StateLayout& layout,
                         const std::vector<double>& anchor_stamps)
    : state_(&state), layout_(&layout), stamps_(anchor_stamps) {
    anchor_.resize(state.segments.size());
    for (size_t s = 0; s < state.segments.size(); ++s) {
        const SegmentState& seg = state.segments[s];
        anchor_[s] = seg.traj.eval(stamps_[s] + seg.time_offset,
                                   TrajectorySpline::kPose | TrajectorySpline::kDerivatives |
                                       TrajectorySpline::kJacobians);
    }
}

bool eval_gyro(const EvalContext& ctx, const GyroResidual& res, bool with_jacobians,
               ResidualBlocks* out) {
    const CalibState& st = ctx.state();
    const StateLayout& lay = ctx.layout();
    const SegmentState& seg = st.segments[res.seg];
    const unsigned flags = TrajectorySpline::kDerivatives |
                           (with_jacobians ? TrajectorySpline::kJacobians : 0u);
    SplineEval e;
    try {
        e = seg.traj.eval(res.sample->t, flags);
    } catch (const std::domain_error&) {
        return false;
    }
    const ImuIntrinsics& ii = st.imu_intrinsics;
    const Mat3 R_wi = ii.q_gyro_imu.toRotationMatrix();
    const Vec3 y = R_wi * e.omega;                                   // gyro-frame rate
    const Vec3 z = ImuIntrinsics::upper_unitriangular(ii.misalign_gyro) * y;
    const Vec3 pred = ii.scale_gyro.cwiseProduct(z) + seg.nav.bias_gyro;

    out->rows = 3;
    out->n_blocks = 0;
    out->r = pred - res.sample->gyro;
    out->weight = res.weight;
    out->cost = 0.5 * res.weight * out->r.squaredNorm();
    if (!with_jacobians) return true;

    const Mat3 G = ii.gyro_map();
    for (int k = 0; k < 4; ++k) {
        out->add(lay.q_slot(res.seg, e.idx + k), 3, G * e.dw[k]);
    }
    out->add(lay.bias_gyro_slot(res.seg), 3, Mat3::Identity());
    out->add(lay.scale_gyro_slot(), 3, Mat3(z.asDiagonal()));
    Mat3 Jm = Mat3::Zero();
    Jm(0, 0) = ii.scale_gyro(0) * y(1);  // m01
    Jm(0, 1) = ii.scale_gyro(0) * y(2);  // m02
    Jm(1, 2) = ii.scale_gyro(1) * y(2);  // m12
    out->add(lay.misalign_gyro_slot(), 3, Jm);
    out->add(lay.gyro_frame_slot(), 3, -G * skew(e.omega));
    return true;
}

bool eval_accel(const EvalContext& ctx, const AccelResidual& res, bool with_jacobians,
                ResidualBlocks* out) {
    const CalibState& st = ctx.state();
    const StateLayout& lay = ctx.layout();
    const SegmentState& seg = st.segments[res.seg];
    const unsigned flags = TrajectorySpline::kPose | TrajectorySpline::kDerivatives |
                           (with_jacobians ? TrajectorySpline::kJacobians : 0u);
    SplineEval e;
    try {
        e = seg.traj.eval(res.sample->t, flags);
    } catch (const std::domain_error&) {
        return false;
    }
    const ImuIntrinsics& ii = st.imu_intrinsics;
    const Mat3 Rt = e.q.toRotationMatrix().transpose();
    const Vec3 f = Rt * (e.acc - seg.nav.gravity);  // body specific force
    const Vec3 z = ImuIntrinsics::upper_unitriangular(ii.misalign_accel) * f;
    const Vec3 pred = ii.scale_accel.cwiseProduct(z) + seg.nav.bias_accel;

    out->rows = 3;
    out->n_blocks = 0;
    out->r = pred - res.sample->accel;
    out->weight = res.weight;
    out->cost = 0.5 * res.weight * out->r.squaredNorm();
    if (!with_jacobians) return true;

    const Mat3 Gm = ii.accel_map();
    const Mat3 GmRt = Gm * Rt;
    const Mat3 Gskew = Gm * skew(f);
    for (int k = 0; k < 4; ++k) {
        out->add(lay.q_slot(res.seg, e.idx + k), 3, Gskew * e.dq[k]);
        out->add(lay.p_slot(res.seg, e.idx + k), 3, e.wa[k] * GmRt);
    }
    Mat3 Jg = Mat3::Zero();
    Jg.leftCols<2>() = -GmRt * tangent_basis(seg.nav.gravity);
    out->add(lay.gravity_slot(res.seg), 2, Jg);
    out->add(lay.bias_accel_slot(res.seg), 3, Mat3::Identity());
    out->add(lay.scale_accel_slot(), 3, Mat3(z.asDiagonal()));
    Mat3 Jm = Mat3::Zero();
    Jm(0, 0) = ii.scale_accel(0) * f(1);
    Jm(0, 1) = ii.scale_accel(0) * f(2);
    Jm(1, 2) = ii.scale_accel(1) * f(2);
    out->add(lay.misalign_accel_slot(), 3, Jm);
    return true;
}

bool eval_plane(const EvalContext& ctx, const PlaneResidual& res, double huber_delta,
                bool with_jacobians, ResidualBlocks* out) {
    const CalibState& st = ctx.state();
    const StateLayout& lay = ctx.layout();
    const SegmentState& seg = st.segments[res.seg];
    const unsigned flags = TrajectorySpline::kPose | TrajectorySpline::kDerivatives |
                           (with_jacobians ? TrajectorySpline::kJacobians : 0u);
    SplineEval e;
    try {
        e = seg.traj.eval(res.tau + seg.time_offset, flags);
    } catch (const std::domain_error&) {
        return false;
    }
    const SplineEval& a = ctx.anchor(res.seg);

    const Mat3 Re = st.extrinsics.q_imu_lidar.toRotationMatrix();
    const Vec3& pe = st.extrinsics.p_imu_lidar;
    const Mat3 R0t = a.q.toRotationMatrix().transpose();
    const Mat3 Rk = e.q.toRotationMatrix();
    const Mat3 dR = R0t * Rk;            // anchor-relative IMU rotation
    const Vec3 dp = R0t * (e.p - a.p);   // anchor-relative IMU translation

    Eigen::Matrix<double, 3, 6> Jbeam;
    Vec3 dp_drho;
    Vec3 pl;
    if (res.cartesian) {
        pl = res.point_cart;
        Jbeam.setZero();
        dp_drho = pl.normalized();
    } else {
        pl = lidar_point_from_raw(st.beams[res.beam], res.range, res.azimuth,
                                  with_jacobians ? &Jbeam : nullptr, &dp_drho);
    }

    const Vec3 x = Re * pl + pe;                    // point in IMU frame at query time
    const Vec3 y = dR * x + dp - pe;                // in the anchor IMU frame
    const Vec3 pm = Re.transpose() * y;             // in the map (anchor LiDAR) frame
    const double r = res.normal.dot(pm) + res.d;

    const double ar = std::abs(r);
    const double huber = (ar <= huber_delta) ? 1.0 : huber_delta / ar;
    out->rows = 1;
    out->n_blocks = 0;
    out->r = Vec3(r, 0, 0);
    out->weight = res.weight * huber;
    const double rho = (ar <= huber_delta) ? r * r : huber_delta * (2 * ar - huber_delta);
    out->cost = 0.5 * res.weight * rho;
    if (!with_jacobians) return true;

    const Eigen::RowVector3d nT = res.normal.transpose();
    const Eigen::RowVector3d nRe = nT * Re.transpose();   // n^T Re^T
    const Eigen::RowVector3d nReDr = nRe * dR;            // n^T Re^T dR

    Mat3 jrow = Mat3::Zero();
    // Query-time rotation knots through the right perturbation of q(tau+tc).
    const Eigen::RowVector3d dq_query = -nReDr * skew(x);
    // Anchor rotation knots.
    const Eigen::RowVector3d dq_anchor = nRe * skew(dR * x + dp);
    for (int k = 0; k < 4; ++k) {
        jrow.row(0) = dq_query * e.dq[k];
        out->add(lay.q_slot(res.seg, e.idx + k), 3, jrow);
        jrow.row(0) = e.wp[k] * (nRe * R0t);
        out->add(lay.p_slot(res.seg, e.idx + k), 3, jrow);
    }
    for (int k = 0; k < 4; ++k) {
        jrow.row(0) = dq_anchor * a.dq[k];
        out->add(lay.q_slot(res.seg, a.idx + k), 3, jrow);
        jrow.row(0) = -a.wp[k] * (nRe * R0t);
        out->add(lay.p_slot(res.seg, a.idx + k), 3, jrow);
    }
    // Extrinsic rotation and translation.
    jrow.row(0) = nT * skew(pm) - nReDr * Re * skew(pl);
    out->add(lay.ext_rot_slot(), 3, jrow);
    jrow.row(0) = nRe * (dR - Mat3::Identity());
    out->add(lay.ext_trans_slot(), 3, jrow);
    // Beam intrinsics (raw mode only).
    if (!res.cartesian) {
        const Mat3 Rml = Re.transpose() * dR * Re;  // map-from-lidar rotation
        Eigen::Matrix<double, 1, 6> jb = nT * Rml * Jbeam;
        jrow.setZero();
        jrow.row(0) = jb.head<3>();
        out->add(lay.beam_slot(res.beam), 3, jrow);
        jrow.row(0) = jb.tail<3>();
        out->add(lay.beam_slot(res.beam) + 3, 3, jrow);
    }
    // Clock offset: both the query pose and the anchor pose slide with t_c.
    const Vec3 dpm_dtc = Re.transpose() * (dR * (skew(e.omega) * x) -
                                           skew(a.omega) * (dR * x + dp) +
                                           R0t * (e.vel - a.vel));
    jrow.setZero();
    jrow(0, 0) = res.normal.dot(dpm_dtc);
    out->add(lay.tc_slot(res.seg), 1, jrow);
    return true;
}

void accumulate(const ResidualBlocks& rb, MatX& A, VecX& b) {
    const int rows = rb.rows;
    for (int i = 0; i < rb.n_blocks; ++i) {
        const auto Ji = rb.J[i].topLeftCorner(rows, rb.width[i]);
        b.segment(rb.slot[i], rb.width[i]).noalias() -=
            rb.weight * Ji.transpose() * rb.r.head(rows);
        for (int j = 0; j < rb.n_blocks; ++j) {
            const auto Jj = rb.J[j].topLeftCorner(rows, rb.width[j]);
            A.block(rb.slot[i], rb.slot[j], rb.width[i], rb.width[j]).noalias() +=
                rb.weight * Ji.transpose() * Jj;
        }
    }
}

}  // namespace ctcalib
