#include "ctcalib/trajectory.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ctcalib {

// Cumulative blending matrix for the uniform cubic case: column j holds the
// polynomial coefficients (rising powers of u) of lambda_j.
//   lambda_1 = (5 + 3u - 3u^2 +  u^3) / 6
//   lambda_2 = (1 + 3u + 3u^2 - 2u^3) / 6
//   lambda_3 = u^3 / 6
SplineBasis SplineBasis::at(double u, double dt) {
    const double u2 = u * u, u3 = u2 * u;
    SplineBasis b;
    b.lambda = Vec3(5 + 3 * u - 3 * u2 + u3, 1 + 3 * u + 3 * u2 - 2 * u3, u3) / 6.0;
    b.dlambda = Vec3(3 - 6 * u + 3 * u2, 3 + 6 * u - 6 * u2, 3 * u2) / (6.0 * dt);
    b.ddlambda = Vec3(-6 + 6 * u, 6 - 12 * u, 6 * u) / (6.0 * dt * dt);
    return b;
}

TrajectorySpline::TrajectorySpline(double t0, double dt, int n_knots) : t0_(t0), dt_(dt) {
    if (dt <= 0) throw std::invalid_argument("spline knot spacing must be positive");
    if (n_knots < 4) throw std::invalid_argument("cubic spline needs at least 4 control points");
    p_.assign(n_knots, Vec3::Zero());
    q_.assign(n_knots, Quat::Identity());
}

TrajectorySpline TrajectorySpline::covering(double t_begin, double t_end, double dt) {
    if (t_end <= t_begin) throw std::invalid_argument("empty time span for spline grid");
    const int segments = static_cast<int>(std::ceil((t_end - t_begin) / dt + 1e-9)) + 1;
    return TrajectorySpline(t_begin, dt, segments + 3);
}

std::pair<int, double> TrajectorySpline::locate(double t) const {
    const double x = (t - t0_) / dt_;
    int i = static_cast<int>(std::floor(x));
    double u = x - i;
    const int last = num_knots() - 4;
    if (i == last + 1 && u < 1e-9) {  // right endpoint belongs to the last segment
        i = last;
        u = 1.0;
    }
    if (i < 0 || i > last) {
        std::ostringstream os;
        os << "trajectory query t=" << t << " outside valid domain [" << t_min() << ", "
           << t_max() << ")";
        throw std::domain_error(os.str());
    }
    return {i, u};
}

SplineEval TrajectorySpline::eval(double t, unsigned flags) const {
    auto [i, u] = locate(t);
    const SplineBasis b = SplineBasis::at(u, dt_);
    SplineEval out;
    out.idx = i;
    out.u = u;

    const Vec3* P = p_.data() + i;
    const Quat* Q = q_.data() + i;

    if (flags & (kPose | kJacobians)) {
        out.p = P[0] + b.lambda(0) * (P[1] - P[0]) + b.lambda(1) * (P[2] - P[1]) +
                b.lambda(2) * (P[3] - P[2]);
    }
    if (flags & (kDerivatives | kJacobians)) {
        out.vel = b.dlambda(0) * (P[1] - P[0]) + b.dlambda(1) * (P[2] - P[1]) +
                  b.dlambda(2) * (P[3] - P[2]);
        out.acc = b.ddlambda(0) * (P[1] - P[0]) + b.ddlambda(1) * (P[2] - P[1]) +
                  b.ddlambda(2) * (P[3] - P[2]);
    }

    // Knot-difference form rearranged to per-knot weights.
    out.wp[0] = 1 - b.lambda(0);
    out.wp[1] = b.lambda(0) - b.lambda(1);
    out.wp[2] = b.lambda(1) - b.lambda(2);
    out.wp[3] = b.lambda(2);
    out.wv[0] = -b.dlambda(0);
    out.wv[1] = b.dlambda(0) - b.dlambda(1);
    out.wv[2] = b.dlambda(1) - b.dlambda(2);
    out.wv[3] = b.dlambda(2);
    out.wa[0] = -b.ddlambda(0);
    out.wa[1] = b.ddlambda(0) - b.ddlambda(1);
    out.wa[2] = b.ddlambda(1) - b.ddlambda(2);
    out.wa[3] = b.ddlambda(2);

    // Rotation: q(t) = q_i * prod_j exp(lambda_j * d_j), d_j the relative
    // rotation vector between consecutive control points.
    Vec3 d[3];
    Quat A[3];
    for (int j = 0; j < 3; ++j) {
        d[j] = so3_log(Q[j].conjugate() * Q[j + 1]);
        A[j] = so3_exp(b.lambda(j) * d[j]);
    }
    out.q = (Q[0] * A[0] * A[1] * A[2]).normalized();

    const bool need_omega = flags & (kDerivatives | kJacobians);
    Mat3 R1t, R2t;  // A[1]^T, A[2]^T
    Vec3 w[3];
    if (need_omega) {
        R1t = A[1].toRotationMatrix().transpose();
        R2t = A[2].toRotationMatrix().transpose();
        for (int j = 0; j < 3; ++j) w[j] = b.dlambda(j) * d[j];
        out.omega = R2t * (R1t * w[0] + w[1]) + w[2];
    }

    if (flags & kJacobians) {
        // C_j maps a right perturbation of A_j into a right perturbation of
        // the blended rotation: C1 = (A2 A3)^T, C2 = A3^T, C3 = I.
        const Mat3 C1 = R2t * R1t;
        const Mat3& C2 = R2t;
        Mat3 Pj[3], Jli[3], Jri[3];
        for (int j = 0; j < 3; ++j) {
            Pj[j] = b.lambda(j) * so3_right_jacobian(b.lambda(j) * d[j]);
            Jli[j] = so3_left_jacobian_inv(d[j]);
            Jri[j] = so3_right_jacobian_inv(d[j]);
        }
        const Mat3 C0 = C1 * A[0].toRotationMatrix().transpose();
        const Mat3 G1 = C1 * Pj[0];
        const Mat3 G2 = C2 * Pj[1];
        const Mat3& G3 = Pj[2];
        out.dq[0] = C0 - G1 * Jli[0];
        out.dq[1] = G1 * Jri[0] - G2 * Jli[1];
        out.dq[2] = G2 * Jri[1] - G3 * Jli[2];
        out.dq[3] = G3 * Jri[2];

        // Angular velocity sensitivity: each d_j enters through its own rate
        // term and through the frame rotations A_j applied to earlier terms.
        const Mat3 D1 = b.dlambda(0) * C1;
        const Mat3 D2 = b.dlambda(1) * C2 + R2t * skew(R1t * w[0]) * Pj[1];
        const Mat3 D3 = b.dlambda(2) * Mat3::Identity() +
                        (skew(R2t * w[1]) + skew(C1 * w[0])) * Pj[2];
        out.dw[0] = -D1 * Jli[0];
        out.dw[1] = D1 * Jri[0] - D2 * Jli[1];
        out.dw[2] = D2 * Jri[1] - D3 * Jli[2];
        out.dw[3] = D3 * Jri[2];
    }
    return out;
}

Vec3 TrajectorySpline::position(double t) const { return eval(t, kPose).p; }
Vec3 TrajectorySpline::velocity(double t) const { return eval(t, kDerivatives).vel; }
Vec3 TrajectorySpline::acceleration(double t) const { return eval(t, kDerivatives).acc; }
Quat TrajectorySpline::orientation(double t) const { return eval(t, kPose).q; }
Vec3 TrajectorySpline::angular_velocity_body(double t) const {
    return eval(t, kDerivatives).omega;
}
Pose TrajectorySpline::pose(double t) const {
    SplineEval e = eval(t, kPose);
    return Pose(e.q, e.p);
}

void TrajectorySpline::align_hemispheres() {
    for (size_t i = 1; i < q_.size(); ++i) {
        q_[i] = hemisphere_aligned(q_[i], q_[i - 1]);
    }
}

std::vector<bool> fit_position_knots(TrajectorySpline& spline,
                                     const std::vector<double>& times,
                                     const std::vector<Vec3>& positions,
                                     double ridge) {
    if (times.size() != positions.size())
        throw std::invalid_argument("fit_position_knots: size mismatch");
    const int n = spline.num_knots();
    MatX A = MatX::Zero(n, n);
    MatX rhs = MatX::Zero(n, 3);
    std::vector<bool> touched(n, false);
    for (size_t k = 0; k < times.size(); ++k) {
        SplineEval e = spline.eval(times[k], TrajectorySpline::kJacobians);
        for (int a = 0; a < 4; ++a) {
            touched[e.idx + a] = true;
            for (int bcol = 0; bcol < 4; ++bcol) {
                A(e.idx + a, e.idx + bcol) += e.wp[a] * e.wp[bcol];
            }
            rhs.row(e.idx + a) += e.wp[a] * positions[k].transpose();
        }
    }
    A.diagonal().array() += ridge;
    MatX sol = A.ldlt().solve(rhs);
    for (int i = 0; i < n; ++i) {
        if (touched[i]) spline.knot_p(i) = sol.row(i).transpose();
    }
    return touched;
}

void fit_orientation_knots(TrajectorySpline& spline,
                           const std::vector<double>& times,
                           const std::vector<Quat>& quats,
                           int iterations) {
    if (times.size() != quats.size())
        throw std::invalid_argument("fit_orientation_knots: size mismatch");
    const int n = spline.num_knots();
    // Seed every knot with the nearest sample so the log-residuals start small.
    for (int i = 0; i < n; ++i) {
        const double tk = spline.t0() + i * spline.dt();
        size_t best = 0;
        for (size_t k = 1; k < times.size(); ++k) {
            if (std::abs(times[k] - tk) < std::abs(times[best] - tk)) best = k;
        }
        spline.knot_q(i) = quats[best];
    }
    spline.align_hemispheres();

    for (int it = 0; it < iterations; ++it) {
        MatX H = MatX::Zero(3 * n, 3 * n);
        VecX g = VecX::Zero(3 * n);
        double cost = 0;
        for (size_t k = 0; k < times.size(); ++k) {
            SplineEval e = spline.eval(times[k], TrajectorySpline::kJacobians);
            const Vec3 r = so3_log(e.q.conjugate() * quats[k]);
            cost += r.squaredNorm();
            const Mat3 Jr_inv = so3_left_jacobian_inv(r);
            Mat3 J[4];
            for (int a = 0; a < 4; ++a) J[a] = -Jr_inv * e.dq[a];
            for (int a = 0; a < 4; ++a) {
                const int ia = 3 * (e.idx + a);
                g.segment<3>(ia) -= J[a].transpose() * r;
                for (int bcol = 0; bcol < 4; ++bcol) {
                    H.block<3, 3>(ia, 3 * (e.idx + bcol)) += J[a].transpose() * J[bcol];
                }
            }
        }
        H.diagonal().array() += 1e-9;
        VecX dx = H.ldlt().solve(g);
        for (int i = 0; i < n; ++i) {
            spline.knot_q(i) = (spline.knot_q(i) * so3_exp(dx.segment<3>(3 * i))).normalized();
        }
        spline.align_hemispheres();
        if (dx.norm() < 1e-12) break;
        (void)cost;
    }
}

}  // namespace ctcalib
