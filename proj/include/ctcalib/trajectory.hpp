#pragma once

#include <vector>

#include "ctcalib/geometry.hpp"

namespace ctcalib {

// Cumulative-basis weights of a uniform cubic B-spline segment at normalized
// position u in [0,1]. lambda[j-1] multiplies the j-th knot difference,
// j = 1..3; time derivatives already include the 1/dt factors.
struct SplineBasis {
    Vec3 lambda;
    Vec3 dlambda;
    Vec3 ddlambda;

    static SplineBasis at(double u, double dt);
};

// Everything a residual needs from one trajectory query. Knot k in [0,3]
// refers to control point idx + k. Orientation Jacobians are with respect to
// right-multiplicative perturbations knot_q <- knot_q * so3_exp(eps).
struct SplineEval {
    int idx = 0;
    double u = 0;
    Quat q = Quat::Identity();
    Vec3 p = Vec3::Zero();
    Vec3 vel = Vec3::Zero();
    Vec3 acc = Vec3::Zero();
    Vec3 omega = Vec3::Zero();
    double wp[4] = {0, 0, 0, 0};  // d p / d knot_p
    double wv[4] = {0, 0, 0, 0};  // d vel / d knot_p
    double wa[4] = {0, 0, 0, 0};  // d acc / d knot_p
    Mat3 dq[4];                   // d (right perturbation of q) / d eps_k
    Mat3 dw[4];                   // d omega / d eps_k
};

// Split continuous-time trajectory: cubic B-spline control points for
// translation and unit-quaternion control points blended through the
// cumulative exp/log form for rotation, on one shared uniform knot grid.
class TrajectorySpline {
  public:
    enum EvalFlags : unsigned {
        kPose = 1u,        // q, p
        kDerivatives = 2u, // vel, acc, omega
        kJacobians = 4u,   // dq, dw and the weight rows
    };

    TrajectorySpline(double t0, double dt, int n_knots);

    // Smallest grid whose valid domain contains [t_begin, t_end].
    static TrajectorySpline covering(double t_begin, double t_end, double dt);

    double t0() const { return t0_; }
    double dt() const { return dt_; }
    int num_knots() const { return static_cast<int>(p_.size()); }
    double t_min() const { return t0_; }
    double t_max() const { return t0_ + (num_knots() - 3) * dt_; }

    const Vec3& knot_p(int i) const { return p_[i]; }
    Vec3& knot_p(int i) { return p_[i]; }
    const Quat& knot_q(int i) const { return q_[i]; }
    Quat& knot_q(int i) { return q_[i]; }

    // Segment index and normalized position; throws std::domain_error with the
    // valid interval for queries outside [t_min, t_max].
    std::pair<int, double> locate(double t) const;

    SplineEval eval(double t, unsigned flags) const;

    Vec3 position(double t) const;
    Vec3 velocity(double t) const;
    Vec3 acceleration(double t) const;
    Quat orientation(double t) const;
    Vec3 angular_velocity_body(double t) const;
    Pose pose(double t) const;

    // Flips quaternion signs so consecutive control points share a hemisphere;
    // called after construction and after every state update.
    void align_hemispheres();

  private:
    double t0_, dt_;
    std::vector<Vec3> p_;
    std::vector<Quat> q_;
};

// Dense least-squares fit of translation control points to samples
// (optionally ridge-regularized toward zero). Samples must lie inside the
// spline domain. Returns the per-knot touched flag; untouched knots are left
// unchanged by the solve.
std::vector<bool> fit_position_knots(TrajectorySpline& spline,
                                     const std::vector<double>& times,
                                     const std::vector<Vec3>& positions,
                                     double ridge = 0.0);

// Small Gauss-Newton fit of orientation control points to quaternion samples.
void fit_orientation_knots(TrajectorySpline& spline,
                           const std::vector<double>& times,
                           const std::vector<Quat>& quats,
                           int iterations = 10);

}  // namespace ctcalib
