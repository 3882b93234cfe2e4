#include "ctcalib/initializer.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ctcalib/surfel_map.hpp"

namespace ctcalib {

namespace {

// Gaussian draw with norm clamped to 2.5 sigma, keeping perturbations bounded.
Vec3 bounded_gauss3(std::mt19937_64& rng, double sigma) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vec3 v(g(rng), g(rng), g(rng));
    v *= sigma;
    const double cap = 2.5 * sigma * std::sqrt(3.0);
    const double n = v.norm();
    if (n > cap && n > 0) v *= cap / n;
    return v;
}

std::vector<Vec3> scan_local_points(const LidarScan& scan,
                                    const std::vector<LidarBeamIntrinsics>& beams, int stride) {
    std::vector<Vec3> pts;
    BeamStride gate(stride);
    const size_t n = scan.cartesian ? scan.xyz.size() : scan.raw.size();
    pts.reserve(n / std::max(1, stride) + 1);
    for (size_t i = 0; i < n; ++i) {
        Vec3 p;
        if (scan.cartesian) {
            if (!gate.keep(0)) continue;
            p = scan.xyz[i];
        } else {
            const RawLidarPoint& rp = scan.raw[i];
            if (rp.beam < 0 || rp.beam >= static_cast<int>(beams.size()))
                throw std::invalid_argument("plane_icp_odometry: beam index outside model");
            if (!gate.keep(rp.beam)) continue;
            p = lidar_point_from_raw(beams[rp.beam], rp.range, rp.azimuth);
        }
        if (p.norm() < 0.05) continue;
        pts.push_back(p);
    }
    return pts;
}

}  // namespace

std::vector<OdometryPose> perturbed_odometry(const std::vector<double>& stamps,
                                             const std::vector<Pose>& world_lidar_poses,
                                             double sigma_rot, double sigma_trans,
                                             unsigned seed) {
    if (stamps.size() != world_lidar_poses.size())
        throw std::invalid_argument("perturbed_odometry: stamp/pose count mismatch");
    std::vector<OdometryPose> out;
    if (stamps.empty()) return out;
    std::mt19937_64 rng(seed);
    const Pose anchor_inv = world_lidar_poses.front().inverse();
    out.reserve(stamps.size());
    for (size_t k = 0; k < stamps.size(); ++k) {
        OdometryPose op;
        op.tau = stamps[k];
        op.T = anchor_inv * world_lidar_poses[k];
        if (k > 0) {
            op.T = op.T * Pose(so3_exp(bounded_gauss3(rng, sigma_rot)),
                               bounded_gauss3(rng, sigma_trans));
        }
        out.push_back(op);
    }
    return out;
}

std::vector<OdometryPose> plane_icp_odometry(const std::vector<LidarScan>& scans,
                                             const IcpOdometryOptions& opts) {
    std::vector<OdometryPose> out;
    if (scans.empty()) return out;

    std::vector<Vec3> map_points = scan_local_points(scans.front(), opts.beams, opts.point_stride);
    SurfelMap map(opts.map_cell, opts.map_planarity, opts.map_min_points, opts.gate);
    map.build(map_points);

    out.push_back({scans.front().stamp, Pose(), false});
    Pose last_key;

    for (size_t k = 1; k < scans.size(); ++k) {
        const std::vector<Vec3> local =
            scan_local_points(scans[k], opts.beams, opts.point_stride);
        // Constant-velocity warm start.
        Pose T = out.back().T;
        if (k >= 2) T = T * (out[k - 2].T.inverse() * out[k - 1].T);

        int n_assoc = 0;
        double rms = 0;
        for (int it = 0; it < opts.max_iterations; ++it) {
            Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
            Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
            n_assoc = 0;
            double sq = 0;
            for (const Vec3& p : local) {
                const Vec3 pm = T.act(p);
                const int sid = map.associate(pm);
                if (sid < 0) continue;
                const Surfel& s = map.surfels()[sid];
                const double r = s.distance(pm);
                const double w =
                    std::abs(r) <= opts.huber_delta ? 1.0 : opts.huber_delta / std::abs(r);
                Eigen::Matrix<double, 6, 1> J;
                J.head<3>() = pm.cross(s.normal);  // left rotation perturbation
                J.tail<3>() = s.normal;
                H += w * J * J.transpose();
                g -= w * J * r;
                sq += r * r;
                ++n_assoc;
            }
            if (n_assoc < 10) break;
            rms = std::sqrt(sq / n_assoc);
            H.diagonal().array() += 1e-9;
            Eigen::Matrix<double, 6, 1> dx = H.ldlt().solve(g);
            T.q = (so3_exp(dx.head<3>()) * T.q).normalized();
            T.p += dx.tail<3>();
            if (dx.norm() < 1e-10) break;
        }
        // Final-fit residual for the divergence check.
        {
            double sq = 0;
            int n = 0;
            for (const Vec3& p : local) {
                const int sid = map.associate(T.act(p));
                if (sid < 0) continue;
                const double r = map.surfels()[sid].distance(T.act(p));
                sq += r * r;
                ++n;
            }
            rms = n > 0 ? std::sqrt(sq / n) : opts.divergence_rms + 1;
            n_assoc = n;
        }
        const bool flagged = n_assoc < 10 || rms > opts.divergence_rms;
        out.push_back({scans[k].stamp, T, flagged});

        if (flagged) continue;
        const Pose delta = last_key.inverse() * T;
        if (delta.p.norm() > opts.keyframe_trans ||
            so3_log(delta.q).norm() > opts.keyframe_rot) {
            map_points.reserve(map_points.size() + local.size());
            for (const Vec3& p : local) map_points.push_back(T.act(p));
            map.build(map_points);
            last_key = T;
        }
    }
    return out;
}

std::vector<LidarScan> derotate_scans(const std::vector<LidarScan>& scans,
                                      const std::vector<LidarBeamIntrinsics>& beams,
                                      const TrajectorySpline& rot_spline,
                                      const Quat& q_imu_lidar) {
    const double lo = rot_spline.t_min();
    const double hi = rot_spline.t_max() - 1e-9;
    auto lidar_q = [&](double t) {
        return rot_spline.orientation(std::min(std::max(t, lo), hi)) * q_imu_lidar;
    };
    std::vector<LidarScan> out;
    out.reserve(scans.size());
    for (const LidarScan& scan : scans) {
        LidarScan c;
        c.stamp = scan.stamp;
        c.cartesian = true;
        const Quat q0 = lidar_q(scan.stamp);
        const size_t n = scan.cartesian ? scan.xyz.size() : scan.raw.size();
        c.xyz.reserve(n);
        c.xyz_t.reserve(n);
        for (size_t i = 0; i < n; ++i) {
            double t;
            Vec3 p;
            if (scan.cartesian) {
                t = scan.xyz_t[i];
                p = scan.xyz[i];
            } else {
                const RawLidarPoint& rp = scan.raw[i];
                t = rp.t;
                p = lidar_point_from_raw(beams[rp.beam], rp.range, rp.azimuth);
            }
            c.xyz.push_back((q0.conjugate() * lidar_q(t)) * p);
            c.xyz_t.push_back(t);
        }
        out.push_back(std::move(c));
    }
    return out;
}

void init_rotation_spline(TrajectorySpline& spline, const std::vector<ImuSample>& imu,
                          int iterations) {
    std::vector<const ImuSample*> inside;
    for (const ImuSample& m : imu) {
        if (m.t >= spline.t_min() && m.t < spline.t_max()) inside.push_back(&m);
    }
    const int K = spline.num_knots();
    if (static_cast<int>(inside.size()) < K)
        throw std::invalid_argument("init_rotation_spline: fewer gyro samples than control points");

    for (int i = 0; i < K; ++i) spline.knot_q(i) = Quat::Identity();

    const int dim = 3 * (K - 1);  // first control point is the gauge
    MatX H(dim, dim);
    VecX g(dim);
    for (int it = 0; it < iterations; ++it) {
        H.setZero();
        g.setZero();
        for (const ImuSample* m : inside) {
            SplineEval e = spline.eval(m->t, TrajectorySpline::kDerivatives |
                                                 TrajectorySpline::kJacobians);
            const Vec3 r = e.omega - m->gyro;
            for (int a = 0; a < 4; ++a) {
                const int ka = e.idx + a;
                if (ka == 0) continue;
                const int ca = 3 * (ka - 1);
                g.segment<3>(ca) -= e.dw[a].transpose() * r;
                for (int b = a; b < 4; ++b) {
                    const int kb = e.idx + b;
                    if (kb == 0) continue;
                    const int cb = 3 * (kb - 1);
                    const Mat3 blk = e.dw[a].transpose() * e.dw[b];
                    H.block<3, 3>(ca, cb) += blk;
                    if (b != a) H.block<3, 3>(cb, ca) += blk.transpose();
                }
            }
        }
        H.diagonal().array() += 1e-10 * (1.0 + H.diagonal().mean());
        VecX dx = H.ldlt().solve(g);
        for (int kq = 1; kq < K; ++kq) {
            spline.knot_q(kq) = spline.knot_q(kq) * so3_exp(dx.segment<3>(3 * (kq - 1)));
        }
        spline.align_hemispheres();
        if (dx.lpNorm<Eigen::Infinity>() < 1e-10) break;
    }

    // Rates only fix the orientation up to a constant; re-anchor so the
    // trajectory value at the domain start is the identity.
    const Quat c = spline.orientation(spline.t_min()).conjugate();
    for (int i = 0; i < K; ++i) spline.knot_q(i) = (c * spline.knot_q(i)).normalized();
    spline.align_hemispheres();
}

void refine_rotation_spline(TrajectorySpline& spline, const std::vector<ImuSample>& imu,
                            const std::vector<OdometryPose>& odom, const Quat& q_imu_lidar,
                            Vec3* bias_gyro, double gyro_sigma, double anchor_sigma,
                            int iterations) {
    struct Anchor {
        double tau;
        Quat rel;  // anchored IMU rotation odometry implies, up to q(tau0)
    };
    std::vector<Anchor> anchors;
    double tau0 = 0;
    for (const OdometryPose& op : odom) {
        if (op.flagged) continue;
        if (op.tau < spline.t_min() || op.tau >= spline.t_max()) continue;
        if (anchors.empty()) tau0 = op.tau;
        anchors.push_back({op.tau, (q_imu_lidar * op.T.q * q_imu_lidar.conjugate()).normalized()});
    }
    if (anchors.size() < 2) return;

    const double wg = 1.0 / (gyro_sigma * gyro_sigma);
    const double wq = 1.0 / (anchor_sigma * anchor_sigma);
    const int K = spline.num_knots();
    const int dim = 3 * (K - 1) + 3;  // knots past the gauge, then the bias
    const int bcol = 3 * (K - 1);
    MatX H(dim, dim);
    VecX g(dim);
    Vec3 bias = bias_gyro ? *bias_gyro : Vec3::Zero();

    for (int it = 0; it < iterations; ++it) {
        H.setZero();
        g.setZero();
        // The odometry reference pose is lagged one iteration; it is pinned by
        // the frozen first control point, so it barely moves.
        const Quat q0 = spline.orientation(tau0);
        for (const ImuSample& m : imu) {
            if (m.t < spline.t_min() || m.t >= spline.t_max()) continue;
            SplineEval e = spline.eval(m.t, TrajectorySpline::kDerivatives |
                                                TrajectorySpline::kJacobians);
            const Vec3 r = e.omega + bias - m.gyro;
            g.segment<3>(bcol) -= wg * r;
            H.block<3, 3>(bcol, bcol) += wg * Mat3::Identity();
            for (int a = 0; a < 4; ++a) {
                const int ka = e.idx + a;
                if (ka == 0) continue;
                const int ca = 3 * (ka - 1);
                g.segment<3>(ca) -= wg * e.dw[a].transpose() * r;
                const Mat3 cross = wg * e.dw[a].transpose();
                H.block<3, 3>(ca, bcol) += cross;
                H.block<3, 3>(bcol, ca) += cross.transpose();
                for (int b = a; b < 4; ++b) {
                    const int kb = e.idx + b;
                    if (kb == 0) continue;
                    const int cb = 3 * (kb - 1);
                    const Mat3 blk = wg * e.dw[a].transpose() * e.dw[b];
                    H.block<3, 3>(ca, cb) += blk;
                    if (b != a) H.block<3, 3>(cb, ca) += blk.transpose();
                }
            }
        }
        for (const Anchor& an : anchors) {
            SplineEval e = spline.eval(an.tau, TrajectorySpline::kPose |
                                                   TrajectorySpline::kJacobians);
            const Vec3 r = so3_log((q0 * an.rel).conjugate() * e.q);
            for (int a = 0; a < 4; ++a) {
                const int ka = e.idx + a;
                if (ka == 0) continue;
                const int ca = 3 * (ka - 1);
                g.segment<3>(ca) -= wq * e.dq[a].transpose() * r;
                for (int b = a; b < 4; ++b) {
                    const int kb = e.idx + b;
                    if (kb == 0) continue;
                    const int cb = 3 * (kb - 1);
                    const Mat3 blk = wq * e.dq[a].transpose() * e.dq[b];
                    H.block<3, 3>(ca, cb) += blk;
                    if (b != a) H.block<3, 3>(cb, ca) += blk.transpose();
                }
            }
        }
        H.diagonal().array() += 1e-10 * (1.0 + H.diagonal().mean());
        VecX dx = H.ldlt().solve(g);
        for (int kq = 1; kq < K; ++kq)
            spline.knot_q(kq) = spline.knot_q(kq) * so3_exp(dx.segment<3>(3 * (kq - 1)));
        bias += dx.segment<3>(bcol);
        spline.align_hemispheres();
        if (dx.lpNorm<Eigen::Infinity>() < 1e-10) break;
    }
    if (bias_gyro) *bias_gyro = bias;
}

std::vector<RotationPair> make_rotation_pairs(const TrajectorySpline& rot_spline,
                                              const std::vector<OdometryPose>& odom) {
    std::vector<RotationPair> pairs;
    for (size_t k = 0; k + 1 < odom.size(); ++k) {
        if (odom[k].flagged || odom[k + 1].flagged) continue;
        if (odom[k].tau < rot_spline.t_min() || odom[k + 1].tau >= rot_spline.t_max()) continue;
        RotationPair pr;
        pr.q_imu = rot_spline.orientation(odom[k].tau).conjugate() *
                   rot_spline.orientation(odom[k + 1].tau);
        pr.q_lidar = odom[k].T.q.conjugate() * odom[k + 1].T.q;
        pairs.push_back(pr);
    }
    return pairs;
}

Quat init_extrinsic_rotation(const std::vector<RotationPair>& pairs, double min_angle) {
    std::vector<const RotationPair*> kept;
    for (const RotationPair& pr : pairs) {
        if (so3_log(pr.q_imu).norm() >= min_angle) kept.push_back(&pr);
    }
    if (kept.size() < 2)
        throw std::runtime_error(
            "init_extrinsic_rotation: fewer than two informative rotation pairs");

    MatX A(4 * kept.size(), 4);
    for (size_t k = 0; k < kept.size(); ++k) {
        A.block<4, 4>(4 * k, 0) =
            quat_left_matrix(kept[k]->q_imu) - quat_right_matrix(kept[k]->q_lidar);
    }
    Eigen::JacobiSVD<MatX> svd(A, Eigen::ComputeFullV);
    const VecX& s = svd.singularValues();  // descending
    if (s(2) < 1e-3 * s(0))
        throw std::runtime_error(
            "init_extrinsic_rotation: rotation axes are degenerate, extrinsic rotation "
            "unobservable");
    return canonical(quat_from_vec4(svd.matrixV().col(3)).normalized());
}

void init_translation_spline(TrajectorySpline& spline, const std::vector<OdometryPose>& odom,
                             const Quat& q_imu_lidar, const Vec3& p_imu_lidar, double ridge) {
    std::vector<double> times;
    std::vector<Vec3> targets;
    for (const OdometryPose& op : odom) {
        if (op.flagged) continue;
        if (op.tau < spline.t_min() || op.tau >= spline.t_max()) continue;
        times.push_back(op.tau);
        targets.push_back(q_imu_lidar * op.T.p + p_imu_lidar -
                          spline.orientation(op.tau) * p_imu_lidar);
    }
    std::vector<bool> touched = fit_position_knots(spline, times, targets, ridge);
    // Pad knots the data never reached with their nearest fitted neighbour.
    const int K = spline.num_knots();
    for (int i = 0; i < K; ++i) {
        if (touched[i]) continue;
        for (int off = 1; off < K; ++off) {
            if (i - off >= 0 && touched[i - off]) {
                spline.knot_p(i) = spline.knot_p(i - off);
                break;
            }
            if (i + off < K && touched[i + off]) {
                spline.knot_p(i) = spline.knot_p(i + off);
                break;
            }
        }
    }
}

void init_translation_spline(TrajectorySpline& spline, const std::vector<OdometryPose>& odom,
                             const Quat& q_imu_lidar, const Vec3& p_imu_lidar,
                             const std::vector<ImuSample>& imu, ImuNavState* nav,
                             double odom_sigma, double accel_sigma) {
    const int n = spline.num_knots();
    const int N = 3 * n + 6;  // knots, gravity, accel bias
    MatX A = MatX::Zero(N, N);
    VecX rhs = VecX::Zero(N);
    const double wo = 1.0 / (odom_sigma * odom_sigma);
    const double wa = 1.0 / (accel_sigma * accel_sigma);

    for (const OdometryPose& op : odom) {
        if (op.flagged) continue;
        if (op.tau < spline.t_min() || op.tau >= spline.t_max()) continue;
        const SplineEval e =
            spline.eval(op.tau, TrajectorySpline::kPose | TrajectorySpline::kJacobians);
        const Vec3 target = q_imu_lidar * op.T.p + p_imu_lidar - e.q * p_imu_lidar;
        for (int a = 0; a < 4; ++a) {
            const int ra = 3 * (e.idx + a);
            for (int b = a; b < 4; ++b)
                A.block<3, 3>(ra, 3 * (e.idx + b)).diagonal().array() +=
                    wo * e.wp[a] * e.wp[b];
            rhs.segment<3>(ra) += wo * e.wp[a] * target;
        }
    }

    // Specific force: R(t)^T (p''(t) - g) + b_a = a_meas, linear in all three
    // unknown groups once the orientation spline is fixed.
    const int gcol = 3 * n, bcol = 3 * n + 3;
    for (const ImuSample& m : imu) {
        if (m.t < spline.t_min() || m.t >= spline.t_max()) continue;
        const SplineEval e =
            spline.eval(m.t, TrajectorySpline::kPose | TrajectorySpline::kJacobians);
        const Mat3 Rt = e.q.toRotationMatrix().transpose();
        for (int a = 0; a < 4; ++a) {
            const int ra = 3 * (e.idx + a);
            for (int b = a; b < 4; ++b)
                A.block<3, 3>(ra, 3 * (e.idx + b)).diagonal().array() +=
                    wa * e.wa[a] * e.wa[b];
            A.block<3, 3>(ra, gcol) += wa * e.wa[a] * (-Mat3::Identity());
            A.block<3, 3>(ra, bcol) += wa * e.wa[a] * Rt.transpose();
            rhs.segment<3>(ra) += wa * e.wa[a] * (Rt.transpose() * m.accel);
        }
        A.block<3, 3>(gcol, gcol) += wa * Mat3::Identity();
        A.block<3, 3>(gcol, bcol) += wa * (-Rt.transpose());
        rhs.segment<3>(gcol) += wa * (-(Rt.transpose() * m.accel));
        A.block<3, 3>(bcol, bcol) += wa * Mat3::Identity();
        rhs.segment<3>(bcol) += wa * m.accel;
    }

    for (int i = 0; i < N; ++i)
        for (int j = 0; j < i; ++j) A(i, j) = A(j, i);
    A.diagonal().array() += 1e-9;

    const VecX x = A.ldlt().solve(rhs);
    for (int i = 0; i < n; ++i) spline.knot_p(i) = x.segment<3>(3 * i);
    if (nav) {
        Vec3 g = x.segment<3>(gcol);
        if (g.norm() < 1e-6) g = Vec3(0, 0, -1);
        nav->gravity = g * (kGravityNorm / g.norm());
        nav->bias_accel = x.segment<3>(bcol);
    }
}

}  // namespace ctcalib
