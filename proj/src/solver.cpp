#include "ctcalib/solver.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace ctcalib {

void NormalSystem::resize(int n) {
    A = MatX::Zero(n, n);
    b = VecX::Zero(n);
}

namespace {

bool blocks_finite(const ResidualBlocks& rb) {
    if (!rb.r.allFinite() || !std::isfinite(rb.cost) || !std::isfinite(rb.weight)) return false;
    for (int k = 0; k < rb.n_blocks; ++k)
        if (!rb.J[k].allFinite()) return false;
    return true;
}

[[noreturn]] void bad_block(const char* kind, int index) {
    throw std::runtime_error(std::string("assemble_normal_system: non-finite ") + kind +
                             " residual at index " + std::to_string(index));
}

}  // namespace

NormalSystem assemble_normal_system(const EvalContext& ctx,
                                    const std::vector<GyroResidual>& gyro,
                                    const std::vector<AccelResidual>& accel,
                                    const std::vector<PlaneResidual>& plane,
                                    double huber_delta, bool with_jacobians) {
    NormalSystem sys;
    if (with_jacobians) sys.resize(ctx.layout().total);

    ResidualBlocks rb;
    for (size_t i = 0; i < gyro.size(); ++i) {
        if (!eval_gyro(ctx, gyro[i], with_jacobians, &rb)) {
            ++sys.n_dropped;
            continue;
        }
        if (with_jacobians && !blocks_finite(rb)) bad_block("gyro", static_cast<int>(i));
        sys.cost += rb.cost;
        ++sys.n_gyro;
        if (with_jacobians) accumulate(rb, sys.A, sys.b);
    }
    for (size_t i = 0; i < accel.size(); ++i) {
        if (!eval_accel(ctx, accel[i], with_jacobians, &rb)) {
            ++sys.n_dropped;
            continue;
        }
        if (with_jacobians && !blocks_finite(rb)) bad_block("accel", static_cast<int>(i));
        sys.cost += rb.cost;
        ++sys.n_accel;
        if (with_jacobians) accumulate(rb, sys.A, sys.b);
    }
    for (size_t i = 0; i < plane.size(); ++i) {
        if (!eval_plane(ctx, plane[i], huber_delta, with_jacobians, &rb)) {
            ++sys.n_dropped;
            continue;
        }
        if (with_jacobians && !blocks_finite(rb)) bad_block("plane", static_cast<int>(i));
        sys.cost += rb.cost;
        ++sys.n_plane;
        if (with_jacobians) accumulate(rb, sys.A, sys.b);
    }
    return sys;
}

std::vector<int> solvable_indices(const NormalSystem& sys, const ActiveMask& mask) {
    std::vector<int> idx;
    const int n = static_cast<int>(sys.A.rows());
    idx.reserve(n);
    for (int i = 0; i < n; ++i)
        if (mask[i] && sys.A(i, i) > 0) idx.push_back(i);
    return idx;
}

namespace {

void gather(const NormalSystem& sys, const std::vector<int>& idx, MatX* As, VecX* bs) {
    const int m = static_cast<int>(idx.size());
    As->resize(m, m);
    bs->resize(m);
    for (int i = 0; i < m; ++i) {
        (*bs)(i) = sys.b(idx[i]);
        for (int j = 0; j < m; ++j) (*As)(i, j) = sys.A(idx[i], idx[j]);
    }
}

}  // namespace

VecX solve_damped(const NormalSystem& sys, const std::vector<int>& idx, double mu) {
    VecX dx = VecX::Zero(sys.A.rows());
    if (idx.empty()) return dx;
    MatX As;
    VecX bs;
    gather(sys, idx, &As, &bs);
    As.diagonal().array() += mu;
    Eigen::LDLT<MatX> ldlt(As);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("solve_damped: factorization failed");
    const VecX xs = ldlt.solve(bs);
    for (size_t i = 0; i < idx.size(); ++i) dx(idx[i]) = xs(i);
    return dx;
}

TsvdSolution solve_tsvd(const NormalSystem& sys, const std::vector<int>& idx,
                        double abs_threshold, double rel_threshold) {
    TsvdSolution sol;
    sol.dx = VecX::Zero(sys.A.rows());
    const int m = static_cast<int>(idx.size());
    if (m == 0) return sol;
    MatX As;
    VecX bs;
    gather(sys, idx, &As, &bs);
    Eigen::SelfAdjointEigenSolver<MatX> eig(0.5 * (As + As.transpose()));
    if (eig.info() != Eigen::Success)
        throw std::runtime_error("solve_tsvd: eigendecomposition failed");
    const VecX& lam = eig.eigenvalues();  // ascending
    const MatX& V = eig.eigenvectors();
    const double sigma_max = lam(m - 1);
    sol.threshold = std::max(abs_threshold, rel_threshold * std::max(sigma_max, 0.0));

    sol.sigmas.resize(m);
    VecX xs = VecX::Zero(m);
    for (int k = m - 1; k >= 0; --k) {
        sol.sigmas(m - 1 - k) = lam(k);
        if (lam(k) > sol.threshold) {
            xs += V.col(k) * (V.col(k).dot(bs) / lam(k));
            ++sol.rank;
        } else {
            VecX u = VecX::Zero(sys.A.rows());
            for (int i = 0; i < m; ++i) u(idx[i]) = V(i, k);
            sol.dropped.push_back(std::move(u));
        }
    }
    for (int i = 0; i < m; ++i) sol.dx(idx[i]) = xs(i);
    return sol;
}

SegmentInfo segment_information(const NormalSystem& sys, const ActiveMask& mask,
                                const StateLayout& layout, InfoReduction mode) {
    SegmentInfo out;
    const int e0 = layout.ext_off;
    auto is_ext = [e0](int i) { return i >= e0 && i < e0 + 6; };

    if (mode == InfoReduction::kFullState) {
        std::vector<int> idx;
        int ext_pos[6];
        for (int i = 0; i < layout.total; ++i) {
            if (is_ext(i)) {
                ext_pos[i - e0] = static_cast<int>(idx.size());
                idx.push_back(i);
            } else if (mask[i] && sys.A(i, i) > 0) {
                idx.push_back(i);
            }
        }
        MatX As;
        VecX bs;
        gather(sys, idx, &As, &bs);
        Eigen::SelfAdjointEigenSolver<MatX> eig(0.5 * (As + As.transpose()));
        const int m = static_cast<int>(idx.size());
        out.sigmas = eig.eigenvalues().reverse().cwiseMax(0.0);
        out.sigma_min = out.sigmas(m - 1);
        for (int k = 0; k < 6; ++k) {
            out.u_min(k) = eig.eigenvectors()(ext_pos[k], 0);
            for (int j = 0; j < 6; ++j) out.info(k, j) = As(ext_pos[k], ext_pos[j]);
        }
        const double nrm = out.u_min.norm();
        if (nrm > 1e-12) out.u_min /= nrm;
        return out;
    }

    std::vector<int> others;
    for (int i = 0; i < layout.total; ++i)
        if (!is_ext(i) && mask[i] && sys.A(i, i) > 0) others.push_back(i);

    Mat6 E;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) E(i, j) = sys.A(e0 + i, e0 + j);

    const int m = static_cast<int>(others.size());
    Mat6 red = E;
    if (m > 0) {
        MatX B(m, m);
        Eigen::Matrix<double, 6, Eigen::Dynamic> C(6, m);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) B(i, j) = sys.A(others[i], others[j]);
            for (int k = 0; k < 6; ++k) C(k, i) = sys.A(e0 + k, others[i]);
        }
        Eigen::SelfAdjointEigenSolver<MatX> eig(0.5 * (B + B.transpose()));
        const VecX& lam = eig.eigenvalues();
        const double cutoff = 1e-12 * std::max(lam(m - 1), 1.0);
        double prior = 0;
        if (lam(0) <= cutoff) {
            out.prior_added = true;
            prior = 1e-8 * std::max(1.0, B.diagonal().mean());
        }
        VecX g(m);
        for (int i = 0; i < m; ++i) {
            const double l = lam(i) + prior;
            g(i) = (l > cutoff) ? 1.0 / l : 0.0;
        }
        const Eigen::Matrix<double, 6, Eigen::Dynamic> CV = C * eig.eigenvectors();
        red = E - CV * g.asDiagonal() * CV.transpose();
    }
    red = 0.5 * (red + red.transpose()).eval();
    out.info = red;

    Eigen::SelfAdjointEigenSolver<Mat6> es(red);
    out.sigmas = es.eigenvalues().reverse().cwiseMax(0.0);
    out.sigma_min = out.sigmas(5);
    out.u_min = es.eigenvectors().col(0);
    int imax = 0;
    out.u_min.cwiseAbs().maxCoeff(&imax);
    if (out.u_min(imax) < 0) out.u_min = -out.u_min;
    return out;
}

std::vector<int> select_segments(const std::vector<SegmentInfo>& infos,
                                 double sigma_threshold, int n_max) {
    std::vector<int> picked;
    for (size_t i = 0; i < infos.size(); ++i)
        if (infos[i].sigma_min > sigma_threshold) picked.push_back(static_cast<int>(i));
    std::sort(picked.begin(), picked.end(), [&infos](int a, int b) {
        if (infos[a].sigma_min != infos[b].sigma_min)
            return infos[a].sigma_min > infos[b].sigma_min;
        return a < b;
    });
    if (n_max >= 0 && static_cast<int>(picked.size()) > n_max) picked.resize(n_max);
    return picked;
}

std::vector<Vec3> project_map_points(const SegmentState& seg, const Extrinsics& ext,
                                     const std::vector<LidarBeamIntrinsics>& beams,
                                     const std::vector<LidarScan>& scans, int stride) {
    std::vector<Vec3> pts;
    if (scans.empty()) return pts;
    BeamStride gate(stride);
    const double tau0 = scans.front().stamp;
    const double tc = seg.time_offset;
    const double tmin = seg.traj.t_min();
    const double tmax = seg.traj.t_max();
    for (const LidarScan& scan : scans) {
        const size_t n = scan.cartesian ? scan.xyz.size() : scan.raw.size();
        for (size_t i = 0; i < n; ++i) {
            double tau;
            Vec3 p_l;
            if (scan.cartesian) {
                if (!gate.keep(0)) continue;
                tau = scan.xyz_t[i];
                p_l = scan.xyz[i];
            } else {
                const RawLidarPoint& rp = scan.raw[i];
                if (!gate.keep(rp.beam)) continue;
                tau = rp.t;
                p_l = lidar_point_from_raw(beams[rp.beam], rp.range, rp.azimuth);
            }
            if (tau + tc < tmin || tau + tc >= tmax) continue;
            pts.push_back(lidar_pose_at(seg.traj, ext, tc, tau, tau0).act(p_l));
        }
    }
    return pts;
}

namespace {

// Projects a segment's returns with the given beams, voxelizes them, and
// freezes one plane association per matched point. The weight propagates the
// range variance through the incidence angle, floored to keep grazing hits
// from dominating.
void build_segment_planes(const CalibState& state, int s, const SegmentData& data,
                          const std::vector<LidarBeamIntrinsics>& proj_beams,
                          const OptimizeOptions& opts, std::vector<Vec3>* map_points,
                          std::vector<PlaneResidual>* out) {
    const SegmentState& seg = state.segments[s];
    const std::vector<LidarScan>& scans = data.scans;
    if (scans.empty()) return;
    BeamStride gate(opts.point_stride);
    const double tau0 = scans.front().stamp;
    const double tc = seg.time_offset;
    const double tmin = seg.traj.t_min();
    const double tmax = seg.traj.t_max();

    struct Meta {
        int scan;
        int idx;
        double tau;
        Vec3 dir;  // beam direction in the map frame
    };
    std::vector<Vec3> pts;
    std::vector<Meta> metas;
    for (size_t si = 0; si < scans.size(); ++si) {
        const LidarScan& scan = scans[si];
        const size_t n = scan.cartesian ? scan.xyz.size() : scan.raw.size();
        for (size_t i = 0; i < n; ++i) {
            double tau;
            Vec3 p_l;
            if (scan.cartesian) {
                if (!gate.keep(0)) continue;
                tau = scan.xyz_t[i];
                p_l = scan.xyz[i];
            } else {
                const RawLidarPoint& rp = scan.raw[i];
                if (!gate.keep(rp.beam)) continue;
                tau = rp.t;
                p_l = lidar_point_from_raw(proj_beams[rp.beam], rp.range, rp.azimuth);
            }
            const double nrm = p_l.norm();
            if (nrm < 0.05) continue;
            if (tau + tc < tmin || tau + tc >= tmax) continue;
            const Pose T = lidar_pose_at(seg.traj, state.extrinsics, tc, tau, tau0);
            pts.push_back(T.act(p_l));
            metas.push_back({static_cast<int>(si), static_cast<int>(i), tau, T.q * (p_l / nrm)});
        }
    }

    SurfelMap map(opts.map_cell, opts.map_planarity, opts.map_min_points, opts.assoc_gate);
    map.build(pts);
    for (size_t k = 0; k < pts.size(); ++k) {
        const int sid = map.associate(pts[k]);
        if (sid < 0) continue;
        const Surfel& sf = map.surfels()[sid];
        const double inc = std::max(std::abs(sf.normal.dot(metas[k].dir)), opts.min_incidence);
        const double sigma_z = opts.range_sigma * inc;

        PlaneResidual pr;
        pr.seg = s;
        pr.tau = metas[k].tau;
        pr.tau0 = tau0;
        const LidarScan& scan = scans[metas[k].scan];
        if (scan.cartesian) {
            pr.cartesian = true;
            pr.point_cart = scan.xyz[metas[k].idx];
        } else {
            const RawLidarPoint& rp = scan.raw[metas[k].idx];
            pr.beam = rp.beam;
            pr.range = rp.range;
            pr.azimuth = rp.azimuth;
        }
        pr.normal = sf.normal;
        pr.d = sf.d;
        pr.weight = 1.0 / (sigma_z * sigma_z);
        out->push_back(pr);
    }
    *map_points = std::move(pts);
}

ActiveMask schedule_mask(const CalibState& state, const StateLayout& layout,
                         const OptimizeOptions& opts, int iter) {
    ActiveMask mask(layout.total);
    mask_gauge(state, layout, mask);
    const bool intr = iter >= opts.intrinsics_start;
    // Before the intrinsics phase only the trajectory and nav states move: the
    // map still carries the systematic beam errors, and letting the mounting
    // chase that bias field plants the whole batch in a displaced basin.
    mask.set(layout.ext_rot_slot(), 3, intr);
    mask.set(layout.ext_trans_slot(), 3, intr);
    // Beams stay frozen until map projection switches to the estimated
    // intrinsics; freeing them earlier would fit them against a map that was
    // built from uncorrected ranges and drag the extrinsics with them.
    const bool beams = intr && iter >= opts.raw_correction_start;
    mask.set(layout.imu_off, 15, intr && opts.calibrate_imu_intrinsics);
    mask.set(layout.lidar_off, 6 * layout.num_beams, beams && opts.calibrate_lidar_intrinsics);
    if (beams && opts.calibrate_lidar_intrinsics) mask_first_beam_datum(layout, mask);
    for (size_t s = 0; s < state.segments.size(); ++s)
        mask.set(layout.tc_slot(static_cast<int>(s)), 1, intr && opts.estimate_time_offset);
    return mask;
}

}  // namespace

OptimizeReport optimize(CalibState& state, const std::vector<SegmentData>& data,
                        const OptimizeOptions& opts, const MapCallback& map_cb) {
    const int S = static_cast<int>(state.segments.size());
    if (S == 0 || static_cast<int>(data.size()) != S)
        throw std::invalid_argument("optimize: segment/data count mismatch");
    for (int s = 0; s < S; ++s)
        if (data[s].scans.empty()) throw std::invalid_argument("optimize: segment without scans");

    OptimizeReport rep;
    for (int s = 0; s < S; ++s) rep.anchor_stamps.push_back(data[s].scans.front().stamp);

    const double wg = 1.0 / (opts.gyro_sigma * opts.gyro_sigma);
    const double wa = 1.0 / (opts.accel_sigma * opts.accel_sigma);
    std::vector<GyroResidual> gyro;
    std::vector<AccelResidual> accel;
    for (int s = 0; s < S; ++s)
        for (const ImuSample& m : data[s].imu) {
            gyro.push_back({s, &m, wg});
            accel.push_back({s, &m, wa});
        }

    const std::vector<LidarBeamIntrinsics> initial_beams = state.beams;
    const StateLayout layout = StateLayout::of(state);

    double mu = -1;
    int stall = 0;
    bool abort = false;
    for (int iter = 0; iter < opts.outer_iterations && !abort; ++iter) {
        const bool corrected = iter >= opts.raw_correction_start;
        const std::vector<LidarBeamIntrinsics>& proj_beams =
            corrected ? state.beams : initial_beams;
        std::vector<PlaneResidual> planes;
        std::vector<std::vector<Vec3>> maps(S);
        for (int s = 0; s < S; ++s)
            build_segment_planes(state, s, data[s], proj_beams, opts, &maps[s], &planes);
        if (planes.empty()) {
            rep.stop_reason = "no plane associations";
            break;
        }

        IterationRecord rec;
        rec.iteration = iter;
        if (map_cb) rec.mme = map_cb(state, maps);

        const ActiveMask mask = schedule_mask(state, layout, opts, iter);

        // Settle the batch against the frozen associations before the map is
        // allowed to follow the state again: rebuilding after every step lets
        // the map chase the state along weakly constrained directions.
        for (int inner = 0; inner < opts.inner_iterations; ++inner) {
            EvalContext ctx(state, layout, rep.anchor_stamps);
            NormalSystem sys = assemble_normal_system(ctx, gyro, accel, planes, opts.huber_delta);
            if (inner == 0) {
                rec.cost_before = sys.cost;
                rec.n_plane = sys.n_plane;
                rec.n_imu = sys.n_gyro + sys.n_accel;
            }

            const std::vector<int> idx = solvable_indices(sys, mask);
            if (idx.empty()) {
                rep.stop_reason = "no solvable state slots";
                abort = true;
                break;
            }
            double mean_diag = 0;
            for (int i : idx) mean_diag += sys.A(i, i);
            mean_diag /= static_cast<double>(idx.size());

            bool stepped = false;
            if (opts.use_tsvd) {
                const TsvdSolution sol = solve_tsvd(sys, idx, opts.tsvd_abs, opts.tsvd_rel);
                rec.tsvd_rank = sol.rank;
                rec.sigma_max = sol.sigmas(0);
                rec.sigma_min = sol.sigmas(sol.sigmas.size() - 1);
                double scale = 1.0;
                for (int h = 0; h < 7; ++h, scale *= 0.5) {
                    CalibState trial = state;
                    apply_increment(trial, layout, scale * sol.dx, opts.tc_bound);
                    EvalContext tctx(trial, layout, rep.anchor_stamps);
                    const double c =
                        assemble_normal_system(tctx, gyro, accel, planes, opts.huber_delta, false)
                            .cost;
                    if (c <= sys.cost * (1.0 + 1e-12)) {
                        state = std::move(trial);
                        rec.cost_after = c;
                        stepped = true;
                        break;
                    }
                    ++rec.rejects;
                }
            } else {
                if (mu < 0) mu = opts.mu_init_scale * mean_diag;
                while (true) {
                    const VecX dx = solve_damped(sys, idx, mu);
                    CalibState trial = state;
                    apply_increment(trial, layout, dx, opts.tc_bound);
                    EvalContext tctx(trial, layout, rep.anchor_stamps);
                    const double c =
                        assemble_normal_system(tctx, gyro, accel, planes, opts.huber_delta, false)
                            .cost;
                    if (c <= sys.cost * (1.0 + 1e-12)) {
                        state = std::move(trial);
                        rec.cost_after = c;
                        rec.mu = mu;
                        stepped = true;
                        mu *= 0.3;
                        break;
                    }
                    ++rec.rejects;
                    mu *= 5.0;
                    if (mu > opts.mu_fail_scale * mean_diag) break;
                }
            }
            if (!stepped) break;
            rec.accepted = true;
            if (sys.cost - rec.cost_after < 1e-5 * (1.0 + sys.cost)) break;
        }
        if (abort) {
            rep.iterations.push_back(rec);
            break;
        }

        if (!rec.accepted) {
            rec.cost_after = rec.cost_before;
            rep.iterations.push_back(rec);
            if (opts.use_tsvd) {
                if (++stall >= 2) {
                    rep.stop_reason = "truncated steps stopped reducing the cost";
                    break;
                }
                continue;
            }
            rep.stop_reason = "damping limit reached without cost reduction";
            break;
        }
        stall = 0;

        rec.extrinsics = state.extrinsics;
        for (int s = 0; s < S; ++s) rec.time_offsets.push_back(state.segments[s].time_offset);
        rep.iterations.push_back(rec);
    }

    // Final pass at the returned state: rebuilt associations, assembled system,
    // and map-quality probe, all reused by reporting.
    {
        const bool corrected = opts.outer_iterations > opts.raw_correction_start;
        const std::vector<LidarBeamIntrinsics>& proj_beams =
            corrected ? state.beams : initial_beams;
        std::vector<std::vector<Vec3>> maps(S);
        rep.final_plane.clear();
        for (int s = 0; s < S; ++s)
            build_segment_planes(state, s, data[s], proj_beams, opts, &maps[s], &rep.final_plane);
        if (map_cb) rep.final_mme = map_cb(state, maps);

        EvalContext ctx(state, layout, rep.anchor_stamps);
        rep.final_system =
            assemble_normal_system(ctx, gyro, accel, rep.final_plane, opts.huber_delta);
        rep.final_cost = rep.final_system.cost;
        const ActiveMask mask =
            schedule_mask(state, layout, opts, std::max(0, opts.outer_iterations - 1));
        rep.final_active.assign(mask.on.begin(), mask.on.end());
    }
    rep.final_gyro = std::move(gyro);
    rep.final_accel = std::move(accel);

    if (rep.stop_reason.empty()) {
        rep.converged = true;
        rep.stop_reason = "completed";
    }
    return rep;
}

}  // namespace ctcalib
