#include "ctcalib/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "ctcalib/metrics.hpp"

namespace ctcalib {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
json quat_json(const Quat& q) { return json::array({q.x(), q.y(), q.z(), q.w()}); }

Vec3 euler_deg(const Quat& q) {
    return matrix_to_euler_zyx(q.toRotationMatrix()) * kRadToDeg;
}

Vec3 euler_err_deg(const Quat& estimate, const Quat& truth) {
    Vec3 e = euler_deg(estimate) - euler_deg(truth);
    for (int a = 0; a < 3; ++a) e(a) = std::remainder(e(a), 360.0);
    return e;
}

std::string resolve_output_dir(const RunConfig& config) {
    if (!config.output_dir.empty()) return config.output_dir;
    if (config.dataset_dir.empty())
        throw ConfigError("dataset_dir or output_dir must be set");
    return config.dataset_dir + "/run";
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw PipelineError("io", "cannot create directory '" + dir + "': " + ec.message());
}

double effective_duration(const RunConfig::Sim& sim) {
    return sim.trajectory == "alternating" ? sim.window * sim.num_windows : sim.duration;
}

std::shared_ptr<const TrajectoryModel> make_vehicle(const RunConfig::Sim& sim) {
    if (sim.trajectory == "figure8") return std::make_shared<Figure8Trajectory>(sim.duration);
    if (sim.trajectory == "alternating")
        return std::make_shared<AlternatingTrajectory>(sim.window, sim.num_windows);
    return std::make_shared<SinusoidTrajectory>(sim.duration);
}

LidarScan to_cartesian(const LidarScan& scan,
                       const std::vector<LidarBeamIntrinsics>& nominal) {
    LidarScan out;
    out.stamp = scan.stamp;
    out.cartesian = true;
    out.xyz_t.reserve(scan.raw.size());
    out.xyz.reserve(scan.raw.size());
    for (const auto& p : scan.raw) {
        out.xyz_t.push_back(p.t);
        out.xyz.push_back(lidar_point_from_raw(nominal.at(p.beam), p.range, p.azimuth));
    }
    return out;
}

OptimizeOptions solver_options(const RunConfig::Calib& c, bool raw_mode) {
    OptimizeOptions o;
    o.outer_iterations = c.outer_iterations;
    o.inner_iterations = c.inner_iterations;
    o.intrinsics_start = c.intrinsics_start;
    o.raw_correction_start = c.raw_correction_start;
    o.calibrate_imu_intrinsics = c.imu_intrinsics;
    o.calibrate_lidar_intrinsics = c.lidar_intrinsics && raw_mode;
    o.estimate_time_offset = c.estimate_time_offset;
    o.tc_bound = c.tc_bound;
    o.use_tsvd = c.use_tsvd;
    o.tsvd_rel = c.tsvd_rel;
    o.tsvd_abs = c.tsvd_abs;
    o.huber_delta = c.huber_delta;
    o.gyro_sigma = c.gyro_sigma;
    o.accel_sigma = c.accel_sigma;
    o.range_sigma = c.range_sigma;
    o.min_incidence = c.min_incidence;
    o.map_cell = c.map_cell;
    o.map_planarity = c.map_planarity;
    o.map_min_points = c.map_min_points;
    o.assoc_gate = c.assoc_gate;
    o.point_stride = c.point_stride;
    return o;
}

// Segment maps live in per-segment anchor frames, so entropies are computed
// per cloud and combined as an evaluation-weighted mean instead of merging
// the clouds.
double multi_cloud_mme(const std::vector<std::vector<Vec3>>& clouds, double radius,
                       int stride) {
    double sum = 0;
    long total = 0;
    MapEntropyOptions opts;
    opts.radius = radius;
    opts.stride = stride;
    for (const auto& cloud : clouds) {
        if (cloud.empty()) continue;
        try {
            const auto r = mean_map_entropy(cloud, opts);
            sum += r.mme * r.evaluated;
            total += r.evaluated;
        } catch (const std::runtime_error&) {
            // a sparse segment map leaves the mean to the other segments
        }
    }
    return total > 0 ? sum / total : std::numeric_limits<double>::quiet_NaN();
}

Pose truth_pose_at(const GroundTruthFile& truth, double stamp) {
    for (size_t i = 0; i < truth.scan_stamps.size(); ++i) {
        if (std::abs(truth.scan_stamps[i] - stamp) < 1e-9) return truth.scan_imu_poses[i];
    }
    throw PipelineError("initializer",
                        "scan stamp " + std::to_string(stamp) + " not in ground truth sidecar");
}

// Spectrum and per-slot standard deviations of the final normal system,
// restricted to directions above the truncation threshold. Frozen or
// unobservable slots report NaN.
struct Uncertainty {
    VecX spectrum;  // descending
    VecX sigma;     // full layout
    int retained = 0;
    double threshold = 0;
};

Uncertainty state_uncertainty(const OptimizeReport& report, const CalibState& state,
                              const OptimizeOptions& opts) {
    const StateLayout layout = StateLayout::of(state);
    ActiveMask mask(layout.total, true);
    mask.on = report.final_active;
    const std::vector<int> idx = solvable_indices(report.final_system, mask);

    Uncertainty out;
    out.sigma = VecX::Constant(layout.total, std::numeric_limits<double>::quiet_NaN());
    if (idx.empty()) return out;

    MatX aa(idx.size(), idx.size());
    for (size_t i = 0; i < idx.size(); ++i)
        for (size_t j = 0; j < idx.size(); ++j) aa(i, j) = report.final_system.A(idx[i], idx[j]);
    Eigen::SelfAdjointEigenSolver<MatX> eig(aa);
    const VecX ev = eig.eigenvalues();  // ascending
    const double sigma_max = std::max(ev(ev.size() - 1), 0.0);

    // TSVD runs reuse their truncation; plain runs only guard numerics.
    out.threshold = opts.use_tsvd
                        ? std::max(opts.tsvd_abs, opts.tsvd_rel * sigma_max)
                        : 1e-12 * sigma_max;

    out.spectrum = ev.reverse();
    VecX var = VecX::Zero(idx.size());
    for (int j = 0; j < ev.size(); ++j) {
        if (ev(j) <= out.threshold) continue;
        ++out.retained;
        var += eig.eigenvectors().col(j).cwiseAbs2() / ev(j);
    }
    for (size_t i = 0; i < idx.size(); ++i) out.sigma(idx[i]) = std::sqrt(var(i));
    return out;
}

void write_iterations_csv(const std::string& path, const OptimizeReport& report,
                          int num_segments) {
    std::ofstream out(path);
    if (!out) throw PipelineError("io", "cannot write '" + path + "'");
    out << "iteration,cost_before,cost_after,accepted,mu,rejects,n_plane,n_imu,"
           "tsvd_rank,sigma_min,sigma_max,mme,ext_px,ext_py,ext_pz,ext_roll_deg,"
           "ext_pitch_deg,ext_yaw_deg";
    for (int s = 0; s < num_segments; ++s) out << ",tc_ms_" << s;
    out << '\n';
    for (const auto& it : report.iterations) {
        const Vec3 e = euler_deg(it.extrinsics.q_imu_lidar);
        const Vec3& p = it.extrinsics.p_imu_lidar;
        out << it.iteration << ',' << num(it.cost_before) << ',' << num(it.cost_after) << ','
            << (it.accepted ? 1 : 0) << ',' << num(it.mu) << ',' << it.rejects << ','
            << it.n_plane << ',' << it.n_imu << ',' << it.tsvd_rank << ','
            << num(it.sigma_min) << ',' << num(it.sigma_max) << ',' << num(it.mme) << ','
            << num(p.x()) << ',' << num(p.y()) << ',' << num(p.z()) << ',' << num(e.x())
            << ',' << num(e.y()) << ',' << num(e.z());
        for (int s = 0; s < num_segments; ++s) {
            const double tc = s < static_cast<int>(it.time_offsets.size())
                                  ? it.time_offsets[s]
                                  : 0.0;
            out << ',' << num(tc * 1e3);
        }
        out << '\n';
    }
}

void write_sigma_spectrum(const std::string& path, const VecX& spectrum) {
    std::ofstream out(path);
    if (!out) throw PipelineError("io", "cannot write '" + path + "'");
    out << "index,sigma\n";
    for (int i = 0; i < spectrum.size(); ++i) out << i << ',' << num(spectrum(i)) << '\n';
}

json segment_json(const CalibState& state, const Uncertainty& unc,
                  const StateLayout& layout) {
    json segments = json::array();
    for (size_t s = 0; s < state.segments.size(); ++s) {
        const SegmentState& seg = state.segments[s];
        json j;
        j["t_min"] = seg.traj.t_min();
        j["t_max"] = seg.traj.t_max();
        j["num_knots"] = seg.traj.num_knots();
        j["time_offset_ms"] = seg.time_offset * 1e3;
        j["time_offset_sigma_ms"] = unc.sigma(layout.tc_slot(static_cast<int>(s))) * 1e3;
        j["gravity"] = vec3_json(seg.nav.gravity);
        j["bias_gyro"] = vec3_json(seg.nav.bias_gyro);
        j["bias_accel"] = vec3_json(seg.nav.bias_accel);
        segments.push_back(std::move(j));
    }
    return segments;
}

json truth_comparison_json(const CalibState& state, const GroundTruthFile& truth) {
    json cmp;
    const Vec3 pos_err =
        (state.extrinsics.p_imu_lidar - truth.extrinsics.p_imu_lidar) * 100.0;
    cmp["pos_err_cm"] = vec3_json(pos_err);
    cmp["rot_err_deg"] =
        vec3_json(euler_err_deg(state.extrinsics.q_imu_lidar, truth.extrinsics.q_imu_lidar));

    json tc = json::array();
    for (const auto& seg : state.segments)
        tc.push_back((seg.time_offset - truth.time_offset) * 1e3);
    cmp["tc_err_ms"] = std::move(tc);

    const ImuIntrinsics& ei = state.imu_intrinsics;
    const ImuIntrinsics& ti = truth.imu;
    cmp["imu"]["scale_gyro_err"] = vec3_json(ei.scale_gyro - ti.scale_gyro);
    cmp["imu"]["misalign_gyro_err"] = vec3_json(ei.misalign_gyro - ti.misalign_gyro);
    cmp["imu"]["gyro_frame_err_deg"] = vec3_json(euler_err_deg(ei.q_gyro_imu, ti.q_gyro_imu));
    cmp["imu"]["scale_accel_err"] = vec3_json(ei.scale_accel - ti.scale_accel);
    cmp["imu"]["misalign_accel_err"] = vec3_json(ei.misalign_accel - ti.misalign_accel);

    if (state.beams.size() == truth.beams.size() && !state.beams.empty()) {
        Vec6 mean_abs = Vec6::Zero();
        for (size_t b = 0; b < state.beams.size(); ++b) {
            mean_abs += (state.beams[b].params() - truth.beams[b].params()).cwiseAbs();
        }
        mean_abs /= static_cast<double>(state.beams.size());
        cmp["beam_mean_abs_err"] = {{"delta_phi_deg", mean_abs(0) * kRadToDeg},
                                    {"delta_theta_deg", mean_abs(1) * kRadToDeg},
                                    {"vert_offset_m", mean_abs(2)},
                                    {"horiz_offset_m", mean_abs(3)},
                                    {"scale", mean_abs(4)},
                                    {"delta_rho_m", mean_abs(5)}};
    }
    return cmp;
}

json calibration_json(const CalibState& state, const OptimizeReport& report,
                      const Uncertainty& unc, const SegmentInfo& ext_info,
                      const GroundTruthFile* truth) {
    const StateLayout layout = StateLayout::of(state);
    json doc;
    doc["converged"] = report.converged;
    doc["stop_reason"] = report.stop_reason;
    doc["iterations"] = report.iterations.size();
    doc["final_cost"] = report.final_cost;
    doc["final_mme"] = report.final_mme;
    doc["residuals"] = {{"gyro", report.final_system.n_gyro},
                        {"accel", report.final_system.n_accel},
                        {"plane", report.final_system.n_plane},
                        {"dropped", report.final_system.n_dropped}};

    json& ext = doc["extrinsics"];
    ext["p_imu_lidar"] = vec3_json(state.extrinsics.p_imu_lidar);
    ext["q_imu_lidar"] = quat_json(state.extrinsics.q_imu_lidar);
    ext["euler_imu_lidar_deg"] = vec3_json(euler_deg(state.extrinsics.q_imu_lidar));
    ext["sigma_rot_deg"] = json::array({unc.sigma(layout.ext_rot_slot()) * kRadToDeg,
                                        unc.sigma(layout.ext_rot_slot() + 1) * kRadToDeg,
                                        unc.sigma(layout.ext_rot_slot() + 2) * kRadToDeg});
    ext["sigma_p"] = json::array({unc.sigma(layout.ext_trans_slot()),
                                  unc.sigma(layout.ext_trans_slot() + 1),
                                  unc.sigma(layout.ext_trans_slot() + 2)});

    json& imu = doc["imu"];
    imu["scale_gyro"] = vec3_json(state.imu_intrinsics.scale_gyro);
    imu["misalign_gyro"] = vec3_json(state.imu_intrinsics.misalign_gyro);
    imu["q_gyro_imu"] = quat_json(state.imu_intrinsics.q_gyro_imu);
    imu["gyro_frame_euler_deg"] = vec3_json(euler_deg(state.imu_intrinsics.q_gyro_imu));
    imu["scale_accel"] = vec3_json(state.imu_intrinsics.scale_accel);
    imu["misalign_accel"] = vec3_json(state.imu_intrinsics.misalign_accel);

    json beams = json::array();
    for (int b = 0; b < static_cast<int>(state.beams.size()); ++b) {
        const LidarBeamIntrinsics& beam = state.beams[b];
        json bj;
        bj["phi_nominal_deg"] = beam.phi_nominal * kRadToDeg;
        bj["delta_phi_deg"] = beam.delta_phi * kRadToDeg;
        bj["delta_theta_deg"] = beam.delta_theta * kRadToDeg;
        bj["vert_offset_m"] = beam.vert_offset;
        bj["horiz_offset_m"] = beam.horiz_offset;
        bj["scale"] = beam.scale;
        bj["delta_rho_m"] = beam.delta_rho;
        json sig = json::array();
        for (int k = 0; k < 6; ++k) sig.push_back(unc.sigma(layout.beam_slot(b) + k));
        bj["sigma"] = std::move(sig);
        beams.push_back(std::move(bj));
    }
    doc["beams"] = std::move(beams);

    doc["segments"] = segment_json(state, unc, layout);

    json& info = doc["extrinsic_information"];
    json sig = json::array();
    for (int i = 0; i < ext_info.sigmas.size(); ++i) sig.push_back(ext_info.sigmas(i));
    info["sigmas"] = std::move(sig);
    info["sigma_min"] = ext_info.sigma_min;
    info["sigma_max"] = ext_info.sigmas.size() ? ext_info.sigmas(0) : 0.0;
    json umin = json::array();
    for (int i = 0; i < 6; ++i) umin.push_back(ext_info.u_min(i));
    info["u_min"] = std::move(umin);

    doc["spectrum"] = {{"retained", unc.retained},
                       {"size", unc.spectrum.size()},
                       {"threshold", unc.threshold}};

    if (truth) doc["truth_comparison"] = truth_comparison_json(state, *truth);
    return doc;
}

// Per-axis gate against the sidecar; logs each violation.
bool passes_check(const CalibState& state, const GroundTruthFile& truth,
                  const RunConfig::Check& check, std::ostream& log) {
    bool ok = true;
    const Vec3 pos_err =
        (state.extrinsics.p_imu_lidar - truth.extrinsics.p_imu_lidar) * 100.0;
    const Vec3 rot_err =
        euler_err_deg(state.extrinsics.q_imu_lidar, truth.extrinsics.q_imu_lidar);
    for (int a = 0; a < 3; ++a) {
        if (std::abs(pos_err(a)) > check.pos_cm) {
            log << "check: translation axis " << a << " error " << std::abs(pos_err(a))
                << " cm exceeds " << check.pos_cm << " cm\n";
            ok = false;
        }
        if (std::abs(rot_err(a)) > check.rot_deg) {
            log << "check: rotation axis " << a << " error " << std::abs(rot_err(a))
                << " deg exceeds " << check.rot_deg << " deg\n";
            ok = false;
        }
    }
    for (size_t s = 0; s < state.segments.size(); ++s) {
        const double err = std::abs(state.segments[s].time_offset - truth.time_offset) * 1e3;
        if (err > check.tc_ms) {
            log << "check: segment " << s << " time offset error " << err << " ms exceeds "
                << check.tc_ms << " ms\n";
            ok = false;
        }
    }
    return ok;
}

struct CalibrationArtifacts {
    CalibState state;
    OptimizeReport report;
    SegmentInfo ext_info;
    Uncertainty uncertainty;
};

// Shared tail of calibrate and the joint stage of select-segments: run the
// batch refinement and write every report file with the given prefix.
CalibrationArtifacts run_batch(CalibState state, const std::vector<SegmentData>& data,
                               const RunConfig& config, bool raw_mode,
                               const std::string& dir, const std::string& prefix,
                               std::ostream& log) {
    OptimizeOptions opts = solver_options(config.calib, raw_mode);
    MapCallback map_cb;
    if (config.calib.track_mme) {
        const double radius = config.calib.mme_radius;
        const int stride = config.calib.mme_stride;
        map_cb = [radius, stride](const CalibState&, const std::vector<std::vector<Vec3>>& maps) {
            return multi_cloud_mme(maps, radius, stride);
        };
    }

    CalibrationArtifacts art{std::move(state), {}, {}, {}};
    art.report = optimize(art.state, data, opts, map_cb);
    log << prefix << "optimization " << (art.report.converged ? "converged" : "stopped")
        << " (" << art.report.stop_reason << ") after " << art.report.iterations.size()
        << " iterations, cost " << art.report.final_cost << "\n";

    const StateLayout layout = StateLayout::of(art.state);
    ActiveMask mask(layout.total, true);
    mask.on = art.report.final_active;
    art.ext_info = segment_information(art.report.final_system, mask, layout);
    art.uncertainty = state_uncertainty(art.report, art.state, opts);

    const std::string stem = dir + "/" + prefix;
    write_iterations_csv(stem + "iterations.csv", art.report,
                         static_cast<int>(art.state.segments.size()));
    write_sigma_spectrum(stem + "sigma_spectrum.csv", art.uncertainty.spectrum);
    return art;
}

void write_calibration_json(const std::string& path, const json& doc) {
    std::ofstream out(path);
    if (!out) throw PipelineError("io", "cannot write '" + path + "'");
    out << doc.dump(2) << '\n';
}

void log_extrinsics(const CalibState& state, const GroundTruthFile* truth,
                    std::ostream& log) {
    const Vec3& p = state.extrinsics.p_imu_lidar;
    const Vec3 e = euler_deg(state.extrinsics.q_imu_lidar);
    log << "extrinsics: p = [" << p.x() << ", " << p.y() << ", " << p.z()
        << "] m, euler = [" << e.x() << ", " << e.y() << ", " << e.z() << "] deg\n";
    if (truth) {
        const Vec3 dp = (p - truth->extrinsics.p_imu_lidar) * 100.0;
        const Vec3 de = euler_err_deg(state.extrinsics.q_imu_lidar,
                                      truth->extrinsics.q_imu_lidar);
        log << "vs truth:   dp = [" << dp.x() << ", " << dp.y() << ", " << dp.z()
            << "] cm, deuler = [" << de.x() << ", " << de.y() << ", " << de.z()
            << "] deg\n";
    }
}

}  // namespace

SegmentInit initialize_segment(const SegmentData& data,
                               const std::vector<LidarBeamIntrinsics>& beams,
                               const RunConfig& config, Extrinsics* extrinsics,
                               const GroundTruthFile* truth) {
    if (data.imu.size() < 16)
        throw PipelineError("initializer", "segment has too few IMU samples");
    if (data.scans.size() < 3) throw PipelineError("initializer", "segment has too few scans");

    // Pad the domain by the time-offset bound so the anchor pose and the scan
    // points stay evaluable for any admissible clock offset.
    const double pad = config.calib.estimate_time_offset ? config.calib.tc_bound : 0.0;
    TrajectorySpline spline = TrajectorySpline::covering(
        data.imu.front().t - pad, data.imu.back().t + pad, config.calib.knot_dt);
    try {
        init_rotation_spline(spline, data.imu);
    } catch (const std::exception& e) {
        throw PipelineError("initializer", std::string("rotation fit: ") + e.what());
    }

    std::vector<OdometryPose> odom;
    Quat q_il = Quat::Identity();
    Vec3 p_il = Vec3::Zero();
    if (config.init.odometry == "perturbed_truth") {
        if (!truth)
            throw PipelineError("initializer",
                                "perturbed_truth odometry needs ground_truth.json");
        // Odometry is consumed relative to the first scan pose (the anchor
        // convention ICP output follows), so rebase the truth poses there.
        std::vector<double> stamps;
        std::vector<Pose> world;
        const Pose anchor =
            truth_pose_at(*truth, data.scans.front().stamp) * truth->extrinsics.pose();
        for (const auto& scan : data.scans) {
            stamps.push_back(scan.stamp);
            world.push_back(anchor.inverse() *
                            (truth_pose_at(*truth, scan.stamp) * truth->extrinsics.pose()));
        }
        odom = perturbed_odometry(stamps, world, config.init.perturb_rot,
                                  config.init.perturb_trans,
                                  static_cast<unsigned>(config.init.seed));
        std::mt19937_64 rng(config.init.seed * 0x9e3779b97f4a7c15ull + 1);
        std::normal_distribution<double> gauss(0.0, 1.0);
        auto draw = [&] { return Vec3(gauss(rng), gauss(rng), gauss(rng)); };
        q_il = truth->extrinsics.q_imu_lidar * so3_exp(config.init.perturb_ext_rot * draw());
        p_il = truth->extrinsics.p_imu_lidar + config.init.perturb_ext_trans * draw();
    } else {
        IcpOdometryOptions icp;
        icp.point_stride = config.init.icp_stride;
        icp.max_iterations = config.init.icp_max_iterations;
        icp.beams = beams;
        odom = plane_icp_odometry(data.scans, icp);
        try {
            q_il = init_extrinsic_rotation(make_rotation_pairs(spline, odom),
                                           config.init.min_pair_angle);
        } catch (const std::exception& e) {
            throw PipelineError("initializer", std::string("extrinsic rotation: ") + e.what());
        }
        if (config.init.two_pass) {
            // With the rotation compensated the scans are nearly rigid, so the
            // second registration pass is markedly cleaner; keep the first
            // pass if the refit rotation degenerates.
            const auto derotated = derotate_scans(data.scans, beams, spline, q_il);
            IcpOdometryOptions icp2 = icp;
            icp2.beams.clear();
            auto odom2 = plane_icp_odometry(derotated, icp2);
            try {
                q_il = init_extrinsic_rotation(make_rotation_pairs(spline, odom2),
                                               config.init.min_pair_angle);
                odom = std::move(odom2);
            } catch (const std::exception&) {
            }
        }
    }
    // A rate-only orientation fit absorbs the gyro bias as drift that maps to
    // range-proportional point error, so pin it down with the odometry
    // rotations before fitting the translation against it.
    ImuNavState nav;
    refine_rotation_spline(spline, data.imu, odom, q_il, &nav.bias_gyro,
                           config.calib.gyro_sigma);
    init_translation_spline(spline, odom, q_il, p_il, data.imu, &nav, 0.01,
                            config.calib.accel_sigma);

    SegmentInit out{SegmentState(std::move(spline)), {}, 0};
    out.state.nav = nav;
    out.odometry = std::move(odom);
    for (const auto& op : out.odometry) out.flagged += op.flagged ? 1 : 0;
    if (extrinsics) {
        extrinsics->q_imu_lidar = q_il;
        extrinsics->p_imu_lidar = p_il;
    }
    return out;
}

LoadedDataset load_dataset(const std::string& dir) {
    if (dir.empty()) throw ConfigError("dataset_dir must be set");
    LoadedDataset ds;
    try {
        ds.recording.imu = read_imu_csv(dir + "/imu.csv");
        ds.recording.scans = read_scans(dir + "/scans");
    } catch (const std::exception& e) {
        throw PipelineError("dataset", e.what());
    }
    if (ds.recording.imu.empty())
        throw PipelineError("dataset", "IMU stream is empty in '" + dir + "'");

    const bool cartesian = ds.recording.scans.front().cartesian;
    if (!cartesian) {
        try {
            ds.beams = read_lidar_info(dir + "/lidar.json").nominal_beams();
        } catch (const std::exception& e) {
            throw PipelineError("dataset", e.what());
        }
    }
    const std::string truth_path = dir + "/ground_truth.json";
    if (fs::exists(truth_path)) {
        try {
            ds.truth = read_ground_truth(truth_path);
        } catch (const std::exception& e) {
            throw PipelineError("dataset", e.what());
        }
    }
    return ds;
}

int cmd_simulate(const RunConfig& config, std::ostream& log) {
    validate(config);
    if (config.dataset_dir.empty()) throw ConfigError("dataset_dir must be set for simulate");

    GroundTruth truth = sample_random_calibration(static_cast<unsigned>(config.sim.truth_seed),
                                                  config.sim.num_beams);
    truth.vehicle = make_vehicle(config.sim);
    apply_mounting(truth, config.sim.mounting[0]);
    truth.time_offset = config.sim.time_offset;

    SimOptions opts;
    opts.duration = effective_duration(config.sim);
    opts.imu_rate = config.sim.imu_rate;
    opts.scan_period = config.sim.scan_period;
    opts.azimuth_step_deg = config.sim.azimuth_step_deg;
    opts.max_range = config.sim.max_range;
    opts.range_sigma = config.sim.range_sigma;
    opts.gyro_sigma = config.sim.gyro_sigma;
    opts.accel_sigma = config.sim.accel_sigma;
    opts.gyro_walk = config.sim.gyro_walk;
    opts.accel_walk = config.sim.accel_walk;
    opts.time_offset = config.sim.time_offset;
    opts.distortion = config.sim.distortion;
    opts.seed = static_cast<unsigned>(config.sim.noise_seed);

    Simulation sim = simulate(truth, PlaneScene::default_room(), opts);

    if (config.sim.cartesian) {
        std::vector<LidarBeamIntrinsics> nominal(truth.beams.size());
        for (size_t b = 0; b < truth.beams.size(); ++b)
            nominal[b].phi_nominal = truth.beams[b].phi_nominal;
        for (auto& scan : sim.data.scans) scan = to_cartesian(scan, nominal);
    }

    ensure_dir(config.dataset_dir);
    write_imu_csv(config.dataset_dir + "/imu.csv", sim.data.imu);
    write_scans(config.dataset_dir + "/scans", sim.data.scans);

    LidarInfo info;
    info.num_beams = static_cast<int>(truth.beams.size());
    for (const auto& b : truth.beams) info.phi_nominal.push_back(b.phi_nominal);
    write_lidar_info(config.dataset_dir + "/lidar.json", info);

    GroundTruthFile gt;
    gt.trajectory = config.sim.trajectory;
    gt.mounting = config.sim.mounting;
    gt.imu = sim.truth.imu;
    gt.nav = sim.truth.nav;
    gt.beams = sim.truth.beams;
    gt.extrinsics = sim.truth.extrinsics;
    gt.time_offset = sim.truth.time_offset;
    gt.degenerate_direction = sim.truth.degenerate_direction;
    gt.scan_stamps = sim.scan_stamps;
    gt.scan_imu_poses = sim.scan_imu_poses;
    write_ground_truth(config.dataset_dir + "/ground_truth.json", gt);

    write_config_snapshot(config, config.dataset_dir + "/config.json");

    size_t points = 0;
    for (const auto& s : sim.data.scans)
        points += s.cartesian ? s.xyz.size() : s.raw.size();
    log << "simulated " << config.sim.trajectory << " run, mounting "
        << config.sim.mounting << ": " << sim.data.imu.size() << " IMU samples, "
        << sim.data.scans.size() << " scans, " << points << " returns\n";
    log << "dataset written to " << config.dataset_dir << "\n";
    return kExitOk;
}

int cmd_calibrate(const RunConfig& config, std::ostream& log) {
    validate(config);
    LoadedDataset ds = load_dataset(config.dataset_dir);
    const std::string dir = resolve_output_dir(config);
    ensure_dir(dir);
    write_config_snapshot(config, dir + "/config.json");

    std::vector<SegmentData> segments;
    if (config.calib.segment_length > 0) {
        segments = split_by_time(ds.recording, config.calib.segment_length);
        if (segments.empty())
            throw PipelineError("dataset", "no usable segments after splitting");
    } else {
        segments.push_back(ds.recording);
    }

    const GroundTruthFile* truth = ds.truth ? &*ds.truth : nullptr;
    CalibState state;
    state.beams = ds.beams;
    for (size_t s = 0; s < segments.size(); ++s) {
        Extrinsics ext;
        SegmentInit init = initialize_segment(segments[s], ds.beams, config, &ext, truth);
        if (s == 0) state.extrinsics = ext;
        log << "segment " << s << ": " << init.odometry.size() << " odometry poses ("
            << init.flagged << " flagged), spline knots " << init.state.traj.num_knots()
            << "\n";
        state.segments.push_back(std::move(init.state));
    }

    CalibrationArtifacts art =
        run_batch(std::move(state), segments, config, !ds.beams.empty(), dir, "", log);

    json doc = calibration_json(art.state, art.report, art.uncertainty, art.ext_info, truth);
    write_calibration_json(dir + "/calibration.json", doc);
    log_extrinsics(art.state, truth, log);
    log << "reports written to " << dir << "\n";

    if (config.check.enabled) {
        if (!truth)
            throw PipelineError("check", "check.enabled requires ground_truth.json");
        if (!passes_check(art.state, *truth, config.check, log)) {
            log << "calibration exceeded check thresholds\n";
            return kExitThreshold;
        }
        log << "calibration within check thresholds\n";
    }
    return kExitOk;
}

int cmd_select_segments(const RunConfig& config, std::ostream& log) {
    validate(config);
    LoadedDataset ds = load_dataset(config.dataset_dir);
    const std::string dir = resolve_output_dir(config);
    ensure_dir(dir);
    write_config_snapshot(config, dir + "/config.json");

    std::vector<std::pair<double, double>> spans;
    std::vector<SegmentData> segments =
        split_by_time(ds.recording, config.segments.length, &spans);
    if (segments.empty()) throw PipelineError("dataset", "no usable segments after splitting");

    const GroundTruthFile* truth = ds.truth ? &*ds.truth : nullptr;
    const bool raw_mode = !ds.beams.empty();

    struct Row {
        int index = 0;
        double t_begin = 0, t_end = 0;
        double sigma_min = 0, sigma_max = 0;
        Vec6 u_min = Vec6::Zero();
        bool init_ok = false;
        std::string note;
    };
    std::vector<Row> rows(segments.size());
    std::vector<SegmentState> probe_states;
    std::vector<Extrinsics> probe_ext(segments.size());
    probe_states.reserve(segments.size());

    for (size_t s = 0; s < segments.size(); ++s) {
        Row& row = rows[s];
        row.index = static_cast<int>(s);
        row.t_begin = spans[s].first;
        row.t_end = spans[s].second;
        try {
            SegmentInit init =
                initialize_segment(segments[s], ds.beams, config, &probe_ext[s], truth);
            CalibState probe;
            probe.beams = ds.beams;
            probe.extrinsics = probe_ext[s];
            probe.segments.push_back(init.state);

            OptimizeOptions po = solver_options(config.calib, raw_mode);
            po.outer_iterations = config.segments.probe_iterations;
            po.calibrate_imu_intrinsics = false;
            po.calibrate_lidar_intrinsics = false;
            po.point_stride = std::max(config.calib.point_stride, config.segments.probe_stride);
            // Degenerate windows are exactly what the probe must survive.
            po.use_tsvd = true;
            po.tsvd_rel = std::max(config.calib.tsvd_rel, 1e-6);
            OptimizeReport rep = optimize(probe, {segments[s]}, po);

            const StateLayout layout = StateLayout::of(probe);
            ActiveMask mask(layout.total, true);
            mask.on = rep.final_active;
            const SegmentInfo si = segment_information(rep.final_system, mask, layout);
            row.sigma_min = si.sigma_min;
            row.sigma_max = si.sigmas.size() ? si.sigmas(0) : 0.0;
            row.u_min = si.u_min;
            row.init_ok = true;
            probe_states.push_back(std::move(probe.segments[0]));
            probe_ext[s] = probe.extrinsics;
        } catch (const std::exception& e) {
            row.note = e.what();
            probe_states.emplace_back(TrajectorySpline(0, 1, 4));
            log << "segment " << s << ": probe failed (" << e.what() << ")\n";
        }
    }

    std::vector<int> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&rows](int a, int b) {
        if (rows[a].init_ok != rows[b].init_ok) return rows[a].init_ok;
        return rows[a].sigma_min > rows[b].sigma_min;
    });

    {
        std::ofstream out(dir + "/segments.csv");
        if (!out) throw PipelineError("io", "cannot write '" + dir + "/segments.csv'");
        out << "rank,segment,t_begin,t_end,sigma_min,sigma_ratio,informative,init_ok,"
               "u0,u1,u2,u3,u4,u5\n";
        for (size_t r = 0; r < order.size(); ++r) {
            const Row& row = rows[order[r]];
            const double ratio = row.sigma_max > 0 ? row.sigma_min / row.sigma_max : 0.0;
            out << r << ',' << row.index << ',' << num(row.t_begin) << ',' << num(row.t_end)
                << ',' << num(row.sigma_min) << ',' << num(ratio) << ','
                << (row.init_ok && row.sigma_min > config.segments.sigma_threshold ? 1 : 0)
                << ',' << (row.init_ok ? 1 : 0);
            for (int i = 0; i < 6; ++i) out << ',' << num(row.u_min(i));
            out << '\n';
        }
    }
    {
        json doc;
        json list = json::array();
        for (size_t r = 0; r < order.size(); ++r) {
            const Row& row = rows[order[r]];
            json j;
            j["rank"] = r;
            j["segment"] = row.index;
            j["t_begin"] = row.t_begin;
            j["t_end"] = row.t_end;
            j["sigma_min"] = row.sigma_min;
            j["sigma_max"] = row.sigma_max;
            j["informative"] =
                row.init_ok && row.sigma_min > config.segments.sigma_threshold;
            j["init_ok"] = row.init_ok;
            if (!row.note.empty()) j["note"] = row.note;
            json u = json::array();
            for (int i = 0; i < 6; ++i) u.push_back(row.u_min(i));
            j["u_min"] = std::move(u);
            list.push_back(std::move(j));
        }
        doc["segments"] = std::move(list);
        doc["sigma_threshold"] = config.segments.sigma_threshold;
        write_calibration_json(dir + "/segments.json", doc);
    }

    for (size_t r = 0; r < order.size(); ++r) {
        const Row& row = rows[order[r]];
        log << "rank " << r << ": segment " << row.index << " [" << row.t_begin << ", "
            << row.t_end << ") sigma_min " << row.sigma_min
            << (row.init_ok ? "" : " (init failed)") << "\n";
    }

    if (!config.segments.joint) return kExitOk;

    std::vector<int> chosen;
    for (int idx : order) {
        if (!rows[idx].init_ok) continue;
        chosen.push_back(idx);
        if (static_cast<int>(chosen.size()) == config.segments.top_n) break;
    }
    if (chosen.empty())
        throw PipelineError("segments", "no segment survived initialization");

    CalibState joint;
    joint.beams = ds.beams;
    joint.extrinsics = probe_ext[chosen.front()];
    std::vector<SegmentData> joint_data;
    for (int idx : chosen) {
        joint.segments.push_back(probe_states[idx]);
        joint_data.push_back(segments[idx]);
    }
    log << "joint calibration over " << chosen.size() << " segment(s)\n";

    CalibrationArtifacts art =
        run_batch(std::move(joint), joint_data, config, raw_mode, dir, "joint_", log);
    json doc = calibration_json(art.state, art.report, art.uncertainty, art.ext_info, truth);
    json picked = json::array();
    for (int idx : chosen) picked.push_back(idx);
    doc["joint_segments"] = std::move(picked);
    write_calibration_json(dir + "/joint_calibration.json", doc);
    log_extrinsics(art.state, truth, log);
    log << "reports written to " << dir << "\n";

    if (config.check.enabled) {
        if (!truth)
            throw PipelineError("check", "check.enabled requires ground_truth.json");
        if (!passes_check(art.state, *truth, config.check, log)) {
            log << "joint calibration exceeded check thresholds\n";
            return kExitThreshold;
        }
        log << "joint calibration within check thresholds\n";
    }
    return kExitOk;
}

int cmd_report(const RunConfig& config, std::ostream& log) {
    validate(config);
    std::string dir = config.run_dir;
    if (dir.empty()) dir = resolve_output_dir(config);

    std::string calib_path = dir + "/calibration.json";
    std::string prefix;
    if (!fs::exists(calib_path) && fs::exists(dir + "/joint_calibration.json")) {
        calib_path = dir + "/joint_calibration.json";
        prefix = "joint_";
    }
    if (!fs::exists(calib_path))
        throw PipelineError("report", "no calibration.json in '" + dir + "'");

    json doc;
    {
        std::ifstream in(calib_path);
        try {
            in >> doc;
        } catch (const json::exception& e) {
            throw PipelineError("report", "malformed '" + calib_path + "': " + e.what());
        }
    }

    const bool have_truth = doc.contains("truth_comparison");
    log << std::fixed << std::setprecision(4);
    log << "calibration summary (" << calib_path << ")\n";
    log << "  converged: " << (doc.value("converged", false) ? "yes" : "no") << " ("
        << doc.value("stop_reason", std::string("?")) << ")\n";
    log << "  final cost: " << doc.value("final_cost", 0.0) << ", final map entropy: "
        << doc.value("final_mme", 0.0) << "\n";

    auto row3 = [&log](const std::string& name, const json& value, const char* unit) {
        log << "  " << std::left << std::setw(26) << name << std::right;
        for (int i = 0; i < 3; ++i) log << std::setw(12) << value[i].get<double>();
        log << "  " << unit << "\n";
    };
    row3("translation", doc["extrinsics"]["p_imu_lidar"], "m");
    row3("rotation (euler)", doc["extrinsics"]["euler_imu_lidar_deg"], "deg");
    for (const auto& seg : doc["segments"])
        log << "  time offset" << std::setw(27) << seg["time_offset_ms"].get<double>()
            << "  ms\n";
    if (have_truth) {
        const json& cmp = doc["truth_comparison"];
        row3("translation error", cmp["pos_err_cm"], "cm");
        row3("rotation error", cmp["rot_err_deg"], "deg");
        for (const auto& tc : cmp["tc_err_ms"])
            log << "  time offset error" << std::setw(21) << tc.get<double>() << "  ms\n";
    } else {
        log << "  (no ground truth sidecar; estimates only)\n";
    }
    const json& info = doc["extrinsic_information"];
    log << "  weakest direction sigma " << std::scientific << info["sigma_min"].get<double>()
        << " (ratio " << info["sigma_min"].get<double>() /
                             std::max(info["sigma_max"].get<double>(), 1e-300)
        << ")\n"
        << std::defaultfloat;

    // Plot-ready curves distilled from the iteration log.
    const std::string iter_path = dir + "/" + prefix + "iterations.csv";
    std::ifstream iter(iter_path);
    if (!iter) {
        log << "missing " << iter_path << "; no curves written\n";
        return kExitOk;
    }
    std::string header;
    std::getline(iter, header);
    std::ofstream mme_out(dir + "/mme_curve.csv");
    std::ofstream cost_out(dir + "/cost_curve.csv");
    std::ofstream trace_out(dir + "/extrinsic_trace.csv");
    mme_out << "iteration,mme\n";
    cost_out << "iteration,cost\n";
    trace_out << "iteration,px,py,pz,roll_deg,pitch_deg,yaw_deg\n";
    std::string line;
    while (std::getline(iter, line)) {
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cols.push_back(cell);
        if (cols.size() < 18) continue;
        mme_out << cols[0] << ',' << cols[11] << '\n';
        cost_out << cols[0] << ',' << cols[2] << '\n';
        trace_out << cols[0] << ',' << cols[12] << ',' << cols[13] << ',' << cols[14] << ','
                  << cols[15] << ',' << cols[16] << ',' << cols[17] << '\n';
    }
    log << "curves written to " << dir << "\n";
    return kExitOk;
}

}  // namespace ctcalib
