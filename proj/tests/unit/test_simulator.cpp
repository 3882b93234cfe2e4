#include <cmath>
#include <random>

#include "doctest.h"
#include "ctcalib/simulator.hpp"
#include "ctcalib/solver.hpp"
#include "ctcalib/state.hpp"
#include "support/test_util.hpp"

using namespace ctcalib;

namespace {

const double kDeg = 3.14159265358979323846 / 180.0;

// Central-difference check of the analytic derivatives of a trajectory model.
void check_kinematics(const TrajectoryModel& traj, double t, double tol) {
    const double h = 1e-6;
    TrajectorySample s = traj.at(t);
    TrajectorySample lo = traj.at(t - h), hi = traj.at(t + h);
    CHECK((s.vel - (hi.p - lo.p) / (2 * h)).norm() < tol);
    CHECK((s.acc - (hi.vel - lo.vel) / (2 * h)).norm() < tol);
    Vec3 omega_fd = so3_log(lo.q.conjugate() * hi.q) / (2 * h);
    CHECK((s.omega - omega_fd).norm() < tol);
}

GroundTruth make_truth(unsigned seed, std::shared_ptr<const TrajectoryModel> vehicle,
                       double sigma_scale = 1.0) {
    GroundTruth truth = sample_random_calibration(seed, 16, sigma_scale);
    truth.vehicle = std::move(vehicle);
    return truth;
}

// World point a raw return reconstructs to, using true intrinsics and the
// true pose at the return's corrected time.
Vec3 reconstruct(const GroundTruth& truth, const RawLidarPoint& pt, double time_offset) {
    Pose pose = truth.imu_pose(pt.t + time_offset) * truth.extrinsics.pose();
    return pose.act(lidar_point_from_raw(truth.beams[pt.beam], pt.range, pt.azimuth));
}

double plane_misfit(const PlaneScene& scene, const Vec3& p) {
    double best = 1e9;
    for (const ScenePlane& s : scene.planes) best = std::min(best, std::abs(point_to_plane(s.normal, s.d, p)));
    return best;
}

}  // namespace

TEST_CASE("excited benchmark path passes through its defining waypoints") {
    SinusoidTrajectory traj;
    TrajectorySample s0 = traj.at(0.0);
    CHECK((s0.p - Vec3(7, 5, 5.8)).norm() < 1e-12);
    // Roll 0.4 at t=0, zero pitch/yaw.
    CHECK(testutil::quat_distance(s0.q, so3_exp(Vec3(0.4, 0, 0))) < 1e-12);
    CHECK(traj.at(5.0).p.x() == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(!traj.planar());
    CHECK_THROWS_AS(traj.at(11.0), std::out_of_range);
    CHECK_THROWS_AS(traj.at(-1.0), std::out_of_range);
}

TEST_CASE("figure-8 path is planar with yaw-only rotation") {
    Figure8Trajectory traj;
    CHECK((traj.at(0.0).p - Vec3(2, 5, 2)).norm() < 1e-12);
    CHECK(traj.planar());
    for (double t : {0.3, 2.2, 5.9, 8.4}) {
        TrajectorySample s = traj.at(t);
        CHECK(s.p.z() == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(std::abs(s.vel.z()) < 1e-12);
        // Yaw-only: omega stays on the body z axis.
        CHECK(std::abs(s.omega.x()) < 1e-12);
        CHECK(std::abs(s.omega.y()) < 1e-12);
    }
}

TEST_CASE("analytic velocities, accelerations, body rates match finite differences") {
    SinusoidTrajectory sin_traj;
    Figure8Trajectory fig_traj;
    AlternatingTrajectory alt_traj;
    for (double t : {0.11, 1.7, 3.95, 6.28, 9.4}) {
        check_kinematics(sin_traj, t, 1e-6);
        check_kinematics(fig_traj, t, 1e-6);
    }
    // Hit the cruise phase, both blend ramps, and a window boundary.
    for (double t : {1.1, 7.5, 13.9, 16.2, 29.999, 30.001, 44.0, 61.3, 118.0}) {
        check_kinematics(alt_traj, t, 2e-5);
    }
}

TEST_CASE("alternating path cruises planar in odd windows and excites even ones") {
    AlternatingTrajectory traj;
    CHECK(traj.t_end() == doctest::Approx(120.0));
    CHECK(traj.window_excited(0));
    CHECK(!traj.window_excited(1));
    // Middle of a planar window: no roll/pitch, constant height.
    TrajectorySample cruise = traj.at(22.5);
    CHECK(std::abs(cruise.omega.x()) < 1e-12);
    CHECK(std::abs(cruise.omega.y()) < 1e-12);
    CHECK(cruise.p.z() == doctest::Approx(2.0).epsilon(1e-12));
    // Middle of an excited window: three-axis rotation present.
    TrajectorySample wild = traj.at(37.5);
    CHECK(std::abs(wild.omega.x()) > 0.05);
    CHECK(std::abs(wild.omega.y()) > 0.05);
}

TEST_CASE("mounting rotations send the vehicle vertical to the documented directions") {
    Vec3 va = mounting_case('A') * Vec3::UnitZ();
    Vec3 vb = mounting_case('B') * Vec3::UnitZ();
    Vec3 vc = mounting_case('C') * Vec3::UnitZ();
    CHECK((va - Vec3(0, 0, 1)).norm() < 1e-12);
    CHECK((vb - Vec3(0.5, 0, 0.86603)).norm() < 1e-5);
    CHECK((vc - Vec3(0.5, 0.43301, 0.75)).norm() < 1e-5);
    CHECK_THROWS_AS(mounting_case('D'), std::invalid_argument);

    // Planar motion really does leave that direction fixed under relative
    // IMU rotations, which is what makes it unobservable.
    for (char c : {'A', 'B', 'C'}) {
        GroundTruth truth = make_truth(3, std::make_shared<Figure8Trajectory>());
        apply_mounting(truth, c);
        Quat q1 = truth.imu_pose(1.3).q, q2 = truth.imu_pose(4.1).q;
        Mat3 rel = (q1.conjugate() * q2).toRotationMatrix();
        CHECK((rel * truth.degenerate_direction - truth.degenerate_direction).norm() < 1e-12);
        CHECK(std::abs(truth.degenerate_direction.norm() - 1.0) < 1e-12);
    }

    // Fully excited motion has no degenerate direction.
    GroundTruth truth = make_truth(3, std::make_shared<SinusoidTrajectory>());
    apply_mounting(truth, 'B');
    CHECK(truth.degenerate_direction.norm() == 0.0);
}

TEST_CASE("calibration sampling is deterministic and honors its spreads") {
    GroundTruth a = sample_random_calibration(11);
    GroundTruth b = sample_random_calibration(11);
    GroundTruth c = sample_random_calibration(12);
    CHECK((a.beams[5].params() - b.beams[5].params()).norm() == 0.0);
    CHECK((a.nav.bias_gyro - b.nav.bias_gyro).norm() == 0.0);
    CHECK((a.beams[5].params() - c.beams[5].params()).norm() > 0.0);

    // Datum beam: angular and positional offsets pinned to zero, range
    // parameters still drawn.
    CHECK(a.beams[0].delta_phi == 0.0);
    CHECK(a.beams[0].delta_theta == 0.0);
    CHECK(a.beams[0].vert_offset == 0.0);
    CHECK(a.beams[0].horiz_offset == 0.0);
    CHECK(a.beams[0].delta_rho != 0.0);
    CHECK(a.beams[1].delta_phi != 0.0);

    // Nominal elevations span -15..15 degrees.
    CHECK(a.beams[0].phi_nominal == doctest::Approx(-15.0 * kDeg));
    CHECK(a.beams[15].phi_nominal == doctest::Approx(15.0 * kDeg));

    GroundTruth zero = sample_random_calibration(11, 16, 0.0);
    CHECK(zero.beams[7].params().norm() == doctest::Approx(1.0));  // scale only
    CHECK((zero.imu.scale_gyro - Vec3::Ones()).norm() == 0.0);
    CHECK(zero.imu.misalign_accel.norm() == 0.0);
    CHECK(testutil::quat_distance(zero.imu.q_gyro_imu, Quat::Identity()) == 0.0);
    CHECK(zero.nav.bias_accel.norm() == 0.0);

    // Empirical spreads over many draws stay within 5% of the configured ones.
    const int n = 10000;
    auto spread = [&](auto&& get, double expect_sigma) {
        double sum = 0, sq = 0;
        for (int i = 0; i < n; ++i) {
            double v = get(sample_random_calibration(1000 + i));
            sum += v;
            sq += v * v;
        }
        double mean = sum / n;
        double sd = std::sqrt(sq / n - mean * mean);
        CHECK(sd == doctest::Approx(expect_sigma).epsilon(0.05));
    };
    spread([](const GroundTruth& g) { return g.beams[1].delta_phi; }, 0.1 * kDeg);
    spread([](const GroundTruth& g) { return g.beams[2].delta_theta; }, 0.05 * kDeg);
    spread([](const GroundTruth& g) { return g.beams[3].vert_offset; }, 0.005);
    spread([](const GroundTruth& g) { return g.beams[4].horiz_offset; }, 0.005);
    spread([](const GroundTruth& g) { return g.beams[5].scale - 1.0; }, 5e-5);
    spread([](const GroundTruth& g) { return g.beams[0].delta_rho; }, 0.01);
    spread([](const GroundTruth& g) { return g.imu.scale_gyro.x() - 1.0; }, 1e-4);
    spread([](const GroundTruth& g) { return g.imu.scale_accel.y() - 1.0; }, 1e-3);
    spread([](const GroundTruth& g) { return g.imu.misalign_gyro.z(); }, 0.05 * kDeg);

    // Extrinsics are a fixed installation, not drawn.
    CHECK((a.extrinsics.p_imu_lidar - Vec3(0.3, 0.15, 0.05)).norm() == 0.0);
    Vec3 rpy = matrix_to_euler_zyx(a.extrinsics.q_imu_lidar.toRotationMatrix());
    CHECK((rpy - Vec3(1 * kDeg, 2 * kDeg, 5 * kDeg)).norm() < 1e-12);
}

TEST_CASE("room ray casting returns the nearest bounded hit") {
    PlaneScene scene = PlaneScene::default_room();
    const Vec3 mid(2, 5, 5);
    double dist;
    int idx;
    REQUIRE(scene.cast(mid, Vec3::UnitX(), 30.0, &dist, &idx));
    CHECK(dist == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(idx == 1);
    REQUIRE(scene.cast(mid, -Vec3::UnitZ(), 30.0, &dist, &idx));
    CHECK(dist == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(idx == 4);
    // Interior panel shadows the wall behind it.
    Vec3 to_panel = (Vec3(6.5, 2.0, 3.0) - mid).normalized();
    REQUIRE(scene.cast(mid, to_panel, 30.0, &dist, &idx));
    CHECK(dist == doctest::Approx((Vec3(6.5, 2.0, 3.0) - mid).norm()).epsilon(1e-9));
    CHECK(idx == 6);
    // Beyond max range is a miss.
    CHECK(!scene.cast(mid, Vec3::UnitX(), 3.0, &dist));
    // Wall normals face the interior.
    for (int i = 0; i < 6; ++i)
        CHECK(scene.planes[i].normal.dot(mid - scene.planes[i].center) > 0);
}

TEST_CASE("stationary platform yields zero rates and +g specific force") {
    TrajectorySpline spline(0.0, 1.0, 15);
    for (int i = 0; i < spline.num_knots(); ++i) spline.knot_p(i) = Vec3(2, 5, 5);
    GroundTruth truth = make_truth(5, std::make_shared<SplineTrajectoryModel>(spline), 0.0);
    SimOptions opts;
    opts.duration = 1.0;
    opts.gyro_sigma = opts.accel_sigma = opts.range_sigma = 0;
    opts.gyro_walk = opts.accel_walk = 0;
    opts.azimuth_step_deg = 30.0;
    Simulation sim = simulate(truth, PlaneScene::default_room(), opts);
    REQUIRE(sim.data.imu.size() == 400);
    for (const ImuSample& m : sim.data.imu) {
        CHECK(m.gyro.norm() < 1e-13);
        CHECK((m.accel - Vec3(0, 0, kGravityNorm)).norm() < 1e-12);
    }
    CHECK(sim.data.imu[1].t - sim.data.imu[0].t == doctest::Approx(1.0 / 400));
}

TEST_CASE("inertial stream equals the measurement model along the true path") {
    GroundTruth truth = make_truth(21, std::make_shared<SinusoidTrajectory>());
    SimOptions opts;
    opts.gyro_sigma = opts.accel_sigma = opts.range_sigma = 0;
    opts.gyro_walk = opts.accel_walk = 0;
    opts.azimuth_step_deg = 90.0;
    Simulation sim = simulate(truth, PlaneScene::default_room(), opts);
    REQUIRE(sim.data.imu.size() == 4000);
    REQUIRE(sim.data.scans.size() == 100);
    for (int i : {0, 7, 513, 1999, 3999}) {
        const ImuSample& m = sim.data.imu[i];
        TrajectorySample s = truth.imu_sample(m.t);
        CHECK((m.gyro - predict_gyro(truth.imu, truth.nav, s.omega)).norm() < 1e-13);
        CHECK((m.accel - predict_accel(truth.imu, truth.nav, s.q, s.acc)).norm() < 1e-12);
    }
}

TEST_CASE("noise-free returns reproduce scene planes exactly through the raw model") {
    GroundTruth truth = make_truth(33, std::make_shared<SinusoidTrajectory>());
    truth.time_offset = 0.004;
    PlaneScene scene = PlaneScene::default_room();
    SimOptions opts;
    opts.gyro_sigma = opts.accel_sigma = opts.range_sigma = 0;
    opts.gyro_walk = opts.accel_walk = 0;
    opts.azimuth_step_deg = 3.0;
    opts.time_offset = truth.time_offset;
    Simulation sim = simulate(truth, scene, opts);
    REQUIRE(sim.data.scans.size() == 100);

    int checked = 0;
    for (size_t j = 0; j < sim.data.scans.size(); j += 17) {
        const LidarScan& scan = sim.data.scans[j];
        CHECK(scan.stamp == doctest::Approx(0.1 * j).epsilon(1e-12));
        double prev = -1e9;
        for (const RawLidarPoint& pt : scan.raw) {
            CHECK(pt.t > prev);
            prev = pt.t;
            CHECK(pt.t >= scan.stamp);
            CHECK(pt.t < scan.stamp + opts.scan_period);
        }
        for (size_t k = 0; k < scan.raw.size(); k += 97) {
            const RawLidarPoint& pt = scan.raw[k];
            Vec3 p = reconstruct(truth, pt, truth.time_offset);
            CHECK(plane_misfit(scene, p) < 1e-9);
            // The numeric inverse recovers the raw measurement.
            Vec3 p_l = lidar_point_from_raw(truth.beams[pt.beam], pt.range, pt.azimuth);
            auto [rho, az] = lidar_raw_from_point(truth.beams[pt.beam], p_l);
            CHECK(std::abs(rho - pt.range) < 1e-9);
            CHECK(std::abs(az - pt.azimuth) < 1e-9);
            ++checked;
        }
        // Ignoring the injected clock offset leaves visible distortion.
        double off = 0;
        for (size_t k = 0; k < scan.raw.size(); k += 97)
            off = std::max(off, plane_misfit(scene, reconstruct(truth, scan.raw[k], 0.0)));
        CHECK(off > 1e-4);
    }
    CHECK(checked > 50);
}

TEST_CASE("range noise perturbs returns along the beam at the configured spread") {
    GroundTruth truth = make_truth(4, std::make_shared<SinusoidTrajectory>());
    PlaneScene scene = PlaneScene::default_room();
    SimOptions opts;
    opts.gyro_sigma = opts.accel_sigma = 0;
    opts.gyro_walk = opts.accel_walk = 0;
    opts.azimuth_step_deg = 6.0;
    Simulation sim = simulate(truth, scene, opts);
    int n = 0, within3 = 0;
    double worst = 0;
    for (const LidarScan& scan : sim.data.scans) {
        for (const RawLidarPoint& pt : scan.raw) {
            // Perpendicular plane distance <= full shift along the beam.
            double miss = plane_misfit(scene, reconstruct(truth, pt, 0.0));
            worst = std::max(worst, miss);
            within3 += miss < 3 * opts.range_sigma;
            ++n;
        }
    }
    REQUIRE(n > 20000);
    CHECK(within3 > 0.99 * n);
    CHECK(worst < 6 * opts.range_sigma);
}

TEST_CASE("scan distortion only appears when the platform moves within a scan") {
    SimOptions opts;
    opts.gyro_sigma = opts.accel_sigma = opts.range_sigma = 0;
    opts.gyro_walk = opts.accel_walk = 0;
    opts.azimuth_step_deg = 12.0;
    opts.duration = 2.0;

    GroundTruth truth = make_truth(8, std::make_shared<SinusoidTrajectory>());
    Simulation on = simulate(truth, PlaneScene::default_room(), opts);
    opts.distortion = false;
    Simulation off = simulate(truth, PlaneScene::default_room(), opts);

    // Rigid per-scan snapshots reconstruct cleanly with the stamp pose.
    PlaneScene scene = PlaneScene::default_room();
    const LidarScan& frozen = off.data.scans[5];
    Pose pose5 = off.scan_imu_poses[5] * truth.extrinsics.pose();
    double worst_off = 0, worst_on = 0;
    for (const RawLidarPoint& pt : frozen.raw) {
        Vec3 p = pose5.act(lidar_point_from_raw(truth.beams[pt.beam], pt.range, pt.azimuth));
        worst_off = std::max(worst_off, plane_misfit(scene, p));
    }
    for (const RawLidarPoint& pt : on.data.scans[5].raw) {
        Vec3 p = pose5.act(lidar_point_from_raw(truth.beams[pt.beam], pt.range, pt.azimuth));
        worst_on = std::max(worst_on, plane_misfit(scene, p));
    }
    CHECK(worst_off < 1e-9);
    CHECK(worst_on > 1e-3);
}

TEST_CASE("generation is bit-identical per seed and differs across seeds") {
    GroundTruth truth = make_truth(2, std::make_shared<Figure8Trajectory>());
    SimOptions opts;
    opts.duration = 1.5;
    opts.azimuth_step_deg = 10.0;
    opts.seed = 77;
    Simulation a = simulate(truth, PlaneScene::default_room(), opts);
    Simulation b = simulate(truth, PlaneScene::default_room(), opts);
    opts.seed = 78;
    Simulation c = simulate(truth, PlaneScene::default_room(), opts);

    REQUIRE(a.data.imu.size() == b.data.imu.size());
    bool same = true, differs = false;
    for (size_t i = 0; i < a.data.imu.size(); ++i) {
        same = same && a.data.imu[i].gyro == b.data.imu[i].gyro &&
               a.data.imu[i].accel == b.data.imu[i].accel;
        differs = differs || a.data.imu[i].gyro != c.data.imu[i].gyro;
    }
    CHECK(same);
    CHECK(differs);
    REQUIRE(a.data.scans.size() == b.data.scans.size());
    for (size_t j = 0; j < a.data.scans.size(); ++j) {
        REQUIRE(a.data.scans[j].raw.size() == b.data.scans[j].raw.size());
        for (size_t k = 0; k < a.data.scans[j].raw.size(); k += 41) {
            CHECK(a.data.scans[j].raw[k].range == b.data.scans[j].raw[k].range);
            CHECK(a.data.scans[j].raw[k].t == b.data.scans[j].raw[k].t);
        }
    }
}

TEST_CASE("noise-free data leaves the exact true state a fixed point of refinement") {
    // Ground truth that the estimator can represent exactly: a spline path.
    std::mt19937_64 rng(99);
    TrajectorySpline spline = TrajectorySpline::covering(0.0, 6.0, 0.5);
    Vec3 p(2, 5, 5);
    Quat q = Quat::Identity();
    for (int i = 0; i < spline.num_knots(); ++i) {
        spline.knot_p(i) = p;
        spline.knot_q(i) = q;
        p += testutil::random_vec3(rng, 0.25);
        q = q * so3_exp(testutil::random_rotvec(rng, 0.25));
    }
    spline.align_hemispheres();

    GroundTruth truth = make_truth(55, std::make_shared<SplineTrajectoryModel>(spline));
    truth.time_offset = 0.002;
    SimOptions opts;
    opts.duration = 5.5;
    opts.imu_rate = 100.0;
    opts.azimuth_step_deg = 8.0;
    opts.gyro_sigma = opts.accel_sigma = opts.range_sigma = 0;
    opts.gyro_walk = opts.accel_walk = 0;
    opts.time_offset = truth.time_offset;
    Simulation sim = simulate(truth, PlaneScene::default_room(), opts);
    REQUIRE(sim.data.imu.size() == 550);

    CalibState state;
    state.segments.emplace_back(spline);
    state.segments[0].nav = truth.nav;
    state.segments[0].time_offset = truth.time_offset;
    state.imu_intrinsics = truth.imu;
    state.beams = truth.beams;
    state.extrinsics = truth.extrinsics;

    std::vector<SegmentData> data{sim.data};

    OptimizeOptions oo;
    oo.outer_iterations = 3;
    oo.intrinsics_start = 0;
    oo.raw_correction_start = 0;
    oo.estimate_time_offset = true;
    oo.point_stride = 2;
    // Noise-free returns: cells clipping two walls are the only non-ideal
    // patches, and a strict planarity gate removes them.
    oo.map_planarity = 0.9;
    OptimizeReport rep = optimize(state, data, oo);

    CHECK(rep.converged);
    int n_res = 3 * (rep.final_system.n_gyro + rep.final_system.n_accel) +
                rep.final_system.n_plane;
    REQUIRE(n_res > 1000);
    CHECK(rep.final_cost < 1e-12 * n_res);
    CHECK((state.extrinsics.p_imu_lidar - truth.extrinsics.p_imu_lidar).norm() < 1e-9);
    CHECK(rotation_angle(state.extrinsics.q_imu_lidar, truth.extrinsics.q_imu_lidar) < 1e-9);
    CHECK(std::abs(state.segments[0].time_offset - truth.time_offset) < 1e-10);
    CHECK((state.segments[0].traj.knot_p(5) - spline.knot_p(5)).norm() < 1e-9);
    CHECK((state.imu_intrinsics.scale_gyro - truth.imu.scale_gyro).norm() < 1e-10);
    CHECK((state.beams[3].params() - truth.beams[3].params()).norm() < 1e-9);
}
