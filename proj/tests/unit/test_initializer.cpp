#include <cmath>
#include <random>

#include "doctest.h"
#include "ctcalib/initializer.hpp"
#include "ctcalib/simulator.hpp"
#include "support/test_util.hpp"

using namespace ctcalib;

namespace {

const double kDeg = 3.14159265358979323846 / 180.0;

// Random rotation spline with the first control point pinned to the identity.
TrajectorySpline random_rotation_spline(std::mt19937_64& rng, double t_end, double dt,
                                        double step) {
    TrajectorySpline s = TrajectorySpline::covering(0.0, t_end, dt);
    Quat q = Quat::Identity();
    for (int i = 0; i < s.num_knots(); ++i) {
        s.knot_q(i) = q;
        q = q * so3_exp(testutil::random_rotvec(rng, step));
    }
    s.align_hemispheres();
    return s;
}

std::vector<ImuSample> gyro_from_spline(const TrajectorySpline& s, double rate,
                                        double noise = 0.0, unsigned seed = 0) {
    std::mt19937_64 rng(seed);
    std::vector<ImuSample> imu;
    for (double t = s.t_min(); t < s.t_max() - 1e-9; t += 1.0 / rate) {
        ImuSample m;
        m.t = t;
        m.gyro = s.angular_velocity_body(t) + testutil::random_vec3(rng, noise);
        imu.push_back(m);
    }
    return imu;
}

std::vector<RotationPair> synthetic_pairs(std::mt19937_64& rng, const Quat& q_il, int n,
                                          double noise_angle) {
    std::vector<RotationPair> pairs;
    for (int i = 0; i < n; ++i) {
        RotationPair pr;
        pr.q_lidar = so3_exp(testutil::random_rotvec(rng, 0.6));
        pr.q_imu = q_il * pr.q_lidar * q_il.conjugate();
        if (noise_angle > 0) pr.q_imu = pr.q_imu * so3_exp(testutil::random_rotvec(rng, noise_angle));
        pairs.push_back(pr);
    }
    return pairs;
}

}  // namespace

TEST_CASE("zero-spread perturbed odometry reproduces truth anchored at the first scan") {
    std::mt19937_64 rng(3);
    std::vector<double> stamps;
    std::vector<Pose> world;
    Pose w0(testutil::random_quat(rng), Vec3(4, -1, 2));
    for (int k = 0; k < 12; ++k) {
        stamps.push_back(0.1 * k);
        world.push_back(Pose(w0.q * so3_exp(testutil::random_rotvec(rng, 0.2)),
                             w0.p + testutil::random_vec3(rng, 0.5)));
    }
    world[0] = w0;
    std::vector<OdometryPose> odom = perturbed_odometry(stamps, world, 0.0, 0.0, 9);
    REQUIRE(odom.size() == 12);
    CHECK(odom[0].T.p.norm() < 1e-15);
    CHECK(testutil::quat_distance(odom[0].T.q, Quat::Identity()) < 1e-15);
    for (int k = 0; k < 12; ++k) {
        Pose expect = w0.inverse() * world[k];
        CHECK((odom[k].T.p - expect.p).norm() < 1e-12);
        CHECK(testutil::quat_distance(odom[k].T.q, expect.q) < 1e-12);
        CHECK(!odom[k].flagged);
    }
    // Nonzero spread keeps the anchor exact and is deterministic per seed.
    std::vector<OdometryPose> a = perturbed_odometry(stamps, world, 0.01, 0.02, 5);
    std::vector<OdometryPose> b = perturbed_odometry(stamps, world, 0.01, 0.02, 5);
    CHECK(a[0].T.p.norm() == 0.0);
    CHECK((a[4].T.p - b[4].T.p).norm() == 0.0);
    CHECK((a[4].T.p - odom[4].T.p).norm() > 1e-4);
}

TEST_CASE("rotation spline fit to silent gyro stays at the identity") {
    TrajectorySpline s = TrajectorySpline::covering(0.0, 4.0, 0.5);
    std::vector<ImuSample> imu;
    for (double t = 0; t < 4.0; t += 0.01) imu.push_back({t, Vec3::Zero(), Vec3::Zero()});
    init_rotation_spline(s, imu);
    for (int i = 0; i < s.num_knots(); ++i)
        CHECK(testutil::quat_distance(s.knot_q(i), Quat::Identity()) < 1e-12);
}

TEST_CASE("rotation spline fit recovers a constant turn rate in closed form") {
    TrajectorySpline s = TrajectorySpline::covering(0.0, 10.0, 0.5);
    const Vec3 w(0, 0, 0.5);
    std::vector<ImuSample> imu;
    for (double t = 0; t < 10.0; t += 1.0 / 400) imu.push_back({t, w, Vec3::Zero()});
    init_rotation_spline(s, imu);
    for (double t : {0.7, 2.3, 5.0, 8.6, 9.3}) {
        CHECK(rotation_angle(s.orientation(t), so3_exp(t * w)) < 1e-3);
    }
}

TEST_CASE("rotation spline fit is exact for spline-representable rates") {
    std::mt19937_64 rng(17);
    TrajectorySpline truth = random_rotation_spline(rng, 6.0, 0.5, 0.25);
    std::vector<ImuSample> imu = gyro_from_spline(truth, 400.0);
    TrajectorySpline fit = TrajectorySpline::covering(0.0, 6.0, 0.5);
    init_rotation_spline(fit, imu, 30);
    REQUIRE(fit.num_knots() == truth.num_knots());
    // Rates only pin orientation relative to the start.
    const Quat a0 = truth.orientation(0.0);
    CHECK(rotation_angle(fit.orientation(0.0), Quat::Identity()) < 1e-12);
    for (double t = 0.0; t < 5.99; t += 0.21)
        CHECK(rotation_angle(fit.orientation(t), a0.conjugate() * truth.orientation(t)) < 1e-9);
}

TEST_CASE("rotation spline fit tolerates gyro noise") {
    std::mt19937_64 rng(29);
    TrajectorySpline truth = random_rotation_spline(rng, 10.0, 0.5, 0.3);
    std::vector<ImuSample> imu = gyro_from_spline(truth, 400.0, 0.01, 71);
    TrajectorySpline fit = TrajectorySpline::covering(0.0, 10.0, 0.5);
    init_rotation_spline(fit, imu, 20);
    const Quat a0 = truth.orientation(0.0);
    double worst = 0;
    for (double t = 0.3; t < 9.7; t += 0.13)
        worst = std::max(worst,
                         rotation_angle(fit.orientation(t), a0.conjugate() * truth.orientation(t)));
    CHECK(worst < 0.5 * kDeg);
}

TEST_CASE("rotation spline fit requires more samples than control points") {
    TrajectorySpline s = TrajectorySpline::covering(0.0, 4.0, 0.5);
    std::vector<ImuSample> imu(5, ImuSample{1.0, Vec3::Zero(), Vec3::Zero()});
    CHECK_THROWS_AS(init_rotation_spline(s, imu), std::invalid_argument);
}

TEST_CASE("hand-eye rotation: aligned sensors give the identity") {
    std::mt19937_64 rng(5);
    std::vector<RotationPair> pairs = synthetic_pairs(rng, Quat::Identity(), 10, 0.0);
    Quat q = init_extrinsic_rotation(pairs);
    CHECK(testutil::quat_distance(q, Quat::Identity()) < 1e-12);
}

TEST_CASE("hand-eye rotation: exact recovery from clean pairs") {
    std::mt19937_64 rng(6);
    const Quat q_il = so3_exp(Vec3(0.1, -0.25, 0.4));
    std::vector<RotationPair> pairs = synthetic_pairs(rng, q_il, 12, 0.0);
    Quat q = init_extrinsic_rotation(pairs);
    CHECK(rotation_angle(q, q_il) < 1e-10);

    // The returned vector is the smallest singular direction of the stack.
    MatX A(4 * pairs.size(), 4);
    for (size_t k = 0; k < pairs.size(); ++k)
        A.block<4, 4>(4 * k, 0) =
            quat_left_matrix(pairs[k].q_imu) - quat_right_matrix(pairs[k].q_lidar);
    Eigen::JacobiSVD<MatX> svd(A);
    CHECK((A * quat_vec4(q)).norm() == doctest::Approx(svd.singularValues()(3)).epsilon(1e-9));
    CHECK(q.w() >= 0.0);
}

TEST_CASE("hand-eye rotation: small per-pair noise keeps sub-half-degree accuracy") {
    std::mt19937_64 rng(7);
    const Quat q_il = so3_exp(Vec3(-0.3, 0.15, 0.2));
    std::vector<RotationPair> pairs = synthetic_pairs(rng, q_il, 50, 0.2 * kDeg);
    CHECK(rotation_angle(init_extrinsic_rotation(pairs), q_il) < 0.5 * kDeg);
}

TEST_CASE("hand-eye rotation: single-axis motion is rejected as degenerate") {
    std::mt19937_64 rng(8);
    const Quat q_il = so3_exp(Vec3(0.1, 0.2, -0.1));
    std::vector<RotationPair> pairs;
    std::uniform_real_distribution<double> u(0.1, 0.5);
    for (int i = 0; i < 20; ++i) {
        RotationPair pr;
        pr.q_lidar = so3_exp(Vec3(0, 0, u(rng)));
        pr.q_imu = q_il * pr.q_lidar * q_il.conjugate();
        pairs.push_back(pr);
    }
    CHECK_THROWS_AS(init_extrinsic_rotation(pairs), std::runtime_error);
}

TEST_CASE("hand-eye rotation: near-still pairs are screened out") {
    std::mt19937_64 rng(9);
    std::vector<RotationPair> pairs;
    for (int i = 0; i < 30; ++i) {
        RotationPair pr;
        pr.q_lidar = so3_exp(testutil::random_rotvec(rng, 0.3 * kDeg));
        pr.q_imu = pr.q_lidar;
        pairs.push_back(pr);
    }
    CHECK_THROWS_AS(init_extrinsic_rotation(pairs), std::runtime_error);
}

TEST_CASE("rotation pairs are invariant to re-anchoring either sequence") {
    std::mt19937_64 rng(12);
    TrajectorySpline spline = random_rotation_spline(rng, 4.0, 0.5, 0.2);
    std::vector<OdometryPose> odom;
    for (int k = 0; k < 8; ++k) {
        OdometryPose op;
        op.tau = 0.5 * k;
        op.T = Pose(testutil::random_quat(rng), testutil::random_vec3(rng));
        odom.push_back(op);
    }
    std::vector<OdometryPose> re = odom;
    const Pose C(testutil::random_quat(rng), Vec3(1, 2, 3));
    for (OdometryPose& op : re) op.T = C * op.T;
    auto a = make_rotation_pairs(spline, odom);
    auto b = make_rotation_pairs(spline, re);
    REQUIRE(a.size() == b.size());
    REQUIRE(a.size() == 7);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(testutil::quat_distance(canonical(a[i].q_lidar), canonical(b[i].q_lidar)) < 1e-12);
        CHECK(testutil::quat_distance(a[i].q_imu, b[i].q_imu) < 1e-15);
    }
    // Flagged poses contribute no pair.
    re[3].flagged = true;
    CHECK(make_rotation_pairs(spline, re).size() == 5);
}

TEST_CASE("translation fit of static odometry with identity extrinsics is zero") {
    TrajectorySpline s = TrajectorySpline::covering(0.0, 3.0, 0.5);
    std::vector<OdometryPose> odom;
    for (int k = 0; k < 30; ++k) odom.push_back({0.1 * k, Pose(), false});
    init_translation_spline(s, odom, Quat::Identity());
    for (int i = 0; i < s.num_knots(); ++i) CHECK(s.knot_p(i).norm() < 1e-9);
}

TEST_CASE("translation fit reproduces the true path from clean odometry") {
    GroundTruth truth = sample_random_calibration(14);
    truth.vehicle = std::make_shared<SinusoidTrajectory>();
    SimOptions so;
    so.gyro_sigma = so.accel_sigma = so.range_sigma = 0;
    so.gyro_walk = so.accel_walk = 0;
    so.azimuth_step_deg = 90.0;
    Simulation sim = simulate(truth, PlaneScene::default_room(), so);

    std::vector<Pose> world_lidar;
    for (const Pose& T : sim.scan_imu_poses) world_lidar.push_back(T * truth.extrinsics.pose());
    std::vector<OdometryPose> odom =
        perturbed_odometry(sim.scan_stamps, world_lidar, 0.0, 0.0, 1);

    // Orientation part of the state, anchored at the first scan's IMU pose.
    const Pose anchor = sim.scan_imu_poses.front();
    TrajectorySpline s = TrajectorySpline::covering(0.0, 10.0, 0.1);
    std::vector<double> qt;
    std::vector<Quat> qs;
    for (double t = 0; t < 9.99; t += 0.05) {
        qt.push_back(t);
        qs.push_back(anchor.q.conjugate() * truth.imu_pose(t).q);
    }
    fit_orientation_knots(s, qt, qs);

    init_translation_spline(s, odom, truth.extrinsics.q_imu_lidar, truth.extrinsics.p_imu_lidar);

    double se = 0;
    int n = 0;
    for (double t = 0.2; t < 9.7; t += 0.1) {
        Vec3 expect = anchor.q.conjugate() * (truth.imu_pose(t).p - anchor.p);
        se += (s.position(t) - expect).squaredNorm();
        ++n;
    }
    CHECK(std::sqrt(se / n) < 0.01);
}

TEST_CASE("plane registration of a static platform stays at the identity") {
    TrajectorySpline spline(0.0, 1.0, 8);
    for (int i = 0; i < spline.num_knots(); ++i) spline.knot_p(i) = Vec3(2, 5, 5);
    GroundTruth truth = sample_random_calibration(5, 16, 0.0);
    truth.vehicle = std::make_shared<SplineTrajectoryModel>(spline);
    SimOptions so;
    so.duration = 0.5;
    so.gyro_sigma = so.accel_sigma = so.range_sigma = 0;
    so.gyro_walk = so.accel_walk = 0;
    so.azimuth_step_deg = 4.0;
    Simulation sim = simulate(truth, PlaneScene::default_room(), so);
    REQUIRE(sim.data.scans.size() == 5);

    IcpOdometryOptions io;
    io.beams = truth.beams;
    std::vector<OdometryPose> odom = plane_icp_odometry(sim.data.scans, io);
    REQUIRE(odom.size() == 5);
    for (const OdometryPose& op : odom) {
        // Cells clipping two walls bias the fitted planes slightly, so the
        // equilibrium is identity only to sub-millimetre level.
        CHECK(op.T.p.norm() < 1e-3);
        CHECK(so3_log(op.T.q).norm() < 1e-4);
        CHECK(!op.flagged);
    }
}

TEST_CASE("plane registration tracks an excited pass with small drift") {
    GroundTruth truth = sample_random_calibration(23);
    truth.vehicle = std::make_shared<SinusoidTrajectory>();
    SimOptions so;
    so.gyro_sigma = so.accel_sigma = so.range_sigma = 0;
    so.gyro_walk = so.accel_walk = 0;
    so.azimuth_step_deg = 3.0;
    Simulation sim = simulate(truth, PlaneScene::default_room(), so);

    IcpOdometryOptions io;
    io.beams = truth.beams;
    io.point_stride = 2;
    std::vector<OdometryPose> odom = plane_icp_odometry(sim.data.scans, io);

    double path = 0;
    for (double t = 0; t < 9.9 - 1e-9; t += 0.01)
        path += (truth.vehicle->at(t + 0.01).p - truth.vehicle->at(t).p).norm();
    REQUIRE(path > 10.0);

    const Pose l0 = sim.scan_imu_poses.front() * truth.extrinsics.pose();
    int flagged = 0;
    double worst = 0;
    for (size_t k = 0; k < odom.size(); ++k) {
        if (odom[k].flagged) {
            ++flagged;
            continue;
        }
        Pose expect = l0.inverse() * (sim.scan_imu_poses[k] * truth.extrinsics.pose());
        worst = std::max(worst, (odom[k].T.p - expect.p).norm());
    }
    CHECK(flagged < 5);
    CHECK(worst < 0.02 * path);
}

TEST_CASE("registration flags scans it cannot place") {
    GroundTruth truth = sample_random_calibration(31);
    truth.vehicle = std::make_shared<SinusoidTrajectory>();
    SimOptions so;
    so.duration = 6.0;
    so.gyro_sigma = so.accel_sigma = so.range_sigma = 0;
    so.gyro_walk = so.accel_walk = 0;
    so.azimuth_step_deg = 4.0;
    Simulation sim = simulate(truth, PlaneScene::default_room(), so);
    // Teleport: keep only two scans half the room apart.
    std::vector<LidarScan> jumpy = {sim.data.scans[0], sim.data.scans[45]};

    IcpOdometryOptions io;
    io.beams = truth.beams;
    io.divergence_rms = 0.01;
    std::vector<OdometryPose> odom = plane_icp_odometry(jumpy, io);
    REQUIRE(odom.size() == 2);
    CHECK(odom[1].flagged);
}

TEST_CASE("derotation removes in-scan orientation change") {
    // Spin in place: rotation-only trajectory makes derotated scans rigid.
    std::mt19937_64 rng(44);
    TrajectorySpline spline = random_rotation_spline(rng, 4.0, 0.5, 0.2);
    for (int i = 0; i < spline.num_knots(); ++i) spline.knot_p(i) = Vec3(2, 5, 5);
    GroundTruth truth = sample_random_calibration(61);
    truth.vehicle = std::make_shared<SplineTrajectoryModel>(spline);
    // Keep the LiDAR origin truly still: a lever arm would add translational
    // distortion that rotation compensation cannot remove.
    truth.extrinsics.p_imu_lidar = Vec3::Zero();
    SimOptions so;
    so.duration = 3.5;
    so.gyro_sigma = so.accel_sigma = so.range_sigma = 0;
    so.gyro_walk = so.accel_walk = 0;
    so.azimuth_step_deg = 6.0;
    PlaneScene scene = PlaneScene::default_room();
    Simulation sim = simulate(truth, scene, so);

    // Rotation state in the first-scan LiDAR frame, on the truth knot grid so
    // the fit is exact.
    const Quat q_il = truth.extrinsics.q_imu_lidar;
    TrajectorySpline rot = TrajectorySpline::covering(0.0, 3.5, 0.5);
    std::vector<double> qt;
    std::vector<Quat> qs;
    const Quat a0 = truth.imu_pose(0.0).q;
    for (double t = 0; t < 3.49; t += 0.02) {
        qt.push_back(t);
        qs.push_back(a0.conjugate() * truth.imu_pose(t).q);
    }
    fit_orientation_knots(rot, qt, qs, 25);

    std::vector<LidarScan> flat = derotate_scans(sim.data.scans, truth.beams, rot, q_il);
    REQUIRE(flat.size() == sim.data.scans.size());
    const LidarScan& scan = flat[20];
    REQUIRE(scan.cartesian);
    Pose stamp_pose = sim.scan_imu_poses[20] * truth.extrinsics.pose();
    double worst = 0, worst_raw = 0;
    auto misfit = [&](const Vec3& p) {
        double best = 1e9;
        for (const ScenePlane& s : scene.planes)
            best = std::min(best, std::abs(point_to_plane(s.normal, s.d, p)));
        return best;
    };
    for (size_t i = 0; i < scan.xyz.size(); i += 7) {
        worst = std::max(worst, misfit(stamp_pose.act(scan.xyz[i])));
        const RawLidarPoint& rp = sim.data.scans[20].raw[i];
        Vec3 praw = lidar_point_from_raw(truth.beams[rp.beam], rp.range, rp.azimuth);
        worst_raw = std::max(worst_raw, misfit(stamp_pose.act(praw)));
    }
    CHECK(worst < 5e-4);       // spline fit error only
    CHECK(worst_raw > 5e-2);   // raw scans are visibly distorted
}
