#include "ctcalib/simulator.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace ctcalib {

namespace {

constexpr double kPi = 3.14159265358979323846;
// Clock-skew pad: point times shifted by an injected offset may fall slightly
// outside the nominal recording span.
constexpr double kDomainPad = 0.25;

void check_domain(double t, double t_begin, double t_end) {
    if (t < t_begin - kDomainPad || t > t_end + kDomainPad) {
        throw std::out_of_range("trajectory query t=" + std::to_string(t) +
                                " outside [" + std::to_string(t_begin) + ", " +
                                std::to_string(t_end) + "]");
    }
}

// Quintic smoothstep with vanishing first and second derivatives at both
// ends; keeps blended trajectories twice differentiable.
void smoothstep5(double s, double* w, double* dw, double* ddw) {
    if (s <= 0) {
        *w = *dw = *ddw = 0;
        return;
    }
    if (s >= 1) {
        *w = 1;
        *dw = *ddw = 0;
        return;
    }
    *w = s * s * s * (10 + s * (-15 + 6 * s));
    *dw = 30 * s * s * (1 - s) * (1 - s);
    *ddw = 60 * s * (1 - s) * (1 - 2 * s);
}

}  // namespace

TrajectorySample euler_sample(const EulerKinematics& k) {
    TrajectorySample s;
    s.p = k.pos;
    s.vel = k.vel;
    s.acc = k.acc;
    s.q = Quat(euler_zyx_to_matrix(k.euler));
    const double sx = std::sin(k.euler.x()), cx = std::cos(k.euler.x());
    const double sy = std::sin(k.euler.y()), cy = std::cos(k.euler.y());
    // Body rates from intrinsic Z-Y-X Euler rates.
    Mat3 E;
    E << 1, 0, -sy,
         0, cx, sx * cy,
         0, -sx, cx * cy;
    s.omega = E * k.euler_rate;
    return s;
}

TrajectorySample SinusoidTrajectory::at(double t) const {
    check_domain(t, 0.0, duration_);
    const double a = kPi / 5.0, b = 4.0 * kPi / 5.0;
    EulerKinematics k;
    k.pos << 2 * std::cos(a * t) + 5, 1.5 * std::sin(a * t) + 5, 0.8 * std::cos(b * t) + 5;
    k.vel << -2 * a * std::sin(a * t), 1.5 * a * std::cos(a * t), -0.8 * b * std::sin(b * t);
    k.acc << -2 * a * a * std::cos(a * t), -1.5 * a * a * std::sin(a * t),
        -0.8 * b * b * std::cos(b * t);
    k.euler << 0.4 * std::cos(t), 0.6 * std::sin(t), 0.7 * t;
    k.euler_rate << -0.4 * std::sin(t), 0.6 * std::cos(t), 0.7;
    return euler_sample(k);
}

TrajectorySample Figure8Trajectory::at(double t) const {
    check_domain(t, 0.0, duration_);
    const double a = kPi / 5.0;
    EulerKinematics k;
    k.pos << 2 * std::cos(a * t), 0.75 * std::sin(2 * a * t) + 5, 2;
    k.vel << -2 * a * std::sin(a * t), 1.5 * a * std::cos(2 * a * t), 0;
    k.acc << -2 * a * a * std::cos(a * t), -3 * a * a * std::sin(2 * a * t), 0;
    k.euler << 0, 0, 0.4 * std::sin(t);
    k.euler_rate << 0, 0, 0.4 * std::cos(t);
    return euler_sample(k);
}

TrajectorySample AlternatingTrajectory::at(double t) const {
    check_domain(t, t_begin(), t_end());
    const double b = 2.0 * kPi / 30.0;
    EulerKinematics k;
    // Planar cruise, always present.
    k.pos << 2 * std::cos(b * t), 0.75 * std::sin(2 * b * t) + 5, 2;
    k.vel << -2 * b * std::sin(b * t), 1.5 * b * std::cos(2 * b * t), 0;
    k.acc << -2 * b * b * std::cos(b * t), -3 * b * b * std::sin(2 * b * t), 0;
    k.euler << 0, 0, 0.5 * std::sin(b * t);
    k.euler_rate << 0, 0, 0.5 * b * std::cos(b * t);

    int win = static_cast<int>(std::floor(t / window_));
    if (win < 0) win = 0;
    if (win >= num_windows_) win = num_windows_ - 1;
    if (!window_excited(win)) return euler_sample(k);

    // Blend weight ramps over the leading and trailing sixth of the window.
    const double margin = window_ / 6.0;
    const double x = t - win * window_;
    double w, dw, ddw;
    if (x < window_ / 2) {
        smoothstep5(x / margin, &w, &dw, &ddw);
        dw /= margin;
        ddw /= margin * margin;
    } else {
        smoothstep5((window_ - x) / margin, &w, &dw, &ddw);
        dw /= -margin;
        ddw /= margin * margin;
    }

    // Excited overlay: vertical bobbing plus three-axis rotation.
    Vec3 pd(0, 0, 0.6 * std::sin(2 * t));
    Vec3 pdd(0, 0, 1.2 * std::cos(2 * t));
    Vec3 pddd(0, 0, -2.4 * std::sin(2 * t));
    Vec3 ed(0.35 * std::sin(1.3 * t), 0.45 * std::sin(1.7 * t), 0.5 * std::sin(2.3 * t));
    Vec3 edd(0.35 * 1.3 * std::cos(1.3 * t), 0.45 * 1.7 * std::cos(1.7 * t),
             0.5 * 2.3 * std::cos(2.3 * t));

    k.pos += w * pd;
    k.vel += dw * pd + w * pdd;
    k.acc += ddw * pd + 2 * dw * pdd + w * pddd;
    k.euler += w * ed;
    k.euler_rate += dw * ed + w * edd;
    return euler_sample(k);
}

TrajectorySample SplineTrajectoryModel::at(double t) const {
    SplineEval e = spline_.eval(t, TrajectorySpline::kPose | TrajectorySpline::kDerivatives);
    TrajectorySample s;
    s.q = e.q;
    s.p = e.p;
    s.vel = e.vel;
    s.acc = e.acc;
    s.omega = e.omega;
    return s;
}

Mat3 mounting_case(char c) {
    const double a = 30.0 * kPi / 180.0;
    Mat3 ry = euler_zyx_to_matrix(Vec3(0, a, 0));
    switch (c) {
        case 'A':
            return Mat3::Identity();
        case 'B':
            return ry;
        case 'C':
            return euler_zyx_to_matrix(Vec3(-a, 0, 0)) * ry;
        default:
            throw std::invalid_argument("mounting_case: expected 'A', 'B' or 'C'");
    }
}

ScenePlane make_scene_plane(const Vec3& center, const Vec3& normal, const Vec3& u_hint,
                            double half_u, double half_v, const Vec3& interior_hint) {
    ScenePlane s;
    s.normal = normal.normalized();
    if (s.normal.dot(interior_hint - center) < 0) s.normal = -s.normal;
    s.center = center;
    s.d = -s.normal.dot(center);
    Vec3 u = u_hint - u_hint.dot(s.normal) * s.normal;
    if (u.norm() < 1e-9) throw std::invalid_argument("make_scene_plane: u_hint parallel to normal");
    s.axis_u = u.normalized();
    s.axis_v = s.normal.cross(s.axis_u);
    s.half_u = half_u;
    s.half_v = half_v;
    return s;
}

PlaneScene PlaneScene::default_room() {
    PlaneScene scene;
    const Vec3 mid(2, 5, 5);
    const Vec3 ex = Vec3::UnitX(), ey = Vec3::UnitY(), ez = Vec3::UnitZ();
    // Walls of the [-4,8] x [0,10] x [0,10] room.
    scene.planes.push_back(make_scene_plane(Vec3(-4, 5, 5), ex, ey, 5, 5, mid));
    scene.planes.push_back(make_scene_plane(Vec3(8, 5, 5), ex, ey, 5, 5, mid));
    scene.planes.push_back(make_scene_plane(Vec3(2, 0, 5), ey, ex, 6, 5, mid));
    scene.planes.push_back(make_scene_plane(Vec3(2, 10, 5), ey, ex, 6, 5, mid));
    scene.planes.push_back(make_scene_plane(Vec3(2, 5, 0), ez, ex, 6, 5, mid));
    scene.planes.push_back(make_scene_plane(Vec3(2, 5, 10), ez, ex, 6, 5, mid));
    // Tilted interior panels, kept clear of the benchmark paths.
    scene.planes.push_back(
        make_scene_plane(Vec3(6.5, 2.0, 3.0), Vec3(-1, 1, 0.5), ez, 1.2, 1.2, mid));
    scene.planes.push_back(
        make_scene_plane(Vec3(6.5, 8.0, 7.0), Vec3(-1, -1, -0.5), ez, 1.2, 1.2, mid));
    scene.planes.push_back(
        make_scene_plane(Vec3(-2.5, 2.5, 4.0), Vec3(1, 0.5, -0.3), ez, 1.2, 1.2, mid));
    scene.planes.push_back(
        make_scene_plane(Vec3(-2.5, 7.5, 6.0), Vec3(1, -0.5, 0.4), ez, 1.2, 1.2, mid));
    scene.planes.push_back(
        make_scene_plane(Vec3(2.0, 1.0, 8.0), Vec3(0, 1, -1), ex, 1.4, 1.4, mid));
    scene.planes.push_back(
        make_scene_plane(Vec3(2.0, 9.0, 1.2), Vec3(0.3, -1, 0.8), ex, 1.4, 1.4, mid));
    return scene;
}

bool PlaneScene::cast(const Vec3& origin, const Vec3& dir, double max_range, double* dist,
                      int* plane_index) const {
    double best = max_range;
    int best_idx = -1;
    for (size_t i = 0; i < planes.size(); ++i) {
        const ScenePlane& s = planes[i];
        double denom = s.normal.dot(dir);
        if (std::abs(denom) < 1e-12) continue;
        double t = -(s.normal.dot(origin) + s.d) / denom;
        if (t < 0.05 || t >= best) continue;
        Vec3 hit = origin + t * dir;
        Vec3 rel = hit - s.center;
        if (std::abs(rel.dot(s.axis_u)) > s.half_u || std::abs(rel.dot(s.axis_v)) > s.half_v)
            continue;
        best = t;
        best_idx = static_cast<int>(i);
    }
    if (best_idx < 0) return false;
    *dist = best;
    if (plane_index) *plane_index = best_idx;
    return true;
}

TrajectorySample GroundTruth::imu_sample(double t) const {
    TrajectorySample s = vehicle->at(t);
    // The IMU sits at the vehicle origin, rotated by the mounting: R_WI =
    // R_WV * M^T, so body rates map through M.
    s.q = Quat(Mat3(s.q.toRotationMatrix() * mounting.transpose()));
    s.omega = mounting * s.omega;
    return s;
}

Pose GroundTruth::imu_pose(double t) const {
    TrajectorySample s = imu_sample(t);
    return Pose(s.q, s.p);
}

GroundTruth sample_random_calibration(unsigned seed, int num_beams, double sigma_scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double deg = kPi / 180.0;
    auto draw = [&](double sigma) { return sigma_scale * sigma * gauss(rng); };

    GroundTruth truth;
    truth.beams.resize(num_beams);
    for (int b = 0; b < num_beams; ++b) {
        LidarBeamIntrinsics& beam = truth.beams[b];
        beam.phi_nominal = (-15.0 + 30.0 * b / std::max(1, num_beams - 1)) * deg;
        double dphi = draw(0.1 * deg);
        double dtheta = draw(0.05 * deg);
        double v = draw(0.005);
        double h = draw(0.005);
        if (b > 0) {
            beam.delta_phi = dphi;
            beam.delta_theta = dtheta;
            beam.vert_offset = v;
            beam.horiz_offset = h;
        }
        beam.scale = 1.0 + draw(5e-5);
        beam.delta_rho = draw(0.01);
    }

    ImuIntrinsics& imu = truth.imu;
    for (int i = 0; i < 3; ++i) {
        imu.scale_gyro(i) = 1.0 + draw(1e-4);
        imu.scale_accel(i) = 1.0 + draw(1e-3);
        imu.misalign_gyro(i) = draw(0.05 * deg);
        imu.misalign_accel(i) = draw(0.05 * deg);
    }
    imu.q_gyro_imu =
        Quat(euler_zyx_to_matrix(sigma_scale * Vec3(0.8 * deg, 0.5 * deg, 0.3 * deg)));

    truth.nav.gravity = Vec3(0, 0, -kGravityNorm);
    for (int i = 0; i < 3; ++i) {
        truth.nav.bias_gyro(i) = draw(2e-3);
        truth.nav.bias_accel(i) = draw(2e-2);
    }

    truth.extrinsics.p_imu_lidar = Vec3(0.3, 0.15, 0.05);
    truth.extrinsics.q_imu_lidar =
        Quat(euler_zyx_to_matrix(Vec3(1.0 * deg, 2.0 * deg, 5.0 * deg)));
    return truth;
}

void apply_mounting(GroundTruth& truth, char c) {
    truth.mounting = mounting_case(c);
    truth.mounting_label = c;
    truth.degenerate_direction =
        (truth.vehicle && truth.vehicle->planar()) ? Vec3(truth.mounting * Vec3::UnitZ())
                                                   : Vec3::Zero();
}

Simulation simulate(const GroundTruth& truth, const PlaneScene& scene, const SimOptions& opts) {
    if (!truth.vehicle) throw std::invalid_argument("simulate: ground truth has no trajectory");
    if (truth.beams.empty()) throw std::invalid_argument("simulate: ground truth has no beams");

    Simulation sim;
    sim.truth = truth;
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto gauss3 = [&]() { return Vec3(gauss(rng), gauss(rng), gauss(rng)); };

    const double t0 = truth.vehicle->t_begin();
    const Mat3 gyro_map = truth.imu.gyro_map();
    const Mat3 accel_map = truth.imu.accel_map();

    // IMU stream on the reference clock with slowly wandering biases.
    const double dt = 1.0 / opts.imu_rate;
    const int n_imu = static_cast<int>(std::round(opts.duration * opts.imu_rate));
    Vec3 bw = truth.nav.bias_gyro;
    Vec3 ba = truth.nav.bias_accel;
    sim.data.imu.reserve(n_imu);
    for (int i = 0; i < n_imu; ++i) {
        double t = t0 + i * dt;
        TrajectorySample s = truth.imu_sample(t);
        ImuSample m;
        m.t = t;
        m.gyro = gyro_map * s.omega + bw + opts.gyro_sigma * gauss3();
        Vec3 specific = s.q.conjugate() * (s.acc - truth.nav.gravity);
        m.accel = accel_map * specific + ba + opts.accel_sigma * gauss3();
        sim.data.imu.push_back(m);
        bw += opts.gyro_walk * std::sqrt(dt) * gauss3();
        ba += opts.accel_walk * std::sqrt(dt) * gauss3();
    }

    // Scans: stamps live on the LiDAR clock, which reads tau when the
    // reference clock reads tau + t_c.
    const Pose ext = truth.extrinsics.pose();
    const int n_az = std::max(1, static_cast<int>(std::round(360.0 / opts.azimuth_step_deg)));
    const int n_beams = static_cast<int>(truth.beams.size());
    const int n_scans = static_cast<int>(std::floor(opts.duration / opts.scan_period + 1e-9));
    const int points_per_rev = n_az * n_beams;

    // Ray geometry per (azimuth, beam): the projection model is affine in the
    // raw range, so two evaluations give origin and direction exactly.
    std::vector<Vec3> ray_origin(points_per_rev), ray_dir(points_per_rev);
    std::vector<double> ray_scale(n_beams);
    for (int b = 0; b < n_beams; ++b) ray_scale[b] = truth.beams[b].scale;
    for (int ia = 0; ia < n_az; ++ia) {
        double az = 2.0 * kPi * ia / n_az;
        for (int b = 0; b < n_beams; ++b) {
            Vec3 p1 = lidar_point_from_raw(truth.beams[b], 1.0, az);
            Vec3 p2 = lidar_point_from_raw(truth.beams[b], 2.0, az);
            Vec3 d = p2 - p1;  // = scale * unit direction
            ray_dir[ia * n_beams + b] = d / ray_scale[b];
            ray_origin[ia * n_beams + b] = p1 - d;
        }
    }

    sim.data.scans.reserve(n_scans);
    for (int j = 0; j < n_scans; ++j) {
        double tau = t0 + j * opts.scan_period;  // LiDAR clock
        LidarScan scan;
        scan.stamp = tau;
        scan.raw.reserve(points_per_rev / 4);
        Pose pose_at_stamp;
        {
            TrajectorySample s = truth.imu_sample(tau + opts.time_offset);
            pose_at_stamp = Pose(s.q, s.p) * ext;
        }
        sim.scan_stamps.push_back(tau);
        sim.scan_imu_poses.push_back(truth.imu_pose(tau + opts.time_offset));
        for (int ia = 0; ia < n_az; ++ia) {
            for (int b = 0; b < n_beams; ++b) {
                int idx = ia * n_beams + b;
                double frac = static_cast<double>(idx) / points_per_rev;
                double t_point = tau + frac * opts.scan_period;
                Pose lidar_pose = pose_at_stamp;
                if (opts.distortion) {
                    TrajectorySample s = truth.imu_sample(t_point + opts.time_offset);
                    lidar_pose = Pose(s.q, s.p) * ext;
                }
                Vec3 origin_w = lidar_pose.act(ray_origin[idx]);
                Vec3 dir_w = lidar_pose.q * ray_dir[idx];
                double dist;
                if (!scene.cast(origin_w, dir_w, opts.max_range, &dist)) continue;
                RawLidarPoint pt;
                pt.beam = b;
                pt.t = t_point;
                pt.azimuth = 2.0 * kPi * ia / n_az;
                pt.range = dist / ray_scale[b] + opts.range_sigma * gauss(rng);
                if (pt.range <= 0.05) continue;
                scan.raw.push_back(pt);
            }
        }
        sim.data.scans.push_back(std::move(scan));
    }
    return sim;
}

}  // namespace ctcalib
