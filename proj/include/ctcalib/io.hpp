#pragma once

#include <string>
#include <vector>

#include "ctcalib/dataset.hpp"
#include "ctcalib/simulator.hpp"

namespace ctcalib {

// On-disk dataset layout, all diffable text:
//   imu.csv            t,wx,wy,wz,ax,ay,az   (s, rad/s, m/s^2)
//   scans/index.csv    file,stamp,mode       (mode: raw | cartesian)
//   scans/scan_*.csv   beam,t,range,azimuth  or  t,x,y,z
//   lidar.json         beam count and nominal elevations (public datasheet)
//   ground_truth.json  hidden truth for evaluation, written by the simulator
// Floats are printed with 17 significant digits so a reload is bit-exact.
// Readers and writers throw std::runtime_error naming the offending path.

void write_imu_csv(const std::string& path, const std::vector<ImuSample>& samples);
std::vector<ImuSample> read_imu_csv(const std::string& path);

void write_scans(const std::string& dir, const std::vector<LidarScan>& scans);
std::vector<LidarScan> read_scans(const std::string& dir);

// Nominal beam geometry; what a datasheet provides and the estimator starts
// from. Angles in radians.
struct LidarInfo {
    int num_beams = 0;
    std::vector<double> phi_nominal;

    std::vector<LidarBeamIntrinsics> nominal_beams() const;
};

void write_lidar_info(const std::string& path, const LidarInfo& info);
LidarInfo read_lidar_info(const std::string& path);

// Everything the evaluation side needs from the generating run: true
// calibration parameters plus the IMU pose at every scan stamp (the input of
// the perturbed-truth odometry mode).
struct GroundTruthFile {
    std::string trajectory;
    std::string mounting;
    ImuIntrinsics imu;
    ImuNavState nav;
    std::vector<LidarBeamIntrinsics> beams;
    Extrinsics extrinsics;
    double time_offset = 0;
    Vec3 degenerate_direction = Vec3::Zero();
    std::vector<double> scan_stamps;
    std::vector<Pose> scan_imu_poses;
};

void write_ground_truth(const std::string& path, const GroundTruthFile& truth);
GroundTruthFile read_ground_truth(const std::string& path);

}  // namespace ctcalib
