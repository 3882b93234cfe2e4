#pragma once

#include <vector>

#include "ctcalib/sensor_models.hpp"

namespace ctcalib {

// Measurements of one contiguous recording span. IMU timestamps are the
// reference clock; scan stamps live on the LiDAR clock.
struct SegmentData {
    std::vector<ImuSample> imu;
    std::vector<LidarScan> scans;

    double t_begin() const;
    double t_end() const;
};

struct CalibDataset {
    std::vector<SegmentData> segments;
};

// Cuts [t_begin, t_end) windows out of one recording; scans are assigned by
// stamp, IMU samples by timestamp. Windows without both sensors are dropped.
std::vector<SegmentData> split_by_time(const SegmentData& data, double window_length,
                                       std::vector<std::pair<double, double>>* spans = nullptr);

}  // namespace ctcalib
