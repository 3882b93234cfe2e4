#include "ctcalib/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ctcalib {

double SegmentData::t_begin() const {
    double t = std::numeric_limits<double>::infinity();
    if (!imu.empty()) t = std::min(t, imu.front().t);
    if (!scans.empty()) t = std::min(t, scans.front().stamp);
    return t;
}

double SegmentData::t_end() const {
    double t = -std::numeric_limits<double>::infinity();
    if (!imu.empty()) t = std::max(t, imu.back().t);
    if (!scans.empty()) t = std::max(t, scans.back().stamp);
    return t;
}

std::vector<SegmentData> split_by_time(const SegmentData& data, double window_length,
                                       std::vector<std::pair<double, double>>* spans) {
    std::vector<SegmentData> out;
    if (spans) spans->clear();
    if (data.imu.empty() || data.scans.empty() || window_length <= 0.0) return out;

    const double t0 = data.t_begin();
    const double t1 = data.t_end();
    const int n_windows = std::max(1, static_cast<int>(std::floor((t1 - t0) / window_length + 1e-9)));
    for (int w = 0; w < n_windows; ++w) {
        const double a = t0 + w * window_length;
        const double b = (w + 1 == n_windows) ? t1 + 1e-9 : a + window_length;
        SegmentData seg;
        for (const ImuSample& s : data.imu)
            if (s.t >= a && s.t < b) seg.imu.push_back(s);
        for (const LidarScan& scan : data.scans)
            if (scan.stamp >= a && scan.stamp < b) seg.scans.push_back(scan);
        if (seg.imu.size() < 10 || seg.scans.size() < 2) continue;
        out.push_back(std::move(seg));
        if (spans) spans->emplace_back(a, b);
    }
    return out;
}

}  // namespace ctcalib
