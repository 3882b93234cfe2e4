#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctcalib {

// Malformed configuration: unknown key, wrong type, or failed validation.
// The CLI maps this to its config-error exit code.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Every tunable of the toolkit. Angles are radians and times seconds unless
// the key name says otherwise; report files convert to degrees.
struct RunConfig {
    std::string dataset_dir;
    std::string output_dir;  // empty: <dataset_dir>/run
    std::string run_dir;     // input of the report command

    struct Sim {
        std::string trajectory = "sinusoid";  // sinusoid | figure8 | alternating
        std::string mounting = "A";           // A | B | C
        double duration = 10.0;
        double imu_rate = 400.0;
        double scan_period = 0.1;
        double azimuth_step_deg = 0.2;
        int num_beams = 16;
        double max_range = 30.0;
        double range_sigma = 0.01;
        double gyro_sigma = 3.4e-3;
        double accel_sigma = 1.2e-2;
        double gyro_walk = 2e-5;
        double accel_walk = 5e-4;
        double time_offset = 0.0;
        bool distortion = true;
        bool cartesian = false;  // write pre-projected x,y,z scans
        double window = 15.0;    // alternating trajectory only
        int num_windows = 8;
        uint64_t truth_seed = 42;  // draws the randomized calibration truth
        uint64_t noise_seed = 1;   // drives measurement noise
    } sim;

    struct Init {
        std::string odometry = "icp";  // icp | perturbed_truth
        bool two_pass = true;          // derotate with the gyro fit, redo odometry
        int icp_stride = 1;
        int icp_max_iterations = 10;
        double min_pair_angle = 0.00873;  // hand-eye screening, rad
        double perturb_rot = 0.005;       // perturbed_truth odometry noise, rad
        double perturb_trans = 0.01;      // perturbed_truth odometry noise, m
        double perturb_ext_rot = 0.05;    // perturbed_truth extrinsic guess, rad
        double perturb_ext_trans = 0.03;  // perturbed_truth extrinsic guess, m
        uint64_t seed = 7;
    } init;

    struct Calib {
        double knot_dt = 0.1;
        double segment_length = 0.0;  // 0: whole recording as one segment
        int outer_iterations = 8;
        int inner_iterations = 8;
        int intrinsics_start = 2;
        int raw_correction_start = 2;
        bool imu_intrinsics = true;
        bool lidar_intrinsics = true;
        bool estimate_time_offset = true;
        double tc_bound = 0.05;
        bool use_tsvd = false;
        double tsvd_rel = 1e-3;
        double tsvd_abs = 0.0;
        double huber_delta = 0.02;
        double gyro_sigma = 3.4e-3;
        double accel_sigma = 1.2e-2;
        double range_sigma = 0.01;
        double min_incidence = 0.1;
        double map_cell = 0.5;
        double map_planarity = 0.6;
        int map_min_points = 20;
        double assoc_gate = 0.05;
        int point_stride = 1;
        bool track_mme = true;
        double mme_radius = 0.3;
        int mme_stride = 4;
    } calib;

    struct Segments {
        double length = 15.0;
        double sigma_threshold = 1.0;  // informative-flag cut on sigma_min
        int top_n = 2;
        bool joint = true;  // calibrate jointly on the selection
        int probe_iterations = 5;
        int probe_stride = 4;
    } segments;

    // Optional threshold gate against the ground-truth sidecar; failing it
    // uses a dedicated exit code so CI can tell "worse than promised" from
    // "did not run".
    struct Check {
        bool enabled = false;
        double pos_cm = 1.0;   // per-axis mean absolute translation error
        double rot_deg = 0.5;  // per-axis absolute Euler error
        double tc_ms = 0.5;
    } check;
};

// Parses a JSON config file. Unknown keys and type mismatches throw
// ConfigError; missing keys keep their defaults.
RunConfig load_config(const std::string& path);

// Applies one dotted-key override, e.g. ("sim.duration", "20"). The value
// text is parsed as JSON when possible and treated as a bare string
// otherwise.
void apply_override(RunConfig& config, const std::string& key, const std::string& value);

// Cross-field validation; collects every violation into one ConfigError.
void validate(const RunConfig& config);

// Full nested snapshot of the configuration, suitable for reloading.
std::string config_json(const RunConfig& config);
void write_config_snapshot(const RunConfig& config, const std::string& path);

// Sorted list of all recognized dotted keys.
std::vector<std::string> config_keys();

}  // namespace ctcalib
