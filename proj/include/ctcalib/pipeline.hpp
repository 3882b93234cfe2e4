#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "ctcalib/config.hpp"
#include "ctcalib/initializer.hpp"
#include "ctcalib/io.hpp"
#include "ctcalib/solver.hpp"

namespace ctcalib {

// A stage of the processing chain gave up (unreadable dataset, diverged
// initialization, ...). Carries the stage name so the CLI can say where.
struct PipelineError : std::runtime_error {
    std::string stage;

    PipelineError(std::string stage_, const std::string& message)
        : std::runtime_error(stage_ + ": " + message), stage(std::move(stage_)) {}
};

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitPipeline = 3;
constexpr int kExitThreshold = 4;

// Measurements plus everything initialization derived from them for one
// segment.
struct SegmentInit {
    SegmentState state;
    std::vector<OdometryPose> odometry;
    int flagged = 0;  // odometry poses marked as diverged
};

// Full initialization chain for one segment. LiDAR odometry (or perturbed
// ground truth), gyro-only rotation fit, hand-eye extrinsic rotation, an
// optional derotated second odometry pass, translation fit against the
// mapped odometry, and gravity from the rotation-compensated mean specific
// force. `truth` is only consulted in perturbed_truth mode.
SegmentInit initialize_segment(const SegmentData& data,
                               const std::vector<LidarBeamIntrinsics>& beams,
                               const RunConfig& config, Extrinsics* extrinsics,
                               const GroundTruthFile* truth);

// Dataset in memory plus the nominal beam table it was read with.
struct LoadedDataset {
    SegmentData recording;
    std::vector<LidarBeamIntrinsics> beams;  // empty for cartesian datasets
    std::optional<GroundTruthFile> truth;
};

LoadedDataset load_dataset(const std::string& dir);

// The four user-facing commands. Each validates the configuration, writes a
// config snapshot next to its outputs, and returns a process exit code;
// failures beyond that throw ConfigError or PipelineError.
int cmd_simulate(const RunConfig& config, std::ostream& log);
int cmd_calibrate(const RunConfig& config, std::ostream& log);
int cmd_select_segments(const RunConfig& config, std::ostream& log);
int cmd_report(const RunConfig& config, std::ostream& log);

}  // namespace ctcalib
