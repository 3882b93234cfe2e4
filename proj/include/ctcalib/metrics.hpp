#pragma once

#include <vector>

#include "ctcalib/geometry.hpp"

namespace ctcalib {

// Map-sharpness probe. For every evaluated point we gather all map points
// within `radius`, form the population covariance of that neighborhood, and
// score it with the Gaussian differential entropy h = 1/2 ln|2*pi*e*Cov|.
// The reported value is the mean of h over the evaluated points; smaller
// means sharper.
//
// Neighborhoods with fewer than `min_neighbors` members (the query point
// counts as its own neighbor) carry too little information for a covariance
// and are skipped; the skip count is reported so callers can tell a sharp
// map from an empty one.
struct MapEntropyOptions {
    double radius = 0.3;
    int min_neighbors = 5;
    // Evaluate every stride-th point. All points still act as neighbor
    // candidates, so subsampling only thins the query set.
    int stride = 1;
};

struct MapEntropyResult {
    double mme = 0;
    int evaluated = 0;
    int skipped = 0;
};

// Neighbor lookup is a uniform grid at cell == radius with exact distance
// tests, so the result never depends on an approximate search structure.
// Throws std::invalid_argument if the cloud is empty or the options are
// malformed, std::runtime_error if every query point was skipped.
MapEntropyResult mean_map_entropy(const std::vector<Vec3>& points,
                                  const MapEntropyOptions& opts = {});

// Accuracy of a batch of extrinsic estimates against the known mounting.
// Following the usual Monte-Carlo reporting convention the estimates are
// averaged first (chordal mean for the rotations) and the RMSE is taken
// over the three axes of that single mean-vs-truth error: translation in
// centimetres, rotation as intrinsic Z-Y-X Euler differences in degrees.
struct ExtrinsicRmse {
    double pos_cm = 0;
    double rot_deg = 0;
};

ExtrinsicRmse extrinsic_rmse(const std::vector<Pose>& estimates, const Pose& truth);

// Sign-invariant cosine similarity |d . t| between a detected degenerate
// direction and its analytic truth. Inputs are normalized internally;
// zero-length or size-mismatched vectors throw std::invalid_argument.
double direction_agreement(const VecX& detected, const VecX& truth);

}  // namespace ctcalib
