#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "ctcalib/geometry.hpp"

namespace ctcalib {

// Plane-likeness of a covariance spectrum (eigenvalues ascending):
// 2 (l1 - l0) / (l0 + l1 + l2), in [0, 1]; 1 for an ideal plane.
double plane_likeness(const Vec3& eigenvalues_ascending);

// Planar patch fitted to the points of one cell. The plane is n.p + d = 0
// with unit normal and sign fixed so d >= 0, i.e. the closest-point encoding
// d * n is unambiguous.
struct Surfel {
    Vec3 normal = Vec3::UnitZ();
    double d = 0;
    Vec3 centroid = Vec3::Zero();
    double planarity = 0;
    int num_points = 0;

    Vec3 closest_point() const { return d * normal; }
    double distance(const Vec3& p) const { return normal.dot(p) + d; }
};

// Uniform-cell voxel map with per-cell plane extraction. Cells with at least
// min_points points and plane-likeness strictly above the threshold carry a
// surfel; the fit iteratively drops points farther than three normal spreads
// from the plane so cells clipping a second surface keep the majority plane.
// Association is by point-to-plane distance within the gate, checking the
// point's own cell first and falling back to the 26 neighbours.
class SurfelMap {
  public:
    SurfelMap(double cell_size, double planarity_threshold, int min_points, double gate);

    void build(const std::vector<Vec3>& points);

    const std::vector<Surfel>& surfels() const { return surfels_; }
    double cell_size() const { return cell_; }
    double gate() const { return gate_; }

    // Surfel index for this point or -1.
    int associate(const Vec3& p) const;

    int num_cells() const { return static_cast<int>(cell_ids_.size()); }

  private:
    int64_t key(const Vec3& p) const;
    static int64_t pack(int64_t x, int64_t y, int64_t z);

    double cell_, threshold_, gate_;
    int min_points_;
    std::vector<Surfel> surfels_;
    std::unordered_map<int64_t, int> cell_ids_;  // cell -> surfel index or -1
};

}  // namespace ctcalib
