#include "ctcalib/surfel_map.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

namespace ctcalib {

double plane_likeness(const Vec3& ev) {
    const double sum = ev.sum();
    if (sum <= 0) return 0.0;
    return 2.0 * (ev(1) - ev(0)) / sum;
}

SurfelMap::SurfelMap(double cell_size, double planarity_threshold, int min_points, double gate)
    : cell_(cell_size), threshold_(planarity_threshold), gate_(gate), min_points_(min_points) {
    if (cell_size <= 0) throw std::invalid_argument("surfel cell size must be positive");
    if (min_points < 3) throw std::invalid_argument("surfel min_points must be at least 3");
}

int64_t SurfelMap::pack(int64_t x, int64_t y, int64_t z) {
    // 21 bits per axis, offset binary; plenty for indoor extents.
    const int64_t off = 1 << 20;
    return ((x + off) << 42) | ((y + off) << 21) | (z + off);
}

int64_t SurfelMap::key(const Vec3& p) const {
    return pack(static_cast<int64_t>(std::floor(p.x() / cell_)),
                static_cast<int64_t>(std::floor(p.y() / cell_)),
                static_cast<int64_t>(std::floor(p.z() / cell_)));
}

void SurfelMap::build(const std::vector<Vec3>& points) {
    surfels_.clear();
    cell_ids_.clear();

    std::unordered_map<int64_t, std::vector<int>> cells;
    cells.reserve(points.size() / 8 + 1);
    for (size_t i = 0; i < points.size(); ++i) {
        cells[key(points[i])].push_back(static_cast<int>(i));
    }

    std::vector<int> members;
    for (auto& [k, idx] : cells) {
        if (static_cast<int>(idx.size()) < min_points_) {
            cell_ids_.emplace(k, -1);
            continue;
        }
        // Robust refit: a cell straddling two true surfaces gets a small
        // minority of off-plane points that would drag the fitted plane while
        // still passing the planarity gate. Re-fitting after dropping points
        // beyond three times the normal spread converges to the majority
        // plane; pure noisy cells lose at most the far tail.
        members = idx;
        Vec3 mean = Vec3::Zero();
        Vec3 ev = Vec3::Zero();
        Vec3 normal = Vec3::UnitZ();
        for (int pass = 0; pass < 5; ++pass) {
            mean.setZero();
            for (int i : members) mean += points[i];
            mean /= members.size();
            Mat3 cov = Mat3::Zero();
            for (int i : members) {
                const Vec3 r = points[i] - mean;
                cov += r * r.transpose();
            }
            cov /= members.size();
            Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
            ev = eig.eigenvalues().cwiseMax(0.0);
            normal = eig.eigenvectors().col(0).normalized();
            const double cut = std::max(3.0 * std::sqrt(ev(0)), 1e-9);
            const double d = -normal.dot(mean);
            size_t kept = 0;
            for (size_t m = 0; m < members.size(); ++m) {
                if (std::abs(normal.dot(points[members[m]]) + d) <= cut)
                    members[kept++] = members[m];
            }
            if (kept == members.size()) break;
            members.resize(kept);
            if (static_cast<int>(kept) < min_points_) break;
        }
        const double planarity = plane_likeness(ev);
        if (static_cast<int>(members.size()) < min_points_ || planarity <= threshold_) {
            cell_ids_.emplace(k, -1);
            continue;
        }
        Surfel s;
        s.normal = normal;
        s.d = -normal.dot(mean);
        if (s.d < 0) {
            s.normal = -s.normal;
            s.d = -s.d;
        }
        s.centroid = mean;
        s.planarity = planarity;
        s.num_points = static_cast<int>(members.size());
        cell_ids_[k] = static_cast<int>(surfels_.size());
        surfels_.push_back(s);
    }
}

int SurfelMap::associate(const Vec3& p) const {
    const int64_t kx = static_cast<int64_t>(std::floor(p.x() / cell_));
    const int64_t ky = static_cast<int64_t>(std::floor(p.y() / cell_));
    const int64_t kz = static_cast<int64_t>(std::floor(p.z() / cell_));
    auto it = cell_ids_.find(pack(kx, ky, kz));
    if (it != cell_ids_.end() && it->second >= 0) {
        if (std::abs(surfels_[it->second].distance(p)) <= gate_) return it->second;
    }
    int best = -1;
    double best_dist = 0;
    for (int dx = -1; dx <= 1; ++dx) {
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dz = -1; dz <= 1; ++dz) {
                if (dx == 0 && dy == 0 && dz == 0) continue;
                auto n = cell_ids_.find(pack(kx + dx, ky + dy, kz + dz));
                if (n == cell_ids_.end() || n->second < 0) continue;
                const double dist = std::abs(surfels_[n->second].distance(p));
                if (dist > gate_) continue;
                if (best < 0 || dist < best_dist || (dist == best_dist && n->second < best)) {
                    best_dist = dist;
                    best = n->second;
                }
            }
        }
    }
    return best;
}

}  // namespace ctcalib
