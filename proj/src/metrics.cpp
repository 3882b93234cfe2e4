#include "ctcalib/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace ctcalib {

namespace {

// Same 21-bit offset-binary packing as the surfel map; cell size equals the
// search radius so a 3x3x3 cell block covers every candidate exactly.
int64_t pack(int64_t x, int64_t y, int64_t z) {
    const int64_t off = 1 << 20;
    return ((x + off) << 42) | ((y + off) << 21) | (z + off);
}

int64_t cell_of(const Vec3& p, double cell) {
    return pack(static_cast<int64_t>(std::floor(p.x() / cell)),
                static_cast<int64_t>(std::floor(p.y() / cell)),
                static_cast<int64_t>(std::floor(p.z() / cell)));
}

}  // namespace

MapEntropyResult mean_map_entropy(const std::vector<Vec3>& points,
                                  const MapEntropyOptions& opts) {
    if (points.empty()) throw std::invalid_argument("map entropy needs a non-empty cloud");
    if (opts.radius <= 0) throw std::invalid_argument("map entropy radius must be positive");
    if (opts.min_neighbors < 2) throw std::invalid_argument("map entropy needs min_neighbors >= 2");
    if (opts.stride < 1) throw std::invalid_argument("map entropy stride must be at least 1");

    std::unordered_map<int64_t, std::vector<int>> cells;
    cells.reserve(points.size() / 4 + 1);
    for (size_t i = 0; i < points.size(); ++i) {
        cells[cell_of(points[i], opts.radius)].push_back(static_cast<int>(i));
    }

    const double r2 = opts.radius * opts.radius;
    // 1/2 ln((2 pi e)^3) absorbed so the loop only adds 1/2 ln|Cov|.
    const double h0 = 1.5 * std::log(2.0 * M_PI * std::exp(1.0));

    MapEntropyResult res;
    double sum_h = 0;
    std::vector<int> hood;
    for (size_t i = 0; i < points.size(); i += opts.stride) {
        const Vec3& q = points[i];
        const int64_t cx = static_cast<int64_t>(std::floor(q.x() / opts.radius));
        const int64_t cy = static_cast<int64_t>(std::floor(q.y() / opts.radius));
        const int64_t cz = static_cast<int64_t>(std::floor(q.z() / opts.radius));
        hood.clear();
        for (int dx = -1; dx <= 1; ++dx) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dz = -1; dz <= 1; ++dz) {
                    auto it = cells.find(pack(cx + dx, cy + dy, cz + dz));
                    if (it == cells.end()) continue;
                    for (int j : it->second) {
                        if ((points[j] - q).squaredNorm() <= r2) hood.push_back(j);
                    }
                }
            }
        }
        if (static_cast<int>(hood.size()) < opts.min_neighbors) {
            ++res.skipped;
            continue;
        }
        Vec3 mean = Vec3::Zero();
        for (int j : hood) mean += points[j];
        mean /= hood.size();
        Mat3 cov = Mat3::Zero();
        for (int j : hood) {
            const Vec3 d = points[j] - mean;
            cov += d * d.transpose();
        }
        cov /= hood.size();
        // Degenerate neighborhoods round to a tiny (possibly negative)
        // determinant; clamp so the entropy is -inf rather than NaN.
        const double det = std::max(cov.determinant(), 0.0);
        sum_h += h0 + 0.5 * std::log(det);
        ++res.evaluated;
    }
    if (res.evaluated == 0) {
        throw std::runtime_error("map entropy undefined: no point has enough neighbors");
    }
    res.mme = sum_h / res.evaluated;
    return res;
}

ExtrinsicRmse extrinsic_rmse(const std::vector<Pose>& estimates, const Pose& truth) {
    if (estimates.empty()) throw std::invalid_argument("extrinsic RMSE needs at least one estimate");

    Vec3 mean_p = Vec3::Zero();
    Mat4 acc = Mat4::Zero();
    for (const Pose& e : estimates) {
        mean_p += e.p;
        const Vec4 v = quat_vec4(e.q);
        acc += v * v.transpose();  // sign-invariant chordal accumulation
    }
    mean_p /= estimates.size();
    Eigen::SelfAdjointEigenSolver<Mat4> eig(acc);
    Mat4::Index top;
    eig.eigenvalues().maxCoeff(&top);
    const Quat mean_q = canonical(quat_from_vec4(eig.eigenvectors().col(top)).normalized());

    const Vec3 ep = mean_p - truth.p;
    Vec3 er = matrix_to_euler_zyx(mean_q.toRotationMatrix()) -
              matrix_to_euler_zyx(truth.q.toRotationMatrix());
    for (int a = 0; a < 3; ++a) {
        er(a) = std::remainder(er(a), 2.0 * M_PI);
    }

    ExtrinsicRmse out;
    out.pos_cm = std::sqrt(ep.squaredNorm() / 3.0) * 100.0;
    out.rot_deg = std::sqrt(er.squaredNorm() / 3.0) * 180.0 / M_PI;
    return out;
}

double direction_agreement(const VecX& detected, const VecX& truth) {
    if (detected.size() != truth.size() || detected.size() == 0) {
        throw std::invalid_argument("direction agreement needs equally sized vectors");
    }
    const double nd = detected.norm();
    const double nt = truth.norm();
    if (nd < 1e-12 || nt < 1e-12) {
        throw std::invalid_argument("direction agreement undefined for zero vectors");
    }
    return std::abs(detected.dot(truth)) / (nd * nt);
}

}  // namespace ctcalib
