#pragma once

#include <vector>

#include "ctcalib/state.hpp"
#include "ctcalib/surfel_map.hpp"

namespace ctcalib {

// One weighted residual with its Jacobian footprint over state slots. Blocks
// are (slot, width) pairs with a dense rows x width Jacobian; rows is 1 for
// point-to-plane and 3 for inertial residuals. `weight` is the scalar
// information multiplier (isotropic covariance, Huber-scaled for LiDAR) used
// in the Gauss-Newton system; `cost` is the robustified cost contribution.
struct ResidualBlocks {
    static constexpr int kMaxBlocks = 24;
    int rows = 0;
    int n_blocks = 0;
    int slot[kMaxBlocks];
    int width[kMaxBlocks];
    Mat3 J[kMaxBlocks];
    Vec3 r = Vec3::Zero();
    double weight = 0;
    double cost = 0;

    void add(int slot_, int width_, const Mat3& j) {
        slot[n_blocks] = slot_;
        width[n_blocks] = width_;
        J[n_blocks] = j;
        ++n_blocks;
    }
};

// A point-to-plane association frozen for one outer iteration: the raw
// measurement, the plane it currently matches, and the propagated weight.
struct PlaneResidual {
    int seg = 0;
    double tau = 0;   // LiDAR-clock timestamp of the return
    double tau0 = 0;  // anchor scan stamp of this segment
    int beam = 0;
    double range = 0;
    double azimuth = 0;
    bool cartesian = false;
    Vec3 point_cart = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
    double d = 0;
    double weight = 0;  // 1 / sigma_z^2 before Huber
};

struct GyroResidual {
    int seg = 0;
    const ImuSample* sample = nullptr;
    double weight = 0;
};

struct AccelResidual {
    int seg = 0;
    const ImuSample* sample = nullptr;
    double weight = 0;
};

// Caches the per-segment anchor pose evaluation shared by every LiDAR
// residual of an outer iteration.
class EvalContext {
  public:
    EvalContext(const CalibState& state, const StateLayout& layout,
                const std::vector<double>& anchor_stamps);

    const CalibState& state() const { return *state_; }
    const StateLayout& layout() const { return *layout_; }
    const SplineEval& anchor(int seg) const { return anchor_[seg]; }
    double anchor_stamp(int seg) const { return stamps_[seg]; }

  private:
    const CalibState* state_;
    const StateLayout* layout_;
    std::vector<SplineEval> anchor_;
    std::vector<double> stamps_;
};

// Evaluators fill `out` and return false when the residual cannot be formed
// (query outside the trajectory domain). with_jacobians=false leaves only the
// residual, weight, and cost (used by step-acceptance cost checks).
bool eval_gyro(const EvalContext& ctx, const GyroResidual& res, bool with_jacobians,
               ResidualBlocks* out);
bool eval_accel(const EvalContext& ctx, const AccelResidual& res, bool with_jacobians,
                ResidualBlocks* out);
bool eval_plane(const EvalContext& ctx, const PlaneResidual& res, double huber_delta,
                bool with_jacobians, ResidualBlocks* out);

// Scatter-adds one residual into the dense normal system.
void accumulate(const ResidualBlocks& rb, MatX& A, VecX& b);

}  // namespace ctcalib
