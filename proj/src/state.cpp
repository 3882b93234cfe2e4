#include "ctcalib/state.hpp"

#include <algorithm>
#include <stdexcept>

namespace ctcalib {

StateLayout StateLayout::of(const CalibState& state) {
    StateLayout l;
    int off = 0;
    for (const SegmentState& s : state.segments) {
        Segment seg;
        seg.n_knots = s.traj.num_knots();
        seg.p_off = off;
        off += 3 * seg.n_knots;
        seg.q_off = off;
        off += 3 * seg.n_knots;
        seg.nav_off = off;
        off += 8;  // gravity tangent (2) + biases (3 + 3)
        l.seg.push_back(seg);
    }
    l.imu_off = off;
    off += 15;
    l.lidar_off = off;
    l.num_beams = static_cast<int>(state.beams.size());
    off += 6 * l.num_beams;
    l.ext_off = off;
    off += 6;
    l.tc_off = off;
    off += static_cast<int>(state.segments.size());
    l.total = off;
    return l;
}

void apply_increment(CalibState& state, const StateLayout& layout, const VecX& dx,
                     double tc_bound) {
    if (dx.size() != layout.total) throw std::invalid_argument("increment size mismatch");
    for (size_t s = 0; s < state.segments.size(); ++s) {
        SegmentState& seg = state.segments[s];
        const auto& ls = layout.seg[s];
        for (int k = 0; k < ls.n_knots; ++k) {
            seg.traj.knot_p(k) += dx.segment<3>(layout.p_slot(s, k));
            const Vec3 e = dx.segment<3>(layout.q_slot(s, k));
            if (e.squaredNorm() > 0) {
                seg.traj.knot_q(k) = (seg.traj.knot_q(k) * so3_exp(e)).normalized();
            }
        }
        seg.traj.align_hemispheres();
        const Vec2 dg = dx.segment<2>(layout.gravity_slot(s));
        if (dg.squaredNorm() > 0) {
            const Vec3 g = seg.nav.gravity;
            seg.nav.gravity = kGravityNorm * (g + tangent_basis(g) * dg).normalized();
        }
        seg.nav.bias_gyro += dx.segment<3>(layout.bias_gyro_slot(s));
        seg.nav.bias_accel += dx.segment<3>(layout.bias_accel_slot(s));
        seg.time_offset =
            std::clamp(seg.time_offset + dx(layout.tc_slot(s)), -tc_bound, tc_bound);
    }
    ImuIntrinsics& ii = state.imu_intrinsics;
    ii.scale_gyro += dx.segment<3>(layout.scale_gyro_slot());
    ii.misalign_gyro += dx.segment<3>(layout.misalign_gyro_slot());
    const Vec3 dr = dx.segment<3>(layout.gyro_frame_slot());
    if (dr.squaredNorm() > 0) ii.q_gyro_imu = (ii.q_gyro_imu * so3_exp(dr)).normalized();
    ii.scale_accel += dx.segment<3>(layout.scale_accel_slot());
    ii.misalign_accel += dx.segment<3>(layout.misalign_accel_slot());
    for (int b = 0; b < layout.num_beams; ++b) {
        auto v = state.beams[b].params();
        v += dx.segment<6>(layout.beam_slot(b));
        state.beams[b].set_params(v);
    }
    const Vec3 de = dx.segment<3>(layout.ext_rot_slot());
    if (de.squaredNorm() > 0) {
        state.extrinsics.q_imu_lidar = (state.extrinsics.q_imu_lidar * so3_exp(de)).normalized();
    }
    state.extrinsics.p_imu_lidar += dx.segment<3>(layout.ext_trans_slot());
}

int ActiveMask::count() const {
    int n = 0;
    for (char c : on) n += (c != 0);
    return n;
}

std::vector<int> ActiveMask::active_indices() const {
    std::vector<int> idx;
    idx.reserve(on.size());
    for (size_t i = 0; i < on.size(); ++i) {
        if (on[i]) idx.push_back(static_cast<int>(i));
    }
    return idx;
}

void mask_gauge(const CalibState& state, const StateLayout& layout, ActiveMask& mask) {
    for (size_t s = 0; s < state.segments.size(); ++s) {
        mask.set(layout.p_slot(s, 0), 3, false);
        mask.set(layout.q_slot(s, 0), 3, false);
    }
}

void mask_intrinsics(const StateLayout& layout, ActiveMask& mask, bool active) {
    mask.set(layout.imu_off, 15, active);
    mask.set(layout.lidar_off, 6 * layout.num_beams, active);
}

void mask_first_beam_datum(const StateLayout& layout, ActiveMask& mask) {
    if (layout.num_beams > 0) {
        mask.set(layout.beam_slot(0), 4, false);  // elevation/azimuth/V/H fixed
    }
}

}  // namespace ctcalib
