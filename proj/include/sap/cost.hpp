#ifndef SAP_COST_HPP
#define SAP_COST_HPP

#include "sap/dynamics.hpp"
#include "sap/human.hpp"

namespace sap {

/// Designer stage/terminal cost: quadratic penalties on lateral offset to the
/// reference lane, relative-speed error, and control effort. Overtaking is
/// encoded by switching the reference lane once p_x_r crosses a progress
/// threshold (robot sufficiently far ahead of the human).
struct QuadraticCost {
    double w_lat = 1.0;
    double w_speed = 0.5;
    double w_control = 0.1;
    double terminal_scale = 1.0;

    double v_r_ref = -5.0;         // m/s, negative: robot gains on the human
    double lane_overtake = 1.85;   // m, passing lane center
    double lane_final = -1.85;     // m, lane to return to after the pass
    double overtake_done_px = -10.0;  // m, p_x_r below this counts as passed

    double lane_ref(const JointState& x) const {
        return x.px_r < overtake_done_px ? lane_final : lane_overtake;
    }

    Vec4 state_ref(const JointState& x) const {
        return Vec4(x.px_r, v_r_ref, lane_ref(x), x.py_H);
    }

    /// Diagonal state weight matrix (relative position and human lane are free).
    Mat4 state_weight() const {
        Mat4 q = Mat4::Zero();
        q(1, 1) = w_speed;
        q(2, 2) = w_lat;
        return q;
    }

    Eigen::Matrix2d control_weight() const {
        return w_control * Eigen::Matrix2d::Identity();
    }

    double stage(const JointState& x, const AgentControl& u) const {
        const Vec4 e = x.vec() - state_ref(x);
        return e.dot(state_weight() * e) + u.vec().dot(control_weight() * u.vec());
    }

    double terminal(const JointState& x) const {
        const Vec4 e = x.vec() - state_ref(x);
        return terminal_scale * e.dot(state_weight() * e);
    }
};

/// Planning-side recovery of the human's local state from the joint state.
/// The human's absolute speed is not part of the joint abstraction, so it is
/// reconstructed from a robot reference speed: v_H = v_ref + v_r.
inline HumanLocalState human_view(const JointState& x, double robot_ref_speed) {
    return {x.py_H, robot_ref_speed + x.v_r};
}

}  // namespace sap

#endif
