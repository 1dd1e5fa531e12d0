#ifndef SAP_DYNAMICS_HPP
#define SAP_DYNAMICS_HPP

#include <Eigen/Dense>
#include <cmath>
#include <utility>

namespace sap {

using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;
using Mat42 = Eigen::Matrix<double, 4, 2>;

/// Simulation-grade agent state (kinematic bicycle).
struct AgentState {
    double x = 0.0;        // m
    double y = 0.0;        // m
    double heading = 0.0;  // rad, wrapped to [-pi, pi)
    double speed = 0.0;    // m/s

    bool finite() const {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(heading) && std::isfinite(speed);
    }
};

/// Control pair shared by both agents: commanded lateral velocity and acceleration.
struct AgentControl {
    double v_lat = 0.0;  // m/s
    double a = 0.0;      // m/s^2

    Vec2 vec() const { return Vec2(v_lat, a); }
    static AgentControl from_vec(const Vec2& v) { return {v(0), v(1)}; }
};

/// Box bounds on an agent's control.
struct ControlBounds {
    double v_lat_min = -2.0, v_lat_max = 2.0;
    double a_min = -5.0, a_max = 3.0;

    AgentControl clamp(const AgentControl& u) const {
        return {std::clamp(u.v_lat, v_lat_min, v_lat_max), std::clamp(u.a, a_min, a_max)};
    }
    bool contains(const AgentControl& u, double tol = 1e-9) const {
        return u.v_lat >= v_lat_min - tol && u.v_lat <= v_lat_max + tol &&
               u.a >= a_min - tol && u.a <= a_max + tol;
    }
};

/// Planning-grade joint state: relative longitudinal position/velocity and
/// the two lateral positions. Sign convention: p_x_r = p_x^H - p_x^R, so
/// positive means the human is ahead; v_r = v^H - v^R.
struct JointState {
    double px_r = 0.0;  // m
    double v_r = 0.0;   // m/s
    double py_R = 0.0;  // m
    double py_H = 0.0;  // m

    Vec4 vec() const { return Vec4(px_r, v_r, py_R, py_H); }
    static JointState from_vec(const Vec4& v) { return {v(0), v(1), v(2), v(3)}; }
    bool finite() const { return vec().allFinite(); }
};

/// Exact Jacobians of the joint planning model about a nominal triple.
struct LinearizedDynamics {
    Mat4 A;
    Mat42 BR;
    Mat42 BH;
    JointState x0;
    AgentControl uR0, uH0;
};

struct TimeStep {
    double dt = 0.2;  // s
};

inline double wrap_angle(double a) {
    a = std::fmod(a + M_PI, 2.0 * M_PI);
    if (a < 0) a += 2.0 * M_PI;
    return a - M_PI;
}

/// One forward-Euler step of the kinematic bicycle. The lateral-velocity
/// command maps to the heading rate v_lat / max(speed, floor), i.e. small-angle
/// steering toward the commanded lateral speed. Simulation ground truth only.
AgentState step_bicycle(const AgentState& s, const AgentControl& u, const TimeStep& dt);

/// Linear planning-grade joint update (forward Euler, exact for this model).
JointState step_joint(const JointState& x, const AgentControl& uR, const AgentControl& uH,
                      const TimeStep& dt);

/// Change of coordinates Phi: agent states -> joint state. Longitudinal
/// velocities are the heading-projected speed components.
JointState assemble_joint(const AgentState& xR, const AgentState& xH);

/// Inverse split about a robot reference (absolute position/speed information
/// dropped by the planning abstraction is taken from the reference).
std::pair<AgentState, AgentState> split_joint(const JointState& x, const AgentState& robot_ref);

/// Jacobians of step_joint; constant and exact for the linear planning model.
LinearizedDynamics linearize(const JointState& x, const AgentControl& uR, const AgentControl& uH,
                             const TimeStep& dt);

}  // namespace sap

#endif
