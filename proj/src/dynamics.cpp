#include "sap/dynamics.hpp"

#include <stdexcept>

namespace sap {

namespace {
constexpr double kSpeedFloor = 0.5;  // m/s, keeps the steering map defined at rest
}

AgentState step_bicycle(const AgentState& s, const AgentControl& u, const TimeStep& dt) {
    if (!s.finite()) throw std::invalid_argument("step_bicycle: non-finite state");
    const double h = dt.dt;
    // Steer the actual lateral velocity v*sin(heading) toward the command.
    const double v_lat_now = s.speed * std::sin(s.heading);
    const double heading_rate = (u.v_lat - v_lat_now) / std::max(std::abs(s.speed), kSpeedFloor);
    AgentState n;
    n.x = s.x + s.speed * std::cos(s.heading) * h;
    n.y = s.y + s.speed * std::sin(s.heading) * h;
    n.heading = wrap_angle(s.heading + heading_rate * h);
    n.speed = s.speed + u.a * h;
    return n;
}

JointState step_joint(const JointState& x, const AgentControl& uR, const AgentControl& uH,
                      const TimeStep& dt) {
    if (!x.finite()) throw std::invalid_argument("step_joint: non-finite state");
    const double h = dt.dt;
    JointState n;
    n.px_r = x.px_r + x.v_r * h;
    n.v_r = x.v_r + (uH.a - uR.a) * h;
    n.py_R = x.py_R + uR.v_lat * h;
    n.py_H = x.py_H + uH.v_lat * h;
    return n;
}

JointState assemble_joint(const AgentState& xR, const AgentState& xH) {
    JointState j;
    j.px_r = xH.x - xR.x;
    j.v_r = xH.speed * std::cos(xH.heading) - xR.speed * std::cos(xR.heading);
    j.py_R = xR.y;
    j.py_H = xH.y;
    return j;
}

std::pair<AgentState, AgentState> split_joint(const JointState& x, const AgentState& robot_ref) {
    AgentState r = robot_ref;
    r.y = x.py_R;
    AgentState h;
    h.x = robot_ref.x + x.px_r;
    h.y = x.py_H;
    h.heading = 0.0;
    h.speed = robot_ref.speed * std::cos(robot_ref.heading) + x.v_r;
    return {r, h};
}

LinearizedDynamics linearize(const JointState& x, const AgentControl& uR, const AgentControl& uH,
                             const TimeStep& dt) {
    const double h = dt.dt;
    LinearizedDynamics lin;
    lin.A = Mat4::Identity();
    lin.A(0, 1) = h;
    lin.BR = Mat42::Zero();
    lin.BR(1, 1) = -h;  // robot acceleration reduces relative velocity
    lin.BR(2, 0) = h;
    lin.BH = Mat42::Zero();
    lin.BH(1, 1) = h;
    lin.BH(3, 0) = h;
    lin.x0 = x;
    lin.uR0 = uR;
    lin.uH0 = uH;
    return lin;
}

}  // namespace sap
