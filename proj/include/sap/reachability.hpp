#ifndef SAP_REACHABILITY_HPP
#define SAP_REACHABILITY_HPP

#include <string>
#include <vector>

#include "sap/dynamics.hpp"
#include "sap/grid.hpp"

namespace sap {

/// Failure-set geometry: loss of separation or leaving the road.
struct FailureSpec {
    double sep_long = 5.5;      // m, |p_x_r| clause
    double sep_lat = 2.0;       // m, |p_y_R - p_y_H| clause
    double road_half = 3.7;     // m, |p_y_R| clause
    std::string geometry = "highway";

    bool valid() const { return sep_long > 0 && sep_lat > 0 && road_half > 0; }
};

/// Signed margin to the failure set: negative iff x is in F. Piecewise affine.
double failure_margin(const JointState& x, const FailureSpec& spec);

/// Evenly spaced lattice over a control box (nv x na points).
std::vector<AgentControl> control_lattice(const ControlBounds& b, std::size_t nv, std::size_t na);

struct CertificateOptions {
    double tol = 1e-4;
    std::size_t max_iters = 500;
    unsigned jobs = 0;
};

/// Gridded safety value function with its synthesis control lattices.
/// The safe set is {x : V(x) >= margin}; margin absorbs interpolation error.
struct SafetyCertificate {
    Grid4 grid;
    std::vector<double> value;
    std::vector<AgentControl> uR;  // discretized robot controls used in synthesis
    std::vector<AgentControl> uH;  // discretized (worst-case) human controls
    FailureSpec spec;
    TimeStep dt;
    double margin = 0.0;
    std::size_t iterations = 0;
    double residual = 0.0;
    bool converged = false;

    double value_at(const JointState& x) const { return grid.interpolate(value, x.vec()); }
    bool in_safe_set(const JointState& x) const { return value_at(x) >= margin; }
};

/// Discrete-time HJ value iteration:
///   V(x) = min( failure_margin(x), max_{uR} min_{uH} V(f(x, uR, uH)) )
/// with multilinear interpolation of successors. Throws on an empty safe set.
SafetyCertificate compute_certificate(const Grid4& grid, const FailureSpec& spec,
                                      const std::vector<AgentControl>& uR,
                                      const std::vector<AgentControl>& uH, const TimeStep& dt,
                                      const CertificateOptions& opts = {});

/// Safety policy pi_s: argmax over the robot lattice of the worst-case
/// successor value. Ties break toward the lowest control index.
AgentControl safe_action(const SafetyCertificate& cert, const JointState& x);

/// True iff some discretized human action pushes the successor below margin.
bool in_shielding_set(const SafetyCertificate& cert, const JointState& x, const AgentControl& uR);

struct ShieldResult {
    AgentControl action;
    bool shielded = false;
    bool out_of_safe_set = false;
};

/// Least-restrictive filter: passes the candidate unless (x, candidate) is in
/// the shielding set, in which case the safety policy takes over.
ShieldResult shield(const SafetyCertificate& cert, const JointState& x,
                    const AgentControl& candidate);

// Cache persistence: little-endian float64 array + JSON sidecar at path+".json".
void save_certificate(const SafetyCertificate& cert, const std::string& path);
SafetyCertificate load_certificate(const std::string& path);

}  // namespace sap

#endif
