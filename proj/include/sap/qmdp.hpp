#ifndef SAP_QMDP_HPP
#define SAP_QMDP_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "sap/cost.hpp"
#include "sap/grid.hpp"
#include "sap/inference.hpp"
#include "sap/reachability.hpp"

namespace sap {

/// Stationary value table over the augmented grid z = [x, beta, theta],
/// produced by N shielding-constrained Bellman backups. Layout of `value`:
/// cell-major, hypothesis-minor (value[cell * n_hyp + hyp]).
struct QmdpTable {
    Grid4 xgrid;
    ParamGrid params;
    std::vector<double> value;
    std::vector<std::uint16_t> greedy;  // argmin robot-lattice index per (cell, hyp)
    std::vector<AgentControl> uR;
    std::vector<AgentControl> uH;
    TransitionModel transition;
    QuadraticCost cost;
    IntentBasis basis;
    TimeStep dt;
    std::size_t horizon = 0;
    double robot_ref_speed = 30.0;  // used to recover the human speed from v_r
    bool shield_aware = true;       // backups evaluate filtered controls
};

struct QmdpOptions {
    std::size_t horizon = 15;
    double robot_ref_speed = 30.0;
    unsigned jobs = 0;
    // When false, backups use the raw candidates (a safety-unaware surrogate
    // for the comparison planners).
    bool shield_aware = true;
};

/// Offline tabular DP under the QMDP assumption. Each backup minimizes over
/// the robot lattice with the shielding filter applied inside the backup:
/// candidates in the shielding set are evaluated as the safety action.
QmdpTable solve_qmdp(const SafetyCertificate& cert, const Grid4& xgrid, const IntentBasis& basis,
                     const ParamGrid& params, const std::vector<AgentControl>& uR,
                     const std::vector<AgentControl>& uH, const TransitionModel& transition,
                     const QuadraticCost& cost, const TimeStep& dt, const QmdpOptions& opts = {});

struct TerminalEval {
    double value = 0.0;
    std::size_t action_index = 0;  // raw (pre-filter) robot lattice index
    bool clamped = false;          // x fell outside the table domain
};

/// One belief-weighted Bellman step on top of the stationary table (the
/// optimistic cost-to-go used as the SMPC terminal value).
TerminalEval terminal_value(const QmdpTable& table, const SafetyCertificate& cert,
                            const JointState& x, const Belief& b);

/// Surrogate policy: the raw minimizing lattice action of terminal_value.
/// Callers pass it through the shielding filter before execution.
AgentControl qmdp_policy(const QmdpTable& table, const SafetyCertificate& cert,
                         const JointState& x, const Belief& b);

void save_qmdp(const QmdpTable& table, const std::string& path);
QmdpTable load_qmdp(const std::string& path);

/// Hash over everything the table's values depend on (cost, human model,
/// lattices, transition, horizon); loaders reject tables whose stored hash
/// differs from the one derived from the current configuration.
std::uint64_t qmdp_descriptor_hash(const QmdpTable& table);

}  // namespace sap

#endif
