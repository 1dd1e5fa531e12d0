#ifndef SAP_SMPC_HPP
#define SAP_SMPC_HPP

#include <optional>
#include <string>

#include "sap/qp.hpp"
#include "sap/tree.hpp"

namespace sap {

/// Local halfspace approximation of the safe set at a shielding node.
struct CbfHalfspace {
    Vec4 normal;       // f(x, pi_s(x), uH) - x
    JointState anchor;
};

/// One convexified shielding constraint (soft, with a dedicated slack).
struct CbfRow {
    int node_id = -1;
    Vec4 normal;
    double gamma = 0.7;
    Eigen::RowVectorXd coeffs;  // over the stacked control variables
    double constant = 0.0;      // right-hand side from the frozen terms
};

enum class PlannerMode { kSharp, kBaseline, kAblation };

struct PlannerConfig {
    double gamma = 0.7;               // CBF decay rate, in (0, 1]
    double slack_weight = 1e4;        // linear penalty on CBF slacks
    double baseline_weight = 100.0;   // proximity-penalty weight (baseline mode)
    ControlBounds robot_bounds;
    TreeOptions tree;
    QpOptions qp;
};

/// Scenario-tree QP with one control variable per non-leaf node (causality by
/// construction), condensed onto the control variables.
struct QpAssembly {
    QpProblem problem;
    std::vector<int> var_of_node;      // -1 for leaves
    std::vector<AgentControl> u_nom;   // nominal control per node (tree rollout)
    Eigen::Index n_controls = 0;       // number of control variables
    Eigen::Index n_slacks = 0;
    std::vector<CbfRow> cbf_rows;
    int skipped_degenerate_normals = 0;
};

struct PlanDiagnostics {
    std::size_t tree_nodes = 0;
    std::size_t shield_nodes = 0;
    std::string qp_status;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double max_slack = 0.0;
    double solve_ms = 0.0;
    bool fallback = false;  // QP failed; the QMDP surrogate action was used
};

struct PlanResult {
    AgentControl action;
    PlanDiagnostics diag;
};

/// Normal/anchor of the local safe-set halfspace at a shielding node; empty
/// when the construction degenerates (safety action is a fixed point).
std::optional<CbfHalfspace> cbf_halfspace(const SafetyCertificate& cert, const ScenarioTree& tree,
                                          int node_id);

/// Coefficient row of the discrete-time exponential CBF constraint
///   n' [(A + (gamma-1) I) dx + B_R du_R + B_H du_H] >= -slack.
CbfRow cbf_constraint(const LinearizedDynamics& lin, const CbfHalfspace& hs, double gamma);

class ScenarioPlanner {
public:
    ScenarioPlanner(const SafetyCertificate& cert, const QmdpTable& table,
                    const BayesFilter& filter, PlannerConfig config, PlannerMode mode);

    PlanResult plan(const JointState& x, const Belief& b, std::mt19937_64& rng) const;

    QpAssembly assemble_qp(const ScenarioTree& tree) const;
    const TreeBuilder& tree_builder() const { return builder_; }
    PlannerMode mode() const { return mode_; }
    const PlannerConfig& config() const { return config_; }

private:
    const SafetyCertificate& cert_;
    const QmdpTable& table_;
    const BayesFilter& filter_;
    PlannerConfig config_;
    PlannerMode mode_;
    TreeBuilder builder_;
};

}  // namespace sap

#endif
