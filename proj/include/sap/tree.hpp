#ifndef SAP_TREE_HPP
#define SAP_TREE_HPP

#include <optional>
#include <random>
#include <vector>

#include "sap/inference.hpp"
#include "sap/qmdp.hpp"
#include "sap/reachability.hpp"

namespace sap {

struct TreeNode {
    int id = 0;
    int parent = -1;  // -1 for the root
    int t = 0;        // time step relative to the root
    JointState x;
    Belief b;

    AgentControl uR;        // robot action taken at this node (non-leaf)
    bool has_action = false;
    bool shielded = false;  // uR was overridden by the safety policy

    AgentControl uH_edge;   // human action on the edge from the parent
    double pbar = 1.0;      // one-step transition probability from the parent
    double p_raw = 1.0;     // product of pbar along the root path
    double p = 1.0;         // per-depth normalized path probability

    std::vector<int> children;
    bool exhausted = false;  // no more useful branch candidates at this node

    // Per-hypothesis Gaussian human action moments at this node's state.
    std::vector<Vec2> human_mean;
    std::vector<Eigen::Matrix2d> human_cov;
};

struct ScenarioTree {
    std::vector<TreeNode> nodes;
    std::vector<int> shield_set;  // ids of shielding nodes
    int horizon = 0;              // truncated horizon N_bar
    std::size_t cap = 0;          // node cap M

    bool is_leaf(const TreeNode& n) const { return n.t == horizon; }
    std::vector<int> leaves() const;
    /// States along the root path of `leaf`, stacked root-first.
    std::vector<JointState> scenario_states(int leaf) const;
};

/// Scenario difference metric (xi1 - xi2)^T H (xi1 - xi2) on stacked
/// trajectory vectors of equal length.
double scenario_distance(const Eigen::VectorXd& xi1, const Eigen::VectorXd& xi2,
                         const Eigen::MatrixXd& H);

struct TreeOptions {
    std::size_t max_nodes = 70;      // M
    int horizon = 10;                // N_bar
    std::size_t branch_samples = 5;  // candidate human actions per branch attempt
    double similarity_threshold_per_dim = 1e-6;
    // When false, rollouts keep the raw surrogate actions (used by the
    // safety-unaware comparison planners).
    bool apply_shield = true;
};

/// Builds the sparse scenario tree: repeated forward rollouts under the QMDP
/// surrogate policy filtered by shielding, with diversity-driven branching on
/// sampled human actions and per-depth path-probability normalization.
class TreeBuilder {
public:
    TreeBuilder(const SafetyCertificate& cert, const QmdpTable& table, const BayesFilter& filter,
                TreeOptions opts = {});

    ScenarioTree build(const JointState& x, const Belief& b, std::mt19937_64& rng) const;

    /// Belief-weighted most likely lattice action at (x, b).
    AgentControl most_likely_human_action(const JointState& x, const Belief& b) const;

private:
    struct BranchPick {
        int node = -1;
        AgentControl action;
    };

    void rollout(ScenarioTree& tree, int start, const std::optional<AgentControl>& branch_action)
        const;
    std::optional<BranchPick> get_branch_node(ScenarioTree& tree, std::mt19937_64& rng) const;
    std::vector<JointState> simulate_scenario(const ScenarioTree& tree, int start,
                                              const AgentControl& first_uH) const;
    void fill_human_moments(TreeNode& n) const;
    double mixture_weight(const JointState& x, const Belief& b, const AgentControl& uH) const;
    void normalize_path_probs(ScenarioTree& tree) const;

    const SafetyCertificate& cert_;
    const QmdpTable& table_;
    const BayesFilter& filter_;
    TreeOptions opts_;
};

}  // namespace sap

#endif
