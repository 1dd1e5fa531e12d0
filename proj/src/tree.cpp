#include "sap/tree.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace sap {

std::vector<int> ScenarioTree::leaves() const {
    std::vector<int> out;
    for (const auto& n : nodes)
        if (is_leaf(n)) out.push_back(n.id);
    return out;
}

std::vector<JointState> ScenarioTree::scenario_states(int leaf) const {
    std::vector<JointState> path;
    for (int id = leaf; id != -1; id = nodes[static_cast<std::size_t>(id)].parent)
        path.push_back(nodes[static_cast<std::size_t>(id)].x);
    std::reverse(path.begin(), path.end());
    return path;
}

double scenario_distance(const Eigen::VectorXd& xi1, const Eigen::VectorXd& xi2,
                         const Eigen::MatrixXd& H) {
    if (xi1.size() != xi2.size() || H.rows() != xi1.size() || H.cols() != xi1.size())
        throw std::invalid_argument("scenario_distance: dimension mismatch");
    const Eigen::VectorXd d = xi1 - xi2;
    return d.dot(H * d);
}

namespace {

Eigen::VectorXd stack_states(const std::vector<JointState>& xs) {
    Eigen::VectorXd v(4 * static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) v.segment<4>(4 * static_cast<Eigen::Index>(i)) = xs[i].vec();
    return v;
}

}  // namespace

TreeBuilder::TreeBuilder(const SafetyCertificate& cert, const QmdpTable& table,
                         const BayesFilter& filter, TreeOptions opts)
    : cert_(cert), table_(table), filter_(filter), opts_(opts) {
    if (opts_.max_nodes < 1) throw std::invalid_argument("TreeBuilder: max_nodes must be >= 1");
    if (opts_.horizon < 1) throw std::invalid_argument("TreeBuilder: horizon must be >= 1");
}

double TreeBuilder::mixture_weight(const JointState& x, const Belief& b,
                                   const AgentControl& uH) const {
    const HumanLocalState xh = human_view(x, table_.robot_ref_speed);
    const auto& lattice = filter_.action_lattice();
    double w = 0.0;
    for (std::size_t h = 0; h < filter_.params().size(); ++h) {
        const auto d = action_likelihood(filter_.basis(), filter_.params().entries[h], xh, lattice);
        for (std::size_t m = 0; m < lattice.size(); ++m) {
            if ((lattice[m].vec() - uH.vec()).squaredNorm() < 1e-18)
                w += b.w(static_cast<Eigen::Index>(h)) * d.weights[m];
        }
    }
    return w;
}

AgentControl TreeBuilder::most_likely_human_action(const JointState& x, const Belief& b) const {
    const HumanLocalState xh = human_view(x, table_.robot_ref_speed);
    const auto& lattice = filter_.action_lattice();
    std::vector<double> mix(lattice.size(), 0.0);
    for (std::size_t h = 0; h < filter_.params().size(); ++h) {
        const auto d = action_likelihood(filter_.basis(), filter_.params().entries[h], xh, lattice);
        for (std::size_t m = 0; m < lattice.size(); ++m)
            mix[m] += b.w(static_cast<Eigen::Index>(h)) * d.weights[m];
    }
    std::size_t best = 0;
    for (std::size_t m = 1; m < lattice.size(); ++m)
        if (mix[m] > mix[best]) best = m;
    return lattice[best];
}

void TreeBuilder::fill_human_moments(TreeNode& n) const {
    const HumanLocalState xh = human_view(n.x, table_.robot_ref_speed);
    const std::size_t nh = filter_.params().size();
    n.human_mean.resize(nh);
    n.human_cov.resize(nh);
    for (std::size_t h = 0; h < nh; ++h) {
        HumanParams p = filter_.params().entries[h];
        p.beta = std::max(p.beta, 1e-6);  // beta = 0 has no covariance; mean is unaffected
        const auto g = gaussian_approx(filter_.basis(), p, xh);
        n.human_mean[h] = g.mean;
        n.human_cov[h] = g.covariance;
    }
}

void TreeBuilder::rollout(ScenarioTree& tree, int start,
                          const std::optional<AgentControl>& branch_action) const {
    int cur = start;
    const int t_start = tree.nodes[static_cast<std::size_t>(cur)].t;
    for (int k = t_start; k < tree.horizon; ++k) {
        auto& n = tree.nodes[static_cast<std::size_t>(cur)];
        if (!n.has_action) {
            const AgentControl raw = qmdp_policy(table_, cert_, n.x, n.b);
            if (opts_.apply_shield && in_shielding_set(cert_, n.x, raw)) {
                n.uR = safe_action(cert_, n.x);
                n.shielded = true;
                tree.shield_set.push_back(n.id);
            } else {
                n.uR = raw;
            }
            n.has_action = true;
        }

        AgentControl uH;
        if (k == t_start && branch_action.has_value() && tree.nodes.size() > 1) {
            uH = *branch_action;
        } else {
            uH = most_likely_human_action(n.x, n.b);
        }

        TreeNode child;
        child.id = static_cast<int>(tree.nodes.size());
        child.parent = n.id;
        child.t = k + 1;
        child.uH_edge = uH;
        child.pbar = mixture_weight(n.x, n.b, uH);
        child.p_raw = n.p_raw * child.pbar;
        child.x = step_joint(n.x, n.uR, uH, table_.dt);
        child.b = filter_.belief_step(n.b, human_view(n.x, table_.robot_ref_speed), uH);
        fill_human_moments(child);
        n.children.push_back(child.id);
        tree.nodes.push_back(std::move(child));
        cur = tree.nodes.back().id;
    }
}

std::vector<JointState> TreeBuilder::simulate_scenario(const ScenarioTree& tree, int start,
                                                       const AgentControl& first_uH) const {
    // Prefix: root path up to (and including) the branch node.
    std::vector<JointState> states = tree.scenario_states(start);
    JointState x = tree.nodes[static_cast<std::size_t>(start)].x;
    Belief b = tree.nodes[static_cast<std::size_t>(start)].b;
    const int t_start = tree.nodes[static_cast<std::size_t>(start)].t;
    for (int k = t_start; k < tree.horizon; ++k) {
        AgentControl uR;
        if (k == t_start) {
            const auto& n = tree.nodes[static_cast<std::size_t>(start)];
            uR = n.has_action ? n.uR : qmdp_policy(table_, cert_, x, b);
        } else {
            uR = qmdp_policy(table_, cert_, x, b);
        }
        if (opts_.apply_shield && in_shielding_set(cert_, x, uR)) uR = safe_action(cert_, x);
        const AgentControl uH = (k == t_start) ? first_uH : most_likely_human_action(x, b);
        const JointState nx = step_joint(x, uR, uH, table_.dt);
        b = filter_.belief_step(b, human_view(x, table_.robot_ref_speed), uH);
        x = nx;
        states.push_back(x);
    }
    return states;
}

std::optional<TreeBuilder::BranchPick> TreeBuilder::get_branch_node(ScenarioTree& tree,
                                                                    std::mt19937_64& rng) const {
    const std::size_t lattice_size = filter_.action_lattice().size();
    while (true) {
        // Priority: smallest time step, then highest raw path probability,
        // then lowest id.
        int pick = -1;
        for (const auto& n : tree.nodes) {
            if (tree.is_leaf(n) || n.exhausted) continue;
            if (n.children.size() >= lattice_size) continue;
            if (pick == -1) {
                pick = n.id;
                continue;
            }
            const auto& cur = tree.nodes[static_cast<std::size_t>(pick)];
            if (n.t < cur.t || (n.t == cur.t && n.p_raw > cur.p_raw)) pick = n.id;
        }
        if (pick == -1) return std::nullopt;

        auto& node = tree.nodes[static_cast<std::size_t>(pick)];
        const HumanLocalState xh = human_view(node.x, table_.robot_ref_speed);
        DiscreteActionDistribution mix;
        mix.actions = filter_.action_lattice();
        mix.weights.assign(mix.actions.size(), 0.0);
        for (std::size_t h = 0; h < filter_.params().size(); ++h) {
            const auto d =
                action_likelihood(filter_.basis(), filter_.params().entries[h], xh, mix.actions);
            for (std::size_t m = 0; m < mix.actions.size(); ++m)
                mix.weights[m] += node.b.w(static_cast<Eigen::Index>(h)) * d.weights[m];
        }

        // Existing scenarios to be distinct from.
        std::vector<Eigen::VectorXd> existing;
        for (int leaf : tree.leaves()) existing.push_back(stack_states(tree.scenario_states(leaf)));
        const Eigen::Index dim = 4 * static_cast<Eigen::Index>(tree.horizon + 1);
        const Eigen::MatrixXd H = Eigen::MatrixXd::Identity(dim, dim);
        const double threshold =
            opts_.similarity_threshold_per_dim * static_cast<double>(dim);

        double best_dist = -1.0;
        AgentControl best_action;
        for (std::size_t s = 0; s < opts_.branch_samples; ++s) {
            const AgentControl cand = sample_action(mix, rng);
            const auto states = simulate_scenario(tree, pick, cand);
            const Eigen::VectorXd xi = stack_states(states);
            double min_dist = std::numeric_limits<double>::infinity();
            for (const auto& e : existing)
                min_dist = std::min(min_dist, scenario_distance(xi, e, H));
            if (min_dist > threshold && min_dist > best_dist) {
                best_dist = min_dist;
                best_action = cand;
            }
        }
        if (best_dist < 0.0) {
            node.exhausted = true;
            continue;  // all candidates too similar; try the next eligible node
        }
        return BranchPick{pick, best_action};
    }
}

void TreeBuilder::normalize_path_probs(ScenarioTree& tree) const {
    std::vector<double> depth_sum(static_cast<std::size_t>(tree.horizon) + 1, 0.0);
    for (const auto& n : tree.nodes) depth_sum[static_cast<std::size_t>(n.t)] += n.p_raw;
    for (auto& n : tree.nodes) {
        const double total = depth_sum[static_cast<std::size_t>(n.t)];
        if (!(total > 0.0)) throw std::runtime_error("normalize_path_probs: zero depth mass");
        n.p = n.p_raw / total;
    }
}

ScenarioTree TreeBuilder::build(const JointState& x, const Belief& b,
                                std::mt19937_64& rng) const {
    if (!cert_.in_safe_set(x))
        throw std::runtime_error("build_tree: root state outside the safe set; shield first");
    if (!b.valid(1e-9)) throw std::invalid_argument("build_tree: invalid belief");

    ScenarioTree tree;
    tree.horizon = opts_.horizon;
    tree.cap = opts_.max_nodes;
    TreeNode root;
    root.id = 0;
    root.t = 0;
    root.x = x;
    root.b = b;
    fill_human_moments(root);
    tree.nodes.push_back(std::move(root));

    std::optional<BranchPick> branch = BranchPick{0, AgentControl{}};
    bool first = true;
    while (tree.nodes.size() <= tree.cap && branch.has_value()) {
        rollout(tree, branch->node,
                first ? std::nullopt : std::optional<AgentControl>(branch->action));
        first = false;
        if (tree.nodes.size() > tree.cap) break;
        branch = get_branch_node(tree, rng);
    }
    normalize_path_probs(tree);
    return tree;
}

}  // namespace sap
