#include "sap/smpc.hpp"

#include <chrono>
#include <limits>
#include <stdexcept>

namespace sap {

std::optional<CbfHalfspace> cbf_halfspace(const SafetyCertificate& cert, const ScenarioTree& tree,
                                          int node_id) {
    const auto& n = tree.nodes[static_cast<std::size_t>(node_id)];
    if (n.children.empty()) return std::nullopt;
    const AgentControl uH =
        tree.nodes[static_cast<std::size_t>(n.children.front())].uH_edge;
    const JointState next = step_joint(n.x, safe_action(cert, n.x), uH, cert.dt);
    CbfHalfspace hs;
    hs.normal = next.vec() - n.x.vec();
    hs.anchor = n.x;
    if (hs.normal.norm() < 1e-9) return std::nullopt;
    return hs;
}

CbfRow cbf_constraint(const LinearizedDynamics& lin, const CbfHalfspace& hs, double gamma) {
    if (gamma <= 0.0 || gamma > 1.0) throw std::invalid_argument("cbf_constraint: gamma in (0,1]");
    CbfRow row;
    row.normal = hs.normal;
    row.gamma = gamma;
    const Mat4 Ag = lin.A + (gamma - 1.0) * Mat4::Identity();
    // Caller composes the state part through the condensation map; here we
    // expose the raw coefficient blocks via coeffs = [n'Ag | n'BR | n'BH].
    row.coeffs.resize(8);
    row.coeffs.segment<4>(0) = (hs.normal.transpose() * Ag).transpose();
    row.coeffs.segment<2>(4) = (hs.normal.transpose() * lin.BR).transpose();
    row.coeffs.segment<2>(6) = (hs.normal.transpose() * lin.BH).transpose();
    return row;
}

ScenarioPlanner::ScenarioPlanner(const SafetyCertificate& cert, const QmdpTable& table,
                                 const BayesFilter& filter, PlannerConfig config, PlannerMode mode)
    : cert_(cert),
      table_(table),
      filter_(filter),
      config_(std::move(config)),
      mode_(mode),
      builder_(cert, table, filter, config_.tree) {}

namespace {

// Subgradient of the piecewise-affine failure margin at x.
Vec4 failure_margin_gradient(const JointState& x, const FailureSpec& spec) {
    const double m_sep = std::max(std::abs(x.px_r) - spec.sep_long,
                                  std::abs(x.py_R - x.py_H) - spec.sep_lat);
    const double m_road = spec.road_half - std::abs(x.py_R);
    Vec4 g = Vec4::Zero();
    if (m_road < m_sep) {
        g(2) = x.py_R >= 0 ? -1.0 : 1.0;
    } else if (std::abs(x.px_r) - spec.sep_long >= std::abs(x.py_R - x.py_H) - spec.sep_lat) {
        g(0) = x.px_r >= 0 ? 1.0 : -1.0;
    } else {
        const double s = (x.py_R - x.py_H) >= 0 ? 1.0 : -1.0;
        g(2) = s;
        g(3) = -s;
    }
    return g;
}

}  // namespace

QpAssembly ScenarioPlanner::assemble_qp(const ScenarioTree& tree) const {
    const std::size_t nn = tree.nodes.size();
    const std::size_t nh = filter_.params().size();
    const TimeStep dt = table_.dt;

    QpAssembly asmb;
    asmb.var_of_node.assign(nn, -1);
    asmb.u_nom.resize(nn);
    Eigen::Index nv = 0;
    for (const auto& n : tree.nodes) {
        asmb.u_nom[static_cast<std::size_t>(n.id)] = n.has_action ? n.uR : AgentControl{};
        if (!tree.is_leaf(n) && n.has_action)
            asmb.var_of_node[static_cast<std::size_t>(n.id)] = static_cast<int>(nv++);
    }
    asmb.n_controls = nv;
    const Eigen::Index nz0 = 2 * nv;

    // Condensation: dx_n = S_n * du_stack + d_n^hyp, built along parent links.
    const LinearizedDynamics lin =
        linearize(tree.nodes[0].x, asmb.u_nom[0], AgentControl{}, dt);
    std::vector<Eigen::MatrixXd> S(nn);
    std::vector<std::vector<Vec4>> d(nn);
    S[0] = Eigen::MatrixXd::Zero(4, nz0);
    d[0].assign(nh, Vec4::Zero());
    for (std::size_t i = 1; i < nn; ++i) {
        const auto& n = tree.nodes[i];
        const auto& par = tree.nodes[static_cast<std::size_t>(n.parent)];
        const int pv = asmb.var_of_node[static_cast<std::size_t>(par.id)];
        S[i] = lin.A * S[static_cast<std::size_t>(par.id)];
        if (pv >= 0) S[i].block<4, 2>(0, 2 * pv) += lin.BR;
        d[i].resize(nh);
        for (std::size_t h = 0; h < nh; ++h) {
            const Vec2 duH = par.human_mean[h] - n.uH_edge.vec();
            d[i][h] = lin.A * d[static_cast<std::size_t>(par.id)][h] + lin.BH * duH;
        }
    }

    // Count slack variables first.
    std::vector<int> cbf_nodes;
    if (mode_ == PlannerMode::kSharp) {
        for (int id : tree.shield_set) {
            if (asmb.var_of_node[static_cast<std::size_t>(id)] < 0) continue;
            if (cbf_halfspace(cert_, tree, id).has_value())
                cbf_nodes.push_back(id);
            else
                ++asmb.skipped_degenerate_normals;
        }
    }
    const Eigen::Index n_prox = mode_ == PlannerMode::kBaseline ? static_cast<Eigen::Index>(nn) : 0;
    asmb.n_slacks = static_cast<Eigen::Index>(cbf_nodes.size()) + n_prox;
    const Eigen::Index nz = nz0 + asmb.n_slacks;

    QpProblem& p = asmb.problem;
    p.P = Eigen::MatrixXd::Zero(nz, nz);
    p.q = Eigen::VectorXd::Zero(nz);

    const Mat4 Q = table_.cost.state_weight();
    const Eigen::Matrix2d R = table_.cost.control_weight();

    // Stage costs (certainty-equivalent: per-hypothesis human means only).
    for (const auto& n : tree.nodes) {
        const std::size_t i = static_cast<std::size_t>(n.id);
        const int v = asmb.var_of_node[i];
        if (tree.is_leaf(n)) continue;
        for (std::size_t h = 0; h < nh; ++h) {
            const double w = n.p * n.b.w(static_cast<Eigen::Index>(h));
            if (w <= 0.0) continue;
            const Vec4 e = n.x.vec() + d[i][h] - table_.cost.state_ref(n.x);
            p.P.topLeftCorner(nz0, nz0) += 2.0 * w * S[i].transpose() * Q * S[i];
            p.q.head(nz0) += 2.0 * w * S[i].transpose() * (Q * e);
            if (v >= 0) {
                p.P.block<2, 2>(2 * v, 2 * v) += 2.0 * w * R;
                p.q.segment<2>(2 * v) += 2.0 * w * (R * asmb.u_nom[i].vec());
            }
        }
    }

    // Terminal cost: diagonal quadratic fit of the QMDP cost-to-go per leaf.
    for (int leaf : tree.leaves()) {
        const auto& n = tree.nodes[static_cast<std::size_t>(leaf)];
        const std::size_t i = static_cast<std::size_t>(leaf);
        Vec4 grad;
        Vec4 curv;
        const double v0 = terminal_value(table_, cert_, n.x, n.b).value;
        for (int dim = 0; dim < 4; ++dim) {
            const double h = 0.5 * table_.xgrid.step(dim);
            Vec4 vp = n.x.vec(), vm = n.x.vec();
            vp(dim) += h;
            vm(dim) -= h;
            const double fp = terminal_value(table_, cert_, JointState::from_vec(vp), n.b).value;
            const double fm = terminal_value(table_, cert_, JointState::from_vec(vm), n.b).value;
            grad(dim) = (fp - fm) / (2.0 * h);
            curv(dim) = std::max(0.0, (fp - 2.0 * v0 + fm) / (h * h));
        }
        const Mat4 D = curv.asDiagonal();
        for (std::size_t h = 0; h < nh; ++h) {
            const double w = n.p * n.b.w(static_cast<Eigen::Index>(h));
            if (w <= 0.0) continue;
            p.P.topLeftCorner(nz0, nz0) += w * S[i].transpose() * D * S[i];
            p.q.head(nz0) += w * S[i].transpose() * (grad + D * d[i][h]);
        }
    }

    // Constraints: control boxes, then soft safety rows with slack >= 0.
    const Eigen::Index n_box = nz0;
    const Eigen::Index n_soft = asmb.n_slacks;
    const Eigen::Index mrows = n_box + 2 * n_soft;  // soft row + slack bound each
    p.A = Eigen::MatrixXd::Zero(mrows, nz);
    p.l = Eigen::VectorXd::Constant(mrows, -std::numeric_limits<double>::infinity());
    p.u = Eigen::VectorXd::Constant(mrows, std::numeric_limits<double>::infinity());

    const ControlBounds& rb = config_.robot_bounds;
    for (const auto& n : tree.nodes) {
        const int v = asmb.var_of_node[static_cast<std::size_t>(n.id)];
        if (v < 0) continue;
        const Vec2 un = asmb.u_nom[static_cast<std::size_t>(n.id)].vec();
        p.A(2 * v, 2 * v) = 1.0;
        p.l(2 * v) = rb.v_lat_min - un(0);
        p.u(2 * v) = rb.v_lat_max - un(0);
        p.A(2 * v + 1, 2 * v + 1) = 1.0;
        p.l(2 * v + 1) = rb.a_min - un(1);
        p.u(2 * v + 1) = rb.a_max - un(1);
    }

    Eigen::Index row = n_box;
    Eigen::Index slack = nz0;
    if (mode_ == PlannerMode::kSharp) {
        for (int id : cbf_nodes) {
            const std::size_t i = static_cast<std::size_t>(id);
            const auto& n = tree.nodes[i];
            const int v = asmb.var_of_node[i];
            const auto hs = cbf_halfspace(cert_, tree, id);
            CbfRow cr = cbf_constraint(lin, *hs, config_.gamma);
            cr.node_id = id;

            // Belief-mean frozen terms.
            Vec4 dbar = Vec4::Zero();
            Vec2 duH_bar = Vec2::Zero();
            const auto& child = tree.nodes[static_cast<std::size_t>(n.children.front())];
            for (std::size_t h = 0; h < nh; ++h) {
                const double bw = n.b.w(static_cast<Eigen::Index>(h));
                dbar += bw * d[i][h];
                duH_bar += bw * (n.human_mean[h] - child.uH_edge.vec());
            }
            const Mat4 Ag = lin.A + (config_.gamma - 1.0) * Mat4::Identity();
            const double frozen = hs->normal.dot(Ag * dbar) + hs->normal.dot(lin.BH * duH_bar);

            Eigen::RowVectorXd arow = Eigen::RowVectorXd::Zero(nz);
            arow.head(nz0) = hs->normal.transpose() * Ag * S[i];
            arow.segment<2>(2 * v) += (hs->normal.transpose() * lin.BR);
            arow(slack) = 1.0;
            p.A.row(row) = arow;
            p.l(row) = -frozen;
            cr.constant = frozen;
            asmb.cbf_rows.push_back(std::move(cr));

            p.A(row + 1, slack) = 1.0;
            p.l(row + 1) = 0.0;
            p.q(slack) += config_.slack_weight;
            p.P(slack, slack) += 1e-8;
            row += 2;
            ++slack;
        }
    } else if (mode_ == PlannerMode::kBaseline) {
        for (const auto& n : tree.nodes) {
            const std::size_t i = static_cast<std::size_t>(n.id);
            const double m0 = failure_margin(n.x, cert_.spec);
            const Vec4 g = failure_margin_gradient(n.x, cert_.spec);
            Vec4 dbar = Vec4::Zero();
            for (std::size_t h = 0; h < nh; ++h)
                dbar += n.b.w(static_cast<Eigen::Index>(h)) * d[i][h];

            Eigen::RowVectorXd arow = Eigen::RowVectorXd::Zero(nz);
            arow.head(nz0) = g.transpose() * S[i];
            arow(slack) = 1.0;
            p.A.row(row) = arow;
            p.l(row) = -(m0 + g.dot(dbar));
            p.A(row + 1, slack) = 1.0;
            p.l(row + 1) = 0.0;
            p.q(slack) += config_.baseline_weight;
            p.P(slack, slack) += 1e-8;
            row += 2;
            ++slack;
        }
    }

    return asmb;
}

PlanResult ScenarioPlanner::plan(const JointState& x, const Belief& b,
                                 std::mt19937_64& rng) const {
    const auto t0 = std::chrono::steady_clock::now();
    PlanResult res;
    auto finish = [&](AgentControl u) {
        res.action = u;
        res.diag.solve_ms = std::chrono::duration<double, std::milli>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
        return res;
    };

    if (!cert_.in_safe_set(x)) {
        // Out of the safe set: best-effort recovery, no tree.
        res.diag.fallback = true;
        return finish(safe_action(cert_, x));
    }

    const ScenarioTree tree = builder_.build(x, b, rng);
    res.diag.tree_nodes = tree.nodes.size();
    res.diag.shield_nodes = tree.shield_set.size();

    const QpAssembly asmb = assemble_qp(tree);
    const QpSolution sol = solve_qp(asmb.problem, config_.qp);
    res.diag.qp_status = to_string(sol.status);
    res.diag.primal_residual = sol.primal_residual;
    res.diag.dual_residual = sol.dual_residual;
    if (asmb.n_slacks > 0 && sol.status == QpStatus::kOptimal)
        res.diag.max_slack = sol.z.tail(asmb.n_slacks).maxCoeff();

    if (sol.status != QpStatus::kOptimal) {
        res.diag.fallback = true;
        return finish(qmdp_policy(table_, cert_, x, b));
    }

    const Vec2 du = sol.z.segment<2>(0);
    const Vec2 u = asmb.u_nom[0].vec() + du;
    const ControlBounds& rb = config_.robot_bounds;
    return finish(rb.clamp(AgentControl::from_vec(u)));
}

}  // namespace sap
