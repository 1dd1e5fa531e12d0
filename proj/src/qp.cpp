#include "sap/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace sap {

bool QpProblem::well_formed() const {
    const auto n = q.size();
    const auto m = l.size();
    if (P.rows() != n || P.cols() != n) return false;
    if (A.rows() != m || A.cols() != n) return false;
    if (u.size() != m) return false;
    if (!P.allFinite() || !q.allFinite() || !A.allFinite()) return false;
    return true;
}

std::string to_string(QpStatus s) {
    switch (s) {
        case QpStatus::kOptimal: return "optimal";
        case QpStatus::kMaxIterations: return "max-iterations";
        case QpStatus::kInfeasible: return "infeasible";
        case QpStatus::kBadProblem: return "bad-problem";
    }
    return "unknown";
}

namespace {

struct Residuals {
    double primal;
    double dual;
    double scale_pri;   // magnitude of Az, for the relative criterion
    double scale_dual;  // magnitude of Pz / q / A'y
};

Residuals residuals(const QpProblem& p, const Eigen::VectorXd& z, const Eigen::VectorXd& y) {
    Residuals r{0.0, 0.0, 0.0, 0.0};
    const Eigen::VectorXd pz = p.P * z;
    r.scale_dual = std::max(pz.lpNorm<Eigen::Infinity>(), p.q.lpNorm<Eigen::Infinity>());
    if (p.num_constraints() > 0) {
        const Eigen::VectorXd az = p.A * z;
        // distance of Az to the box [l, u]
        const Eigen::VectorXd viol =
            (p.l - az).cwiseMax(0.0).cwiseMax((az - p.u).cwiseMax(0.0));
        r.primal = viol.size() ? viol.lpNorm<Eigen::Infinity>() : 0.0;
        r.scale_pri = az.lpNorm<Eigen::Infinity>();
        const Eigen::VectorXd aty = p.A.transpose() * y;
        r.scale_dual = std::max(r.scale_dual, aty.lpNorm<Eigen::Infinity>());
        r.dual = (pz + p.q + aty).lpNorm<Eigen::Infinity>();
    } else {
        r.dual = (pz + p.q).lpNorm<Eigen::Infinity>();
    }
    return r;
}

bool converged(const Residuals& r, const QpOptions& opts) {
    return r.primal <= opts.tol + opts.tol_rel * r.scale_pri &&
           r.dual <= opts.tol + opts.tol_rel * r.scale_dual;
}

// Equality-constrained solve on the detected active set; returns true when the
// polished point is feasible and KKT-consistent.
bool polish(const QpProblem& p, const QpOptions& opts, Eigen::VectorXd& z, Eigen::VectorXd& y) {
    const auto m = p.num_constraints();
    const auto n = p.num_vars();
    std::vector<Eigen::Index> active;
    std::vector<double> rhs;
    const Eigen::VectorXd az = p.A * z;
    for (Eigen::Index i = 0; i < m; ++i) {
        const bool eq = p.u(i) - p.l(i) < 1e-12;
        const double act_tol = 1e3 * opts.tol;
        if (eq || (y(i) < -opts.tol && az(i) - p.l(i) < act_tol)) {
            active.push_back(i);
            rhs.push_back(p.l(i));
        } else if (y(i) > opts.tol && p.u(i) - az(i) < act_tol) {
            active.push_back(i);
            rhs.push_back(p.u(i));
        }
    }
    const auto k = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + k, n + k);
    kkt.topLeftCorner(n, n) = p.P + 1e-12 * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b(n + k);
    b.head(n) = -p.q;
    for (Eigen::Index j = 0; j < k; ++j) {
        kkt.block(n + j, 0, 1, n) = p.A.row(active[static_cast<std::size_t>(j)]);
        kkt.block(0, n + j, n, 1) = p.A.row(active[static_cast<std::size_t>(j)]).transpose();
        kkt(n + j, n + j) = -1e-12;
        b(n + j) = rhs[static_cast<std::size_t>(j)];
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(kkt);
    if (ldlt.info() != Eigen::Success) return false;
    const Eigen::VectorXd sol = ldlt.solve(b);
    Eigen::VectorXd zp = sol.head(n);
    Eigen::VectorXd yp = Eigen::VectorXd::Zero(m);
    for (Eigen::Index j = 0; j < k; ++j) yp(active[static_cast<std::size_t>(j)]) = sol(n + j);

    const Residuals rp = residuals(p, zp, yp);
    const Residuals r0 = residuals(p, z, y);
    if (rp.primal <= std::max(r0.primal, opts.tol) && rp.dual <= std::max(r0.dual, opts.tol)) {
        z = zp;
        y = yp;
        return true;
    }
    return false;
}

}  // namespace

QpSolution solve_qp(const QpProblem& p, const QpOptions& opts) {
    QpSolution sol;
    if (!p.well_formed()) {
        sol.status = QpStatus::kBadProblem;
        return sol;
    }
    const auto n = p.num_vars();
    const auto m = p.num_constraints();
    for (Eigen::Index i = 0; i < m; ++i) {
        if (p.l(i) > p.u(i) + 1e-12) {
            sol.status = QpStatus::kInfeasible;
            return sol;
        }
    }

    // Per-row penalty: stiffer on equality rows.
    double rho_base = opts.rho;
    Eigen::VectorXd rho(m);
    Eigen::LLT<Eigen::MatrixXd> llt;
    const auto refactor = [&]() {
        for (Eigen::Index i = 0; i < m; ++i)
            rho(i) = (p.u(i) - p.l(i) < 1e-12) ? rho_base * 1e3 : rho_base;
        Eigen::MatrixXd kkt = p.P + opts.sigma * Eigen::MatrixXd::Identity(n, n);
        if (m > 0) kkt += p.A.transpose() * rho.asDiagonal() * p.A;
        llt.compute(kkt);
        return llt.info() == Eigen::Success;
    };
    if (!refactor()) {
        sol.status = QpStatus::kBadProblem;
        return sol;
    }

    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
    if (m > 0) w = p.l.cwiseMax(Eigen::VectorXd::Zero(m)).cwiseMin(p.u);

    std::size_t it = 0;
    Residuals r{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    for (; it < opts.max_iters; ++it) {
        Eigen::VectorXd rhs = opts.sigma * z - p.q;
        if (m > 0) rhs += p.A.transpose() * (rho.asDiagonal() * w - y);
        const Eigen::VectorXd zt = llt.solve(rhs);
        const Eigen::VectorXd znew = opts.alpha * zt + (1.0 - opts.alpha) * z;
        if (m > 0) {
            const Eigen::VectorXd wt = p.A * zt;
            const Eigen::VectorXd what = opts.alpha * wt + (1.0 - opts.alpha) * w;
            const Eigen::VectorXd wnew =
                (what + rho.cwiseInverse().cwiseProduct(y)).cwiseMax(p.l).cwiseMin(p.u);
            y += rho.asDiagonal() * (what - wnew);
            w = wnew;
        }
        z = znew;
        if (it % 10 == 9 || it + 1 == opts.max_iters) {
            r = residuals(p, z, y);
            if (converged(r, opts)) {
                ++it;
                break;
            }
            // Rebalance the penalty when the residuals diverge in scale.
            if (m > 0 && it % 200 == 199) {
                const double ratio = (r.primal + 1e-12) / (r.dual + 1e-12);
                if (ratio > 5.0 || ratio < 0.2) {
                    rho_base *= std::clamp(std::sqrt(ratio), 0.03, 30.0);
                    if (!refactor()) break;
                }
            }
        }
    }

    if (opts.polish && m > 0) sol.polished = polish(p, opts, z, y);
    r = residuals(p, z, y);

    sol.z = z;
    sol.y = y;
    sol.objective = 0.5 * z.dot(p.P * z) + p.q.dot(z);
    sol.primal_residual = r.primal;
    sol.dual_residual = r.dual;
    sol.iterations = it;
    sol.status = converged(r, opts) ? QpStatus::kOptimal : QpStatus::kMaxIterations;
    return sol;
}

}  // namespace sap
