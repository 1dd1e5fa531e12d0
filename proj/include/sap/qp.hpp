#ifndef SAP_QP_HPP
#define SAP_QP_HPP

#include <Eigen/Dense>
#include <string>

namespace sap {

/// Convex QP in the form
///     min 0.5 z'Pz + q'z   s.t.  l <= Az <= u,
/// with equality rows encoded as l = u.
struct QpProblem {
    Eigen::MatrixXd P;
    Eigen::VectorXd q;
    Eigen::MatrixXd A;
    Eigen::VectorXd l;
    Eigen::VectorXd u;

    Eigen::Index num_vars() const { return q.size(); }
    Eigen::Index num_constraints() const { return l.size(); }
    bool well_formed() const;
};

enum class QpStatus { kOptimal, kMaxIterations, kInfeasible, kBadProblem };

struct QpSolution {
    Eigen::VectorXd z;       // primal
    Eigen::VectorXd y;       // dual
    double objective = 0.0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    QpStatus status = QpStatus::kBadProblem;
    std::size_t iterations = 0;
    bool polished = false;
};

struct QpOptions {
    double tol = 1e-6;      // absolute residual target
    double tol_rel = 1e-6;  // relative part, scaled by the iterate magnitudes
    std::size_t max_iters = 20000;
    double rho = 0.1;
    double sigma = 1e-6;
    double alpha = 1.6;
    bool polish = true;
};

/// Operator-splitting (ADMM) solver with an active-set polishing step.
/// Deterministic for identical inputs.
QpSolution solve_qp(const QpProblem& p, const QpOptions& opts = {});

std::string to_string(QpStatus s);

}  // namespace sap

#endif
