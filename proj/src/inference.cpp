#include "sap/inference.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace sap {

Belief Belief::uniform(std::size_t n) {
    Belief b;
    b.w = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));
    return b;
}

bool Belief::valid(double tol) const {
    if (w.size() == 0) return false;
    if ((w.array() < -tol).any()) return false;
    return std::abs(w.sum() - 1.0) <= tol;
}

void Belief::normalize() {
    const double s = w.sum();
    if (s <= 0.0) throw std::runtime_error("Belief::normalize: nonpositive mass");
    w /= s;
}

TransitionModel TransitionModel::sticky(std::size_t n, double eps) {
    TransitionModel t;
    const auto m = static_cast<Eigen::Index>(n);
    if (n == 1) {
        t.P = Eigen::MatrixXd::Ones(1, 1);
        return t;
    }
    t.P = Eigen::MatrixXd::Constant(m, m, eps / static_cast<double>(n - 1));
    t.P.diagonal().setConstant(1.0 - eps);
    return t;
}

TransitionModel TransitionModel::identity(std::size_t n) {
    TransitionModel t;
    t.P = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    return t;
}

bool TransitionModel::valid(double tol) const {
    if (P.rows() != P.cols() || P.rows() == 0) return false;
    if ((P.array() < -tol).any()) return false;
    for (Eigen::Index i = 0; i < P.rows(); ++i)
        if (std::abs(P.row(i).sum() - 1.0) > tol) return false;
    return true;
}

BayesFilter::BayesFilter(IntentBasis basis, ParamGrid params,
                         std::vector<AgentControl> action_lattice, TransitionModel transition,
                         LikelihoodMode mode)
    : basis_(std::move(basis)),
      params_(std::move(params)),
      lattice_(std::move(action_lattice)),
      transition_(std::move(transition)),
      mode_(mode) {
    if (lattice_.empty()) throw std::invalid_argument("BayesFilter: empty action lattice");
    if (static_cast<std::size_t>(transition_.P.rows()) != params_.size())
        throw std::invalid_argument("BayesFilter: transition/hypothesis size mismatch");
}

Eigen::VectorXd BayesFilter::log_likelihood(const HumanLocalState& xH,
                                            const AgentControl& uH) const {
    const auto n = static_cast<Eigen::Index>(params_.size());
    Eigen::VectorXd ll(n);
    if (mode_ == LikelihoodMode::kDiscreteSnap) {
        std::size_t snapped = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < lattice_.size(); ++i) {
            const double d = (lattice_[i].vec() - uH.vec()).squaredNorm();
            if (d < best) {
                best = d;
                snapped = i;
            }
        }
        for (Eigen::Index k = 0; k < n; ++k) {
            const auto d = action_likelihood(basis_, params_.entries[k], xH, lattice_);
            ll(k) = std::log(std::max(d.weights[snapped], 1e-300));
        }
    } else {
        for (Eigen::Index k = 0; k < n; ++k) {
            const auto& p = params_.entries[k];
            if (p.beta <= 0.0) {
                // Uniform over the control box.
                const auto& b = basis_.bounds;
                const double area = (b.v_lat_max - b.v_lat_min) * (b.a_max - b.a_min);
                ll(k) = -std::log(area);
                continue;
            }
            const auto g = gaussian_approx(basis_, p, xH);
            ll(k) = std::log(std::max(g.density(uH), 1e-300));
        }
    }
    return ll;
}

Belief BayesFilter::measurement_update(const Belief& b, const HumanLocalState& xH,
                                       const AgentControl& uH) const {
    if (!b.valid()) throw std::invalid_argument("measurement_update: invalid belief");
    const Eigen::VectorXd ll = log_likelihood(xH, uH);
    const double mx = ll.maxCoeff();
    Belief out;
    out.w = (ll.array() - mx).exp() * b.w.array();
    const double total = out.w.sum();
    if (!(total > 1e-300))
        throw std::runtime_error("measurement_update: observation inconsistent with all hypotheses");
    out.w /= total;
    return out;
}

Belief BayesFilter::time_update(const Belief& b) const {
    Belief out;
    out.w = transition_.P.transpose() * b.w;
    out.normalize();
    return out;
}

Belief BayesFilter::belief_step(const Belief& b, const HumanLocalState& xH,
                                const AgentControl& uH) const {
    return time_update(measurement_update(b, xH, uH));
}

}  // namespace sap
