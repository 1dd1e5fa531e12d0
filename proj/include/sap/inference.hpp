#ifndef SAP_INFERENCE_HPP
#define SAP_INFERENCE_HPP

#include <Eigen/Dense>
#include <vector>

#include "sap/human.hpp"

namespace sap {

/// Probability simplex over the (beta, theta) hypothesis grid.
struct Belief {
    Eigen::VectorXd w;

    static Belief uniform(std::size_t n);
    bool valid(double tol = 1e-12) const;
    void normalize();
};

/// Row-stochastic hypothesis transition matrix. The default is sticky: stay
/// with probability 1 - eps, otherwise jump uniformly to another hypothesis.
struct TransitionModel {
    Eigen::MatrixXd P;

    static TransitionModel sticky(std::size_t n, double eps);
    static TransitionModel identity(std::size_t n);
    bool valid(double tol = 1e-12) const;
};

enum class LikelihoodMode {
    kDiscreteSnap,     // snap the observed action to the nearest lattice point
    kGaussianDensity,  // evaluate the per-hypothesis Gaussian density
};

/// Recursive Bayesian estimator over the hypothesis grid; pure value-in/out.
class BayesFilter {
public:
    BayesFilter(IntentBasis basis, ParamGrid params, std::vector<AgentControl> action_lattice,
                TransitionModel transition, LikelihoodMode mode = LikelihoodMode::kDiscreteSnap);

    /// Per-hypothesis likelihood of the observed human action (log-space).
    Eigen::VectorXd log_likelihood(const HumanLocalState& xH, const AgentControl& uH) const;

    /// Bayes measurement update; throws if the total likelihood underflows.
    Belief measurement_update(const Belief& b, const HumanLocalState& xH,
                              const AgentControl& uH) const;

    /// Hypothesis drift: b' = P^T b.
    Belief time_update(const Belief& b) const;

    /// Belief dynamics g: measurement update followed by the time update.
    Belief belief_step(const Belief& b, const HumanLocalState& xH, const AgentControl& uH) const;

    const ParamGrid& params() const { return params_; }
    const IntentBasis& basis() const { return basis_; }
    const std::vector<AgentControl>& action_lattice() const { return lattice_; }
    const TransitionModel& transition() const { return transition_; }

private:
    IntentBasis basis_;
    ParamGrid params_;
    std::vector<AgentControl> lattice_;
    TransitionModel transition_;
    LikelihoodMode mode_;
};

}  // namespace sap

#endif
