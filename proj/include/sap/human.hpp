#ifndef SAP_HUMAN_HPP
#define SAP_HUMAN_HPP

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "sap/dynamics.hpp"

namespace sap {

/// Planning-side view of the human: lateral position and longitudinal speed.
struct HumanLocalState {
    double p_y = 0.0;  // m
    double v = 0.0;    // m/s
};

/// One quadratic intent: track a target lateral position at a target speed.
/// Cost is evaluated at the one-step-ahead state plus a control-effort term,
/// which makes the u-Hessian positive definite.
struct IntentTarget {
    double lane = 0.0;      // m
    double speed = 30.0;    // m/s
};

struct IntentBasis {
    IntentTarget target1;   // intent selected by theta = 1
    IntentTarget target2;   // intent selected by theta = 0
    double w_lane = 1.0;
    double w_speed = 0.1;
    double w_effort = 0.1;
    double dt = 0.2;
    ControlBounds bounds;

    /// u-Hessian of each basis (identical for both); symmetric positive definite.
    Eigen::Matrix2d u_hessian() const;
};

struct HumanParams {
    double beta = 1.0;   // rationality coefficient, >= 0
    double theta = 0.5;  // intent weight in [0, 1]
};

/// Finite hypothesis support over (beta, theta).
struct ParamGrid {
    std::vector<HumanParams> entries;

    static ParamGrid make(const std::vector<double>& betas, const std::vector<double>& thetas);
    std::size_t size() const { return entries.size(); }
};

struct DiscreteActionDistribution {
    std::vector<AgentControl> actions;
    std::vector<double> weights;  // sums to 1
};

struct GaussianActionDistribution {
    Vec2 mean;
    Eigen::Matrix2d covariance;

    double density(const AgentControl& u) const;
};

/// Cost-like state-action value Q_theta = theta*Q1 + (1-theta)*Q2.
double q_value(const IntentBasis& basis, double theta, const HumanLocalState& xH,
               const AgentControl& uH);

/// Boltzmann distribution over a discrete action lattice: softmax of -beta*Q,
/// computed with max subtraction. beta = 0 gives the uniform distribution.
DiscreteActionDistribution action_likelihood(const IntentBasis& basis, const HumanParams& params,
                                             const HumanLocalState& xH,
                                             const std::vector<AgentControl>& actions);

/// Gaussian approximation: mean is the clamped quadratic minimizer, covariance
/// (beta * Lambda)^-1. Throws for beta = 0.
GaussianActionDistribution gaussian_approx(const IntentBasis& basis, const HumanParams& params,
                                           const HumanLocalState& xH);

AgentControl sample_action(const DiscreteActionDistribution& dist, std::mt19937_64& rng);
AgentControl sample_action(const GaussianActionDistribution& dist, std::mt19937_64& rng);

}  // namespace sap

#endif
