#include "sap/human.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sap {

Eigen::Matrix2d IntentBasis::u_hessian() const {
    Eigen::Matrix2d L = Eigen::Matrix2d::Zero();
    L(0, 0) = 2.0 * (w_lane * dt * dt + w_effort);
    L(1, 1) = 2.0 * (w_speed * dt * dt + w_effort);
    return L;
}

namespace {

double basis_cost(const IntentBasis& b, const IntentTarget& tgt, const HumanLocalState& xH,
                  const AgentControl& uH) {
    const double py_next = xH.p_y + uH.v_lat * b.dt;
    const double v_next = xH.v + uH.a * b.dt;
    return b.w_lane * (py_next - tgt.lane) * (py_next - tgt.lane) +
           b.w_speed * (v_next - tgt.speed) * (v_next - tgt.speed) +
           b.w_effort * (uH.v_lat * uH.v_lat + uH.a * uH.a);
}

// Gradient of Q_theta with respect to u at u = 0.
Vec2 mixed_gradient_at_zero(const IntentBasis& b, double theta, const HumanLocalState& xH) {
    const double lane = theta * b.target1.lane + (1.0 - theta) * b.target2.lane;
    const double speed = theta * b.target1.speed + (1.0 - theta) * b.target2.speed;
    Vec2 g;
    g(0) = 2.0 * b.w_lane * b.dt * (xH.p_y - lane);
    g(1) = 2.0 * b.w_speed * b.dt * (xH.v - speed);
    return g;
}

}  // namespace

ParamGrid ParamGrid::make(const std::vector<double>& betas, const std::vector<double>& thetas) {
    ParamGrid g;
    for (double b : betas)
        for (double t : thetas) {
            if (b < 0.0 || t < 0.0 || t > 1.0)
                throw std::invalid_argument("ParamGrid: beta >= 0 and theta in [0,1] required");
            g.entries.push_back({b, t});
        }
    if (g.entries.empty()) throw std::invalid_argument("ParamGrid: empty support");
    return g;
}

double q_value(const IntentBasis& basis, double theta, const HumanLocalState& xH,
               const AgentControl& uH) {
    if (theta < 0.0 || theta > 1.0) throw std::invalid_argument("q_value: theta outside [0,1]");
    return theta * basis_cost(basis, basis.target1, xH, uH) +
           (1.0 - theta) * basis_cost(basis, basis.target2, xH, uH);
}

DiscreteActionDistribution action_likelihood(const IntentBasis& basis, const HumanParams& params,
                                             const HumanLocalState& xH,
                                             const std::vector<AgentControl>& actions) {
    if (actions.empty()) throw std::invalid_argument("action_likelihood: no actions");
    DiscreteActionDistribution d;
    d.actions = actions;
    std::vector<double> logits(actions.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < actions.size(); ++i) {
        logits[i] = -params.beta * q_value(basis, params.theta, xH, actions[i]);
        mx = std::max(mx, logits[i]);
    }
    double total = 0.0;
    d.weights.resize(actions.size());
    for (std::size_t i = 0; i < actions.size(); ++i) {
        d.weights[i] = std::exp(logits[i] - mx);
        total += d.weights[i];
    }
    for (auto& w : d.weights) w /= total;
    return d;
}

GaussianActionDistribution gaussian_approx(const IntentBasis& basis, const HumanParams& params,
                                           const HumanLocalState& xH) {
    if (params.beta <= 0.0)
        throw std::invalid_argument("gaussian_approx: beta must be positive");
    const Eigen::Matrix2d L = basis.u_hessian();
    const Vec2 g = mixed_gradient_at_zero(basis, params.theta, xH);
    Vec2 mean = -L.ldlt().solve(g);
    mean(0) = std::clamp(mean(0), basis.bounds.v_lat_min, basis.bounds.v_lat_max);
    mean(1) = std::clamp(mean(1), basis.bounds.a_min, basis.bounds.a_max);
    GaussianActionDistribution out;
    out.mean = mean;
    out.covariance = (params.beta * L).inverse();
    return out;
}

double GaussianActionDistribution::density(const AgentControl& u) const {
    const Vec2 d = u.vec() - mean;
    const Eigen::Matrix2d inv = covariance.inverse();
    const double quad = d.dot(inv * d);
    const double det = covariance.determinant();
    return std::exp(-0.5 * quad) / (2.0 * M_PI * std::sqrt(det));
}

AgentControl sample_action(const DiscreteActionDistribution& dist, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double r = unif(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < dist.actions.size(); ++i) {
        acc += dist.weights[i];
        if (r <= acc) return dist.actions[i];
    }
    return dist.actions.back();
}

AgentControl sample_action(const GaussianActionDistribution& dist, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Matrix2d chol = Eigen::LLT<Eigen::Matrix2d>(dist.covariance).matrixL();
    Vec2 z(normal(rng), normal(rng));
    return AgentControl::from_vec(dist.mean + chol * z);
}

}  // namespace sap
