#ifndef SAP_SIM_HPP
#define SAP_SIM_HPP

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sap/smpc.hpp"

namespace sap {

/// Safe-velocity car-following parameters (responsive simulated human).
struct KraussParams {
    double accel = 3.0;          // m/s^2, preferred acceleration
    double decel = 5.0;          // m/s^2, max comfortable deceleration
    double tau = 1.0;            // s, reaction time
    double eta = 0.1;            // m/s, random velocity perturbation
    double v_max = 30.0;         // m/s, desired speed
    double lane_change_prob = 0.02;  // per step
    double car_length = 5.0;     // m, gap offset

    bool valid() const { return accel > 0 && decel > 0 && tau > 0 && eta >= 0; }
};

/// One Krauss step: returns the human control given the leader ahead in the
/// same lane (free driving when no leader applies).
AgentControl krauss_step(const AgentState& human, const AgentState* leader,
                         const KraussParams& p, const TimeStep& dt, const ControlBounds& bounds,
                         std::mt19937_64& rng, double* lane_target /* in/out, m */,
                         const std::vector<double>& lane_centers);

/// Recorded trajectory with header t,x,y,heading,speed (SI units, fixed dt).
struct ReplayTable {
    std::vector<double> t, x, y, heading, speed;

    static ReplayTable load_csv(const std::string& path, double expected_dt);
    std::size_t steps() const { return t.size(); }
    AgentState state_at(std::size_t i) const { return {x[i], y[i], heading[i], speed[i]}; }
};

/// Finite-difference control recovery from two consecutive recorded states.
AgentControl replay_step(const ReplayTable& table, std::size_t step, const TimeStep& dt);

struct StepRecord {
    int t = 0;
    JointState joint;
    AgentState robot;
    AgentState human;
    AgentControl planned;
    AgentControl executed;
    AgentControl human_action;
    bool shielded = false;
    Eigen::VectorXd belief;
    double stage_cost = 0.0;
    double margin = 0.0;
    PlanDiagnostics diag;
};

struct TrialLog {
    std::vector<StepRecord> steps;  // T_sim + 1 records; the last has no action
    bool aborted_in_failure_set = false;
    double closed_loop_cost = 0.0;
    double shielding_freq_pct = 0.0;
    std::vector<double> plan_ms;
};

enum class PlannerKind { kSharpSmpc, kSharpQmdp, kBaseline, kAblation };
PlannerKind planner_from_tag(const std::string& tag);
std::string planner_tag(PlannerKind k);

enum class HumanSource { kKrauss, kReplay };

struct ScenarioSetup {
    std::string scenario = "highway-overtake";
    AgentState robot0{0.0, 1.85, 0.0, 30.0};
    AgentState human0{20.0, -1.85, 0.0, 25.0};
    int t_sim = 75;
    HumanSource human_source = HumanSource::kKrauss;
    std::string replay_path;  // file, or directory with seed_<k>.csv per trial
    KraussParams krauss;
    ControlBounds human_bounds;
    std::vector<double> lane_centers{-1.85, 1.85};
};

/// Bundles the caches and models a trial needs.
struct PlannerStack {
    const SafetyCertificate* cert = nullptr;
    const QmdpTable* table = nullptr;
    const QmdpTable* table_unaware = nullptr;  // safety-unaware surrogate (comparison planners)
    const BayesFilter* filter = nullptr;
    PlannerConfig config;
};

/// Closed loop: infer -> plan -> shield -> step (bicycle ground truth).
TrialLog run_trial(const ScenarioSetup& setup, const PlannerStack& stack, PlannerKind kind,
                   std::uint64_t seed);

double closed_loop_cost(const TrialLog& log);
double shielding_frequency(const TrialLog& log);  // percent; throws on empty log

struct PairedReduction {
    std::vector<double> per_trial_pct;  // trials with J_ablation == 0 are excluded
    double median = 0.0, q25 = 0.0, q75 = 0.0;
    std::size_t excluded = 0;
};

PairedReduction cost_reduction(const std::vector<TrialLog>& planner_logs,
                               const std::vector<TrialLog>& ablation_logs);

double median(std::vector<double> v);
double quantile(std::vector<double> v, double q);

void write_trial_csv(const TrialLog& log, const std::string& path);

/// Simulates an oblivious (non-responsive) human by sampling the Boltzmann
/// model under drifting true parameters; used to generate replay files.
void generate_boltzmann_replay(const IntentBasis& basis, const HumanParams& true_params,
                               const AgentState& start, int steps, const TimeStep& dt,
                               std::uint64_t seed, const std::string& out_csv);

}  // namespace sap

#endif
