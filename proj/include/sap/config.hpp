#ifndef SAP_CONFIG_HPP
#define SAP_CONFIG_HPP

#include <array>
#include <string>
#include <vector>

#include "sap/cost.hpp"
#include "sap/sim.hpp"

namespace sap {

/// Whole-run configuration, one section per module. Layering is
/// built-in defaults < JSON file < command-line flags.
struct AppConfig {
    TimeStep dt{};

    struct {
        FailureSpec failure;
        std::array<double, 4> grid_lo{-25.0, -12.0, -3.7, -3.7};
        std::array<double, 4> grid_hi{25.0, 12.0, 3.7, 3.7};
        std::array<int, 4> grid_n{41, 31, 21, 21};
        int lattice_v = 3, lattice_a = 3;  // per-axis control lattice sizes
        double tol = 1e-4;
        int max_iters = 500;
        // Worst-case human authority assumed by the safety analysis. With the
        // full (symmetric) control box the human can always force a collision
        // and the robust safe set degenerates, so the shield assumes a
        // bounded-malice adversary instead.
        ControlBounds adversary{-1.0, 1.0, -3.0, 2.0};
    } reach;

    ControlBounds robot_bounds;
    ControlBounds human_bounds;

    struct {
        IntentTarget target1{1.85, 30.0};   // theta = 1
        IntentTarget target2{-1.85, 25.0};  // theta = 0
        double w_lane = 1.0, w_speed = 0.1, w_effort = 0.1;
        std::vector<double> betas{0.1, 1.0, 10.0};
        std::vector<double> thetas{0.0, 0.5, 1.0};
        double transition_eps = 0.05;
        std::string likelihood = "discrete";  // discrete | gaussian
        int lattice_v = 3, lattice_a = 3;
    } human;

    QuadraticCost cost;

    struct {
        std::array<double, 4> grid_lo{-25.0, -12.0, -3.7, -3.7};
        std::array<double, 4> grid_hi{25.0, 12.0, 3.7, 3.7};
        std::array<int, 4> grid_n{21, 15, 11, 11};
        int horizon = 15;
        double robot_ref_speed = 30.0;
    } qmdp;

    struct {
        int max_nodes = 70;
        int horizon = 10;
        int branch_samples = 5;
    } tree;

    struct {
        double gamma = 0.7;
        double slack_weight = 1e4;
        double baseline_weight = 100.0;
        double qp_tol = 1e-6;
        int qp_max_iters = 4000;
    } planner;

    struct {
        std::string scenario = "highway-overtake";
        std::string human_source = "krauss";  // krauss | replay
        std::string replay_path;
        std::array<double, 4> robot0{0.0, 1.85, 0.0, 30.0};
        std::array<double, 4> human0{20.0, -1.85, 0.0, 25.0};
        int t_sim = 75;
        KraussParams krauss;
        std::vector<double> lane_centers{-1.85, 1.85};
    } sim;
};

/// Built-in defaults overlaid with the JSON file at `path` (if non-empty).
/// Unknown keys are rejected; missing keys keep their defaults.
AppConfig load_config(const std::string& path);

/// Overlays a parsed JSON document (string form) onto `cfg`.
void apply_config_json(AppConfig& cfg, const std::string& json_text);

/// Serializes the effective configuration; load_config of the result
/// reproduces `cfg` exactly.
std::string config_to_json(const AppConfig& cfg);

// Component factories.
Grid4 reach_grid(const AppConfig& cfg);
Grid4 qmdp_grid(const AppConfig& cfg);
IntentBasis make_basis(const AppConfig& cfg);
ParamGrid make_param_grid(const AppConfig& cfg);
std::vector<AgentControl> human_lattice(const AppConfig& cfg);
std::vector<AgentControl> robot_lattice(const AppConfig& cfg);
std::vector<AgentControl> adversary_lattice(const AppConfig& cfg);
BayesFilter make_filter(const AppConfig& cfg);
PlannerConfig make_planner_config(const AppConfig& cfg);
ScenarioSetup make_scenario(const AppConfig& cfg);

/// Applies per-scenario built-in overrides (start states, intent targets,
/// failure geometry) before the file/flag layers. Throws on unknown names.
void apply_scenario_defaults(AppConfig& cfg, const std::string& scenario);

}  // namespace sap

#endif
