#include "sap/config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "sap/util.hpp"

namespace sap {

using nlohmann::json;

namespace {

json bounds_to_json(const ControlBounds& b) {
    return {{"v_lat_min", b.v_lat_min},
            {"v_lat_max", b.v_lat_max},
            {"a_min", b.a_min},
            {"a_max", b.a_max}};
}

ControlBounds bounds_from_json(const json& j) {
    ControlBounds b;
    b.v_lat_min = j.at("v_lat_min");
    b.v_lat_max = j.at("v_lat_max");
    b.a_min = j.at("a_min");
    b.a_max = j.at("a_max");
    return b;
}

json to_json(const AppConfig& c) {
    json j;
    j["dt"] = c.dt.dt;
    j["reach"] = {{"failure",
                   {{"sep_long", c.reach.failure.sep_long},
                    {"sep_lat", c.reach.failure.sep_lat},
                    {"road_half", c.reach.failure.road_half},
                    {"geometry", c.reach.failure.geometry}}},
                  {"grid_lo", c.reach.grid_lo},
                  {"grid_hi", c.reach.grid_hi},
                  {"grid_n", c.reach.grid_n},
                  {"lattice_v", c.reach.lattice_v},
                  {"lattice_a", c.reach.lattice_a},
                  {"tol", c.reach.tol},
                  {"max_iters", c.reach.max_iters},
                  {"adversary_bounds", bounds_to_json(c.reach.adversary)}};
    j["robot_bounds"] = bounds_to_json(c.robot_bounds);
    j["human_bounds"] = bounds_to_json(c.human_bounds);
    j["human"] = {{"target1", {{"lane", c.human.target1.lane}, {"speed", c.human.target1.speed}}},
                  {"target2", {{"lane", c.human.target2.lane}, {"speed", c.human.target2.speed}}},
                  {"w_lane", c.human.w_lane},
                  {"w_speed", c.human.w_speed},
                  {"w_effort", c.human.w_effort},
                  {"betas", c.human.betas},
                  {"thetas", c.human.thetas},
                  {"transition_eps", c.human.transition_eps},
                  {"likelihood", c.human.likelihood},
                  {"lattice_v", c.human.lattice_v},
                  {"lattice_a", c.human.lattice_a}};
    j["cost"] = {{"w_lat", c.cost.w_lat},
                 {"w_speed", c.cost.w_speed},
                 {"w_control", c.cost.w_control},
                 {"terminal_scale", c.cost.terminal_scale},
                 {"v_r_ref", c.cost.v_r_ref},
                 {"lane_overtake", c.cost.lane_overtake},
                 {"lane_final", c.cost.lane_final},
                 {"overtake_done_px", c.cost.overtake_done_px}};
    j["qmdp"] = {{"grid_lo", c.qmdp.grid_lo},
                 {"grid_hi", c.qmdp.grid_hi},
                 {"grid_n", c.qmdp.grid_n},
                 {"horizon", c.qmdp.horizon},
                 {"robot_ref_speed", c.qmdp.robot_ref_speed}};
    j["tree"] = {{"max_nodes", c.tree.max_nodes},
                 {"horizon", c.tree.horizon},
                 {"branch_samples", c.tree.branch_samples}};
    j["planner"] = {{"gamma", c.planner.gamma},
                    {"slack_weight", c.planner.slack_weight},
                    {"baseline_weight", c.planner.baseline_weight},
                    {"qp_tol", c.planner.qp_tol},
                    {"qp_max_iters", c.planner.qp_max_iters}};
    j["sim"] = {{"scenario", c.sim.scenario},
                {"human_source", c.sim.human_source},
                {"replay_path", c.sim.replay_path},
                {"robot0", c.sim.robot0},
                {"human0", c.sim.human0},
                {"t_sim", c.sim.t_sim},
                {"krauss",
                 {{"accel", c.sim.krauss.accel},
                  {"decel", c.sim.krauss.decel},
                  {"tau", c.sim.krauss.tau},
                  {"eta", c.sim.krauss.eta},
                  {"v_max", c.sim.krauss.v_max},
                  {"lane_change_prob", c.sim.krauss.lane_change_prob},
                  {"car_length", c.sim.krauss.car_length}}},
                {"lane_centers", c.sim.lane_centers}};
    return j;
}

AppConfig from_json(const json& j) {
    AppConfig c;
    try {
        c.dt.dt = j.at("dt");
        const json& r = j.at("reach");
        c.reach.failure.sep_long = r.at("failure").at("sep_long");
        c.reach.failure.sep_lat = r.at("failure").at("sep_lat");
        c.reach.failure.road_half = r.at("failure").at("road_half");
        c.reach.failure.geometry = r.at("failure").at("geometry");
        c.reach.grid_lo = r.at("grid_lo");
        c.reach.grid_hi = r.at("grid_hi");
        c.reach.grid_n = r.at("grid_n");
        c.reach.lattice_v = r.at("lattice_v");
        c.reach.lattice_a = r.at("lattice_a");
        c.reach.tol = r.at("tol");
        c.reach.max_iters = r.at("max_iters");
        c.reach.adversary = bounds_from_json(r.at("adversary_bounds"));
        c.robot_bounds = bounds_from_json(j.at("robot_bounds"));
        c.human_bounds = bounds_from_json(j.at("human_bounds"));
        const json& h = j.at("human");
        c.human.target1 = {h.at("target1").at("lane"), h.at("target1").at("speed")};
        c.human.target2 = {h.at("target2").at("lane"), h.at("target2").at("speed")};
        c.human.w_lane = h.at("w_lane");
        c.human.w_speed = h.at("w_speed");
        c.human.w_effort = h.at("w_effort");
        c.human.betas = h.at("betas").get<std::vector<double>>();
        c.human.thetas = h.at("thetas").get<std::vector<double>>();
        c.human.transition_eps = h.at("transition_eps");
        c.human.likelihood = h.at("likelihood");
        c.human.lattice_v = h.at("lattice_v");
        c.human.lattice_a = h.at("lattice_a");
        const json& k = j.at("cost");
        c.cost.w_lat = k.at("w_lat");
        c.cost.w_speed = k.at("w_speed");
        c.cost.w_control = k.at("w_control");
        c.cost.terminal_scale = k.at("terminal_scale");
        c.cost.v_r_ref = k.at("v_r_ref");
        c.cost.lane_overtake = k.at("lane_overtake");
        c.cost.lane_final = k.at("lane_final");
        c.cost.overtake_done_px = k.at("overtake_done_px");
        const json& q = j.at("qmdp");
        c.qmdp.grid_lo = q.at("grid_lo");
        c.qmdp.grid_hi = q.at("grid_hi");
        c.qmdp.grid_n = q.at("grid_n");
        c.qmdp.horizon = q.at("horizon");
        c.qmdp.robot_ref_speed = q.at("robot_ref_speed");
        const json& t = j.at("tree");
        c.tree.max_nodes = t.at("max_nodes");
        c.tree.horizon = t.at("horizon");
        c.tree.branch_samples = t.at("branch_samples");
        const json& p = j.at("planner");
        c.planner.gamma = p.at("gamma");
        c.planner.slack_weight = p.at("slack_weight");
        c.planner.baseline_weight = p.at("baseline_weight");
        c.planner.qp_tol = p.at("qp_tol");
        c.planner.qp_max_iters = p.at("qp_max_iters");
        const json& s = j.at("sim");
        c.sim.scenario = s.at("scenario");
        c.sim.human_source = s.at("human_source");
        c.sim.replay_path = s.at("replay_path");
        c.sim.robot0 = s.at("robot0");
        c.sim.human0 = s.at("human0");
        c.sim.t_sim = s.at("t_sim");
        const json& kr = s.at("krauss");
        c.sim.krauss.accel = kr.at("accel");
        c.sim.krauss.decel = kr.at("decel");
        c.sim.krauss.tau = kr.at("tau");
        c.sim.krauss.eta = kr.at("eta");
        c.sim.krauss.v_max = kr.at("v_max");
        c.sim.krauss.lane_change_prob = kr.at("lane_change_prob");
        c.sim.krauss.car_length = kr.at("car_length");
        c.sim.lane_centers = s.at("lane_centers").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    }
    return c;
}

// Recursive overlay; rejects keys absent from the defaults document.
void merge_into(json& base, const json& patch, const std::string& where) {
    for (const auto& [key, val] : patch.items()) {
        if (!base.contains(key))
            throw ConfigError("unknown config key: " + where + key);
        if (base[key].is_object() && val.is_object()) {
            merge_into(base[key], val, where + key + ".");
        } else {
            base[key] = val;
        }
    }
}

}  // namespace

void apply_config_json(AppConfig& cfg, const std::string& json_text) {
    json patch;
    try {
        patch = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse failure: ") + e.what());
    }
    json base = to_json(cfg);
    // A scenario name in the file re-applies the scenario's built-in defaults
    // before the remaining file keys overlay them.
    if (patch.contains("sim") && patch["sim"].is_object() &&
        patch["sim"].contains("scenario")) {
        AppConfig scen = cfg;
        apply_scenario_defaults(scen, patch["sim"]["scenario"].get<std::string>());
        base = to_json(scen);
    }
    merge_into(base, patch, "");
    cfg = from_json(base);
}

AppConfig load_config(const std::string& path) {
    AppConfig cfg;
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        apply_config_json(cfg, ss.str());
    }
    return cfg;
}

std::string config_to_json(const AppConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

Grid4 reach_grid(const AppConfig& c) {
    Grid4 g;
    for (int i = 0; i < 4; ++i) {
        g.lo[i] = c.reach.grid_lo[static_cast<std::size_t>(i)];
        g.hi[i] = c.reach.grid_hi[static_cast<std::size_t>(i)];
        g.n[i] = static_cast<std::size_t>(c.reach.grid_n[static_cast<std::size_t>(i)]);
    }
    return g;
}

Grid4 qmdp_grid(const AppConfig& c) {
    Grid4 g;
    for (int i = 0; i < 4; ++i) {
        g.lo[i] = c.qmdp.grid_lo[static_cast<std::size_t>(i)];
        g.hi[i] = c.qmdp.grid_hi[static_cast<std::size_t>(i)];
        g.n[i] = static_cast<std::size_t>(c.qmdp.grid_n[static_cast<std::size_t>(i)]);
    }
    return g;
}

IntentBasis make_basis(const AppConfig& c) {
    IntentBasis b;
    b.target1 = c.human.target1;
    b.target2 = c.human.target2;
    b.w_lane = c.human.w_lane;
    b.w_speed = c.human.w_speed;
    b.w_effort = c.human.w_effort;
    b.dt = c.dt.dt;
    b.bounds = c.human_bounds;
    return b;
}

ParamGrid make_param_grid(const AppConfig& c) {
    return ParamGrid::make(c.human.betas, c.human.thetas);
}

std::vector<AgentControl> human_lattice(const AppConfig& c) {
    return control_lattice(c.human_bounds, static_cast<std::size_t>(c.human.lattice_v),
                           static_cast<std::size_t>(c.human.lattice_a));
}

std::vector<AgentControl> robot_lattice(const AppConfig& c) {
    return control_lattice(c.robot_bounds, static_cast<std::size_t>(c.reach.lattice_v),
                           static_cast<std::size_t>(c.reach.lattice_a));
}

std::vector<AgentControl> adversary_lattice(const AppConfig& c) {
    return control_lattice(c.reach.adversary, static_cast<std::size_t>(c.reach.lattice_v),
                           static_cast<std::size_t>(c.reach.lattice_a));
}

BayesFilter make_filter(const AppConfig& c) {
    const auto params = make_param_grid(c);
    const auto mode = c.human.likelihood == "gaussian" ? LikelihoodMode::kGaussianDensity
                                                       : LikelihoodMode::kDiscreteSnap;
    if (c.human.likelihood != "gaussian" && c.human.likelihood != "discrete")
        throw ConfigError("human.likelihood must be 'discrete' or 'gaussian'");
    return BayesFilter(make_basis(c), params, human_lattice(c),
                       TransitionModel::sticky(params.size(), c.human.transition_eps), mode);
}

PlannerConfig make_planner_config(const AppConfig& c) {
    PlannerConfig p;
    p.gamma = c.planner.gamma;
    p.slack_weight = c.planner.slack_weight;
    p.baseline_weight = c.planner.baseline_weight;
    p.robot_bounds = c.robot_bounds;
    p.tree.max_nodes = static_cast<std::size_t>(c.tree.max_nodes);
    p.tree.horizon = c.tree.horizon;
    p.tree.branch_samples = static_cast<std::size_t>(c.tree.branch_samples);
    p.qp.tol = c.planner.qp_tol;
    p.qp.max_iters = static_cast<std::size_t>(c.planner.qp_max_iters);
    return p;
}

ScenarioSetup make_scenario(const AppConfig& c) {
    ScenarioSetup s;
    s.scenario = c.sim.scenario;
    s.robot0 = {c.sim.robot0[0], c.sim.robot0[1], c.sim.robot0[2], c.sim.robot0[3]};
    s.human0 = {c.sim.human0[0], c.sim.human0[1], c.sim.human0[2], c.sim.human0[3]};
    s.t_sim = c.sim.t_sim;
    if (c.sim.human_source == "krauss") {
        s.human_source = HumanSource::kKrauss;
    } else if (c.sim.human_source == "replay") {
        s.human_source = HumanSource::kReplay;
    } else {
        throw ConfigError("sim.human_source must be 'krauss' or 'replay'");
    }
    s.replay_path = c.sim.replay_path;
    s.krauss = c.sim.krauss;
    s.human_bounds = c.human_bounds;
    s.lane_centers = c.sim.lane_centers;
    return s;
}

void apply_scenario_defaults(AppConfig& c, const std::string& scenario) {
    c.sim.scenario = scenario;
    if (scenario == "highway-overtake") {
        // Oblivious recorded human: both start in the right lane, human ahead.
        c.sim.human_source = "replay";
        c.sim.robot0 = {0.0, -1.85, 0.0, 30.0};
        c.sim.human0 = {20.0, -1.85, 0.0, 25.0};
        c.human.target1 = {-1.85, 25.0};  // keep lane
        c.human.target2 = {1.85, 25.0};   // drift left
    } else if (scenario == "responsive-human") {
        c.sim.human_source = "krauss";
        c.sim.robot0 = {0.0, -1.85, 0.0, 30.0};
        c.sim.human0 = {20.0, -1.85, 0.0, 25.0};
        c.human.target1 = {-1.85, 25.0};
        c.human.target2 = {1.85, 25.0};
    } else if (scenario == "intersection") {
        // Stop-vs-go intent pair on the same longitudinal-gap abstraction.
        c.sim.human_source = "replay";
        c.sim.robot0 = {0.0, -1.85, 0.0, 25.0};
        c.sim.human0 = {22.0, -1.85, 0.0, 15.0};
        c.human.target1 = {-1.85, 0.0};   // yields
        c.human.target2 = {-1.85, 20.0};  // proceeds
        c.qmdp.robot_ref_speed = 25.0;
        c.cost.v_r_ref = -3.0;
    } else {
        throw ConfigError("unknown scenario: " + scenario);
    }
}

}  // namespace sap
