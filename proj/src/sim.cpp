#include "sap/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "sap/util.hpp"

namespace sap {

AgentControl krauss_step(const AgentState& human, const AgentState* leader,
                         const KraussParams& p, const TimeStep& dt, const ControlBounds& bounds,
                         std::mt19937_64& rng, double* lane_target,
                         const std::vector<double>& lane_centers) {
    if (!p.valid()) throw std::invalid_argument("krauss_step: invalid parameters");
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    double v_des;
    bool emergency = false;
    if (leader != nullptr) {
        const double gap = leader->x - human.x - p.car_length;
        if (gap <= 0.0) {
            emergency = true;
            v_des = 0.0;
        } else {
            const double vl = std::max(leader->speed, 0.0);
            const double v_safe =
                vl + (gap - vl * p.tau) / ((human.speed + vl) / (2.0 * p.decel) + p.tau);
            v_des = std::min({v_safe, human.speed + p.accel * dt.dt, p.v_max});
        }
    } else {
        v_des = std::min(human.speed + p.accel * dt.dt, p.v_max);
    }

    AgentControl u;
    if (emergency) {
        u.a = bounds.a_min;
    } else {
        const double v_next = std::max(0.0, v_des - unif(rng) * p.eta);
        u.a = std::clamp((v_next - human.speed) / dt.dt, bounds.a_min, bounds.a_max);
    }

    // Occasional random lane change; suppressed when a leader sits close by.
    if (lane_target != nullptr && lane_centers.size() > 1) {
        if (unif(rng) < p.lane_change_prob) {
            const bool blocked = leader != nullptr && (leader->x - human.x) < 15.0;
            if (!blocked) {
                double best = *lane_target;
                double best_d = std::numeric_limits<double>::infinity();
                for (double c : lane_centers) {
                    if (std::abs(c - *lane_target) < 1e-9) continue;
                    const double d = std::abs(c - human.y);
                    if (d < best_d) {
                        best_d = d;
                        best = c;
                    }
                }
                *lane_target = best;
            }
        }
        u.v_lat = std::clamp(1.0 * (*lane_target - human.y), bounds.v_lat_min, bounds.v_lat_max);
    }
    return u;
}

ReplayTable ReplayTable::load_csv(const std::string& path, double expected_dt) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open replay file " + path);
    ReplayTable tab;
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty replay file " + path);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() != 5) throw std::runtime_error("malformed replay row in " + path);
        tab.t.push_back(row[0]);
        tab.x.push_back(row[1]);
        tab.y.push_back(row[2]);
        tab.heading.push_back(row[3]);
        tab.speed.push_back(row[4]);
    }
    if (tab.t.size() < 2) throw std::runtime_error("replay file needs at least two rows: " + path);

    const double file_dt = tab.t[1] - tab.t[0];
    if (std::abs(file_dt - expected_dt) > 1e-9) {
        // Resample onto the expected grid with linear interpolation.
        ReplayTable out;
        const double t_end = tab.t.back();
        for (double t = tab.t.front(); t <= t_end + 1e-9; t += expected_dt) {
            const auto it = std::upper_bound(tab.t.begin(), tab.t.end(), t);
            std::size_t hi = std::min<std::size_t>(
                static_cast<std::size_t>(it - tab.t.begin()), tab.t.size() - 1);
            std::size_t lo = hi > 0 ? hi - 1 : 0;
            const double span = tab.t[hi] - tab.t[lo];
            const double a = span > 0 ? (t - tab.t[lo]) / span : 0.0;
            out.t.push_back(t);
            out.x.push_back((1 - a) * tab.x[lo] + a * tab.x[hi]);
            out.y.push_back((1 - a) * tab.y[lo] + a * tab.y[hi]);
            out.heading.push_back((1 - a) * tab.heading[lo] + a * tab.heading[hi]);
            out.speed.push_back((1 - a) * tab.speed[lo] + a * tab.speed[hi]);
        }
        return out;
    }
    return tab;
}

AgentControl replay_step(const ReplayTable& table, std::size_t step, const TimeStep& dt) {
    if (step + 1 >= table.steps())
        throw std::out_of_range("replay_step: step beyond recorded range");
    AgentControl u;
    u.a = (table.speed[step + 1] - table.speed[step]) / dt.dt;
    u.v_lat = (table.y[step + 1] - table.y[step]) / dt.dt;
    return u;
}

PlannerKind planner_from_tag(const std::string& tag) {
    if (tag == "sharp-smpc") return PlannerKind::kSharpSmpc;
    if (tag == "sharp-qmdp") return PlannerKind::kSharpQmdp;
    if (tag == "baseline") return PlannerKind::kBaseline;
    if (tag == "ablation") return PlannerKind::kAblation;
    throw ConfigError("unknown planner tag: " + tag);
}

std::string planner_tag(PlannerKind k) {
    switch (k) {
        case PlannerKind::kSharpSmpc: return "sharp-smpc";
        case PlannerKind::kSharpQmdp: return "sharp-qmdp";
        case PlannerKind::kBaseline: return "baseline";
        case PlannerKind::kAblation: return "ablation";
    }
    return "?";
}

TrialLog run_trial(const ScenarioSetup& setup, const PlannerStack& stack, PlannerKind kind,
                   std::uint64_t seed) {
    if (setup.t_sim < 0) throw ConfigError("run_trial: t_sim must be >= 0");
    const auto& cert = *stack.cert;
    const auto& table = *stack.table;
    const auto& filter = *stack.filter;
    const TimeStep dt = table.dt;

    std::unique_ptr<ScenarioPlanner> planner;
    if (kind != PlannerKind::kSharpQmdp) {
        PlannerMode mode = kind == PlannerKind::kSharpSmpc  ? PlannerMode::kSharp
                           : kind == PlannerKind::kBaseline ? PlannerMode::kBaseline
                                                            : PlannerMode::kAblation;
        // The comparison planners plan with the safety-unaware surrogate and
        // shield-free rollouts; the shield still filters the executed action.
        const QmdpTable* surrogate = &table;
        PlannerConfig cfg = stack.config;
        if (mode != PlannerMode::kSharp && stack.table_unaware != nullptr) {
            surrogate = stack.table_unaware;
            cfg.tree.apply_shield = false;
        }
        planner = std::make_unique<ScenarioPlanner>(cert, *surrogate, filter, cfg, mode);
    }

    std::optional<ReplayTable> replay;
    if (setup.human_source == HumanSource::kReplay) {
        std::string path = setup.replay_path;
        if (std::filesystem::is_directory(path))
            path += "/seed_" + std::to_string(seed) + ".csv";
        replay = ReplayTable::load_csv(path, dt.dt);
    }

    auto rng_plan = make_stream(seed, "planner");
    auto rng_human = make_stream(seed, "krauss");

    AgentState robot = setup.robot0;
    AgentState human = setup.human0;
    Belief belief = Belief::uniform(filter.params().size());
    double lane_target = setup.human0.y;

    TrialLog log;
    AgentControl prev_uH;
    HumanLocalState prev_hls;
    bool have_obs = false;

    for (int t = 0; t <= setup.t_sim; ++t) {
        StepRecord rec;
        rec.t = t;
        rec.robot = robot;
        rec.human = human;
        rec.joint = assemble_joint(robot, human);
        rec.margin = failure_margin(rec.joint, cert.spec);
        if (rec.margin < 0.0) {
            log.aborted_in_failure_set = true;
            log.steps.push_back(std::move(rec));
            break;
        }

        if (have_obs) {
            try {
                belief = filter.belief_step(belief, prev_hls, prev_uH);
            } catch (const std::exception&) {
                // Inconsistent observation: keep the prior for this step.
            }
        }
        rec.belief = belief.w;

        if (t == setup.t_sim) {
            rec.stage_cost = table.cost.stage(rec.joint, AgentControl{});
            log.steps.push_back(std::move(rec));
            break;
        }

        // Plan and shield.
        if (planner) {
            const PlanResult pr = planner->plan(rec.joint, belief, rng_plan);
            rec.planned = pr.action;
            rec.diag = pr.diag;
            log.plan_ms.push_back(pr.diag.solve_ms);
        } else {
            const auto t0 = std::chrono::steady_clock::now();
            rec.planned = qmdp_policy(table, cert, rec.joint, belief);
            rec.diag.solve_ms = std::chrono::duration<double, std::milli>(
                                    std::chrono::steady_clock::now() - t0)
                                    .count();
            log.plan_ms.push_back(rec.diag.solve_ms);
        }
        const ShieldResult sh = shield(cert, rec.joint, rec.planned);
        rec.executed = sh.action;
        rec.shielded = sh.shielded;
        rec.stage_cost = table.cost.stage(rec.joint, rec.executed);

        // Human action.
        AgentControl uH;
        if (setup.human_source == HumanSource::kKrauss) {
            const bool robot_leads = robot.x > human.x && std::abs(robot.y - human.y) < 2.0;
            uH = krauss_step(human, robot_leads ? &robot : nullptr, setup.krauss, dt,
                             setup.human_bounds, rng_human, &lane_target, setup.lane_centers);
        } else {
            uH = replay_step(*replay, static_cast<std::size_t>(t), dt);
            uH = setup.human_bounds.clamp(uH);
        }
        rec.human_action = uH;

        prev_hls = HumanLocalState{human.y, human.speed};
        prev_uH = uH;
        have_obs = true;

        robot = step_bicycle(robot, rec.executed, dt);
        human = step_bicycle(human, uH, dt);
        log.steps.push_back(std::move(rec));
    }

    log.closed_loop_cost = closed_loop_cost(log);
    if (setup.t_sim > 0) log.shielding_freq_pct = shielding_frequency(log);
    return log;
}

double closed_loop_cost(const TrialLog& log) {
    double j = 0.0;
    for (const auto& s : log.steps) j += s.stage_cost;
    return j;
}

double shielding_frequency(const TrialLog& log) {
    const std::size_t t_sim = log.steps.empty() ? 0 : log.steps.size() - 1;
    if (t_sim == 0) throw std::invalid_argument("shielding_frequency: empty trial");
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < log.steps.size(); ++i)
        if (log.steps[i].shielded) ++n;
    return 100.0 * static_cast<double>(n) / static_cast<double>(t_sim);
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("quantile: empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return (1.0 - frac) * v[lo] + frac * v[hi];
}

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

PairedReduction cost_reduction(const std::vector<TrialLog>& planner_logs,
                               const std::vector<TrialLog>& ablation_logs) {
    if (planner_logs.size() != ablation_logs.size())
        throw std::invalid_argument("cost_reduction: unpaired trial sets");
    PairedReduction out;
    for (std::size_t i = 0; i < planner_logs.size(); ++i) {
        const double ja = ablation_logs[i].closed_loop_cost;
        if (ja == 0.0) {
            ++out.excluded;
            continue;
        }
        out.per_trial_pct.push_back(100.0 * (ja - planner_logs[i].closed_loop_cost) / ja);
    }
    if (!out.per_trial_pct.empty()) {
        out.median = median(out.per_trial_pct);
        out.q25 = quantile(out.per_trial_pct, 0.25);
        out.q75 = quantile(out.per_trial_pct, 0.75);
    }
    return out;
}

void write_trial_csv(const TrialLog& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "t,px_r,v_r,py_R,py_H,robot_x,robot_y,robot_heading,robot_speed,"
         "human_x,human_y,human_heading,human_speed,"
         "planned_vlat,planned_a,executed_vlat,executed_a,human_vlat,human_a,"
         "shielded,stage_cost,margin,qp_status,plan_ms,tree_nodes,shield_nodes,fallback";
    const Eigen::Index nb = log.steps.empty() ? 0 : log.steps.front().belief.size();
    for (Eigen::Index i = 0; i < nb; ++i) f << ",belief_" << i;
    f << "\n";
    for (const auto& s : log.steps) {
        f << s.t << ',' << s.joint.px_r << ',' << s.joint.v_r << ',' << s.joint.py_R << ','
          << s.joint.py_H << ',' << s.robot.x << ',' << s.robot.y << ',' << s.robot.heading << ','
          << s.robot.speed << ',' << s.human.x << ',' << s.human.y << ',' << s.human.heading << ','
          << s.human.speed << ',' << s.planned.v_lat << ',' << s.planned.a << ','
          << s.executed.v_lat << ',' << s.executed.a << ',' << s.human_action.v_lat << ','
          << s.human_action.a << ',' << (s.shielded ? 1 : 0) << ',' << s.stage_cost << ','
          << s.margin << ',' << (s.diag.qp_status.empty() ? "-" : s.diag.qp_status) << ','
          << s.diag.solve_ms << ',' << s.diag.tree_nodes << ',' << s.diag.shield_nodes << ','
          << (s.diag.fallback ? 1 : 0);
        for (Eigen::Index i = 0; i < s.belief.size(); ++i) f << ',' << s.belief(i);
        f << "\n";
    }
}

void generate_boltzmann_replay(const IntentBasis& basis, const HumanParams& true_params,
                               const AgentState& start, int steps, const TimeStep& dt,
                               std::uint64_t seed, const std::string& out_csv) {
    auto rng = make_stream(seed, "replay-gen");
    std::ofstream f(out_csv);
    if (!f) throw std::runtime_error("cannot write " + out_csv);
    f << "t,x,y,heading,speed\n";
    AgentState s = start;
    for (int k = 0; k <= steps; ++k) {
        f << k * dt.dt << ',' << s.x << ',' << s.y << ',' << s.heading << ',' << s.speed << "\n";
        const HumanLocalState hls{s.y, s.speed};
        AgentControl u;
        if (true_params.beta > 0.0) {
            u = sample_action(gaussian_approx(basis, true_params, hls), rng);
        } else {
            std::uniform_real_distribution<double> uv(basis.bounds.v_lat_min,
                                                      basis.bounds.v_lat_max);
            std::uniform_real_distribution<double> ua(basis.bounds.a_min, basis.bounds.a_max);
            u = {uv(rng), ua(rng)};
        }
        u = basis.bounds.clamp(u);
        s = step_bicycle(s, u, dt);
    }
}

}  // namespace sap
