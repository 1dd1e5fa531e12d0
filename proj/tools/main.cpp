// Command-line front end: cache precomputation, trials, benchmarks, reports.
#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>

#include "sap/config.hpp"
#include "sap/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitViolation = 3;

std::string resolve_cache_path(const std::string& path) {
    const char* dir = std::getenv("SAP_CACHE_DIR");
    if (dir != nullptr && *dir != '\0' && fs::path(path).is_relative())
        return (fs::path(dir) / path).string();
    return path;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
}

void check_cert_fresh(const SafetyCertificate& cert, const AppConfig& cfg) {
    const Grid4 g = reach_grid(cfg);
    const bool ok = cert.grid.lo == g.lo && cert.grid.hi == g.hi && cert.grid.n == g.n &&
                    std::abs(cert.dt.dt - cfg.dt.dt) < 1e-12 &&
                    cert.spec.sep_long == cfg.reach.failure.sep_long &&
                    cert.spec.sep_lat == cfg.reach.failure.sep_lat &&
                    cert.spec.road_half == cfg.reach.failure.road_half &&
                    cert.uR.size() == static_cast<std::size_t>(cfg.reach.lattice_v) *
                                          static_cast<std::size_t>(cfg.reach.lattice_a);
    if (!ok)
        throw ConfigError(
            "stale safe-set cache: stored descriptor disagrees with the config; "
            "rerun compute-safeset");
}

void check_table_fresh(const QmdpTable& t, const AppConfig& cfg) {
    const Grid4 g = qmdp_grid(cfg);
    const bool ok = t.xgrid.lo == g.lo && t.xgrid.hi == g.hi && t.xgrid.n == g.n &&
                    std::abs(t.dt.dt - cfg.dt.dt) < 1e-12 &&
                    t.horizon == static_cast<std::size_t>(cfg.qmdp.horizon) &&
                    t.robot_ref_speed == cfg.qmdp.robot_ref_speed &&
                    t.params.size() == make_param_grid(cfg).size() &&
                    t.cost.w_lat == cfg.cost.w_lat && t.cost.w_speed == cfg.cost.w_speed &&
                    t.cost.w_control == cfg.cost.w_control &&
                    t.basis.target1.lane == cfg.human.target1.lane &&
                    t.basis.target2.lane == cfg.human.target2.lane;
    if (!ok)
        throw ConfigError(
            "stale planner-table cache: stored descriptor disagrees with the config; "
            "rerun compute-qmdp");
}

struct Stack {
    SafetyCertificate cert;
    QmdpTable table;
    QmdpTable table_unaware;  // empty when the .noshield cache is absent
    BayesFilter filter;
    PlannerConfig config;
};

Stack load_stack(const AppConfig& cfg, const std::string& safeset, const std::string& qmdp) {
    Stack s{load_certificate(resolve_cache_path(safeset)), load_qmdp(resolve_cache_path(qmdp)),
            QmdpTable{}, make_filter(cfg), make_planner_config(cfg)};
    check_cert_fresh(s.cert, cfg);
    check_table_fresh(s.table, cfg);
    const std::string noshield = resolve_cache_path(qmdp) + ".noshield";
    if (fs::exists(noshield + ".json")) {
        s.table_unaware = load_qmdp(noshield);
        check_table_fresh(s.table_unaware, cfg);
        if (s.table_unaware.shield_aware)
            throw ConfigError("stale planner-table cache: " + noshield +
                              " was built shield-aware; rerun compute-qmdp");
    }
    return s;
}

PlannerStack view_of(const Stack& s) {
    return PlannerStack{&s.cert, &s.table,
                        s.table_unaware.value.empty() ? nullptr : &s.table_unaware, &s.filter,
                        s.config};
}

// Deterministic per-seed human recordings for replay scenarios: a Boltzmann
// driver whose true intent varies across seeds.
void ensure_replays(ScenarioSetup& setup, const AppConfig& cfg, const std::string& out_dir,
                    std::uint64_t first_seed, int n_trials) {
    if (setup.human_source != HumanSource::kReplay || !setup.replay_path.empty()) return;
    const fs::path dir = fs::path(out_dir) / "replays";
    fs::create_directories(dir);
    const IntentBasis basis = make_basis(cfg);
    for (int i = 0; i < n_trials; ++i) {
        const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(i);
        const fs::path file = dir / ("seed_" + std::to_string(seed) + ".csv");
        if (fs::exists(file)) continue;
        HumanParams truth{10.0, seed % 3 == 0 ? 0.0 : 1.0};
        generate_boltzmann_replay(basis, truth, setup.human0, setup.t_sim + 2, cfg.dt, seed,
                                  file.string());
    }
    setup.replay_path = dir.string();
}

json trial_summary(const TrialLog& log, PlannerKind kind, std::uint64_t seed) {
    json j;
    j["planner"] = planner_tag(kind);
    j["seed"] = seed;
    j["steps"] = log.steps.size();
    j["aborted_in_failure_set"] = log.aborted_in_failure_set;
    j["closed_loop_cost"] = log.closed_loop_cost;
    j["shielding_freq_pct"] = log.shielding_freq_pct;
    return j;
}

int cmd_compute_safeset(const std::string& config_path, const std::string& out) {
    const AppConfig cfg = load_config(config_path);
    const auto cert =
        compute_certificate(reach_grid(cfg), cfg.reach.failure, robot_lattice(cfg),
                            adversary_lattice(cfg), cfg.dt,
                            CertificateOptions{cfg.reach.tol,
                                               static_cast<std::size_t>(cfg.reach.max_iters), 0});
    const std::string path = resolve_cache_path(out);
    fs::create_directories(fs::path(path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(path).parent_path());
    save_certificate(cert, path);
    std::cout << "safe set cached at " << path << " (" << cert.iterations
              << " iterations, residual " << cert.residual << ", margin " << cert.margin << ")\n";
    return kExitOk;
}

int cmd_compute_qmdp(const std::string& config_path, const std::string& safeset,
                     const std::string& out) {
    const AppConfig cfg = load_config(config_path);
    const auto cert = load_certificate(resolve_cache_path(safeset));
    check_cert_fresh(cert, cfg);
    QmdpOptions opts;
    opts.horizon = static_cast<std::size_t>(cfg.qmdp.horizon);
    opts.robot_ref_speed = cfg.qmdp.robot_ref_speed;
    const auto transition =
        TransitionModel::sticky(make_param_grid(cfg).size(), cfg.human.transition_eps);
    const auto table = solve_qmdp(cert, qmdp_grid(cfg), make_basis(cfg), make_param_grid(cfg),
                                  robot_lattice(cfg), human_lattice(cfg), transition, cfg.cost,
                                  cfg.dt, opts);
    const std::string path = resolve_cache_path(out);
    save_qmdp(table, path);
    // Safety-unaware twin used as the surrogate of the comparison planners.
    opts.shield_aware = false;
    const auto unaware = solve_qmdp(cert, qmdp_grid(cfg), make_basis(cfg), make_param_grid(cfg),
                                    robot_lattice(cfg), human_lattice(cfg), transition, cfg.cost,
                                    cfg.dt, opts);
    save_qmdp(unaware, path + ".noshield");
    std::cout << "planner tables cached at " << path << " [+.noshield] (horizon "
              << table.horizon << ", " << table.xgrid.size() << " cells x "
              << table.params.size() << " hypotheses)\n";
    return kExitOk;
}

int cmd_simulate(const std::string& config_path, const std::string& safeset,
                 const std::string& qmdp, const std::string& planner, std::uint64_t seed,
                 const std::string& out_dir) {
    const AppConfig cfg = load_config(config_path);
    const PlannerKind kind = planner_from_tag(planner);
    const Stack stack = load_stack(cfg, safeset, qmdp);
    fs::create_directories(out_dir);
    ScenarioSetup setup = make_scenario(cfg);
    ensure_replays(setup, cfg, out_dir, seed, 1);

    const TrialLog log = run_trial(setup, view_of(stack), kind, seed);
    write_trial_csv(log, (fs::path(out_dir) / "trial.csv").string());
    write_text((fs::path(out_dir) / "trial_summary.json").string(),
               trial_summary(log, kind, seed).dump(2) + "\n");
    write_text((fs::path(out_dir) / "effective_config.json").string(), config_to_json(cfg));
    std::cout << "planner " << planner << ", seed " << seed << ": cost "
              << log.closed_loop_cost << ", shielding " << log.shielding_freq_pct << "%"
              << (log.aborted_in_failure_set ? ", SAFETY VIOLATION" : "") << "\n";
    return log.aborted_in_failure_set ? kExitViolation : kExitOk;
}

json quantile_row(std::vector<double> v) {
    json j;
    j["min"] = quantile(v, 0.0);
    j["q25"] = quantile(v, 0.25);
    j["median"] = quantile(v, 0.5);
    j["q75"] = quantile(v, 0.75);
    j["max"] = quantile(v, 1.0);
    return j;
}

int cmd_benchmark(const std::string& config_path, const std::string& safeset,
                  const std::string& qmdp, const std::string& planners_csv, int trials,
                  std::uint64_t seed, unsigned jobs, const std::string& out_dir) {
    const AppConfig cfg = load_config(config_path);
    std::vector<PlannerKind> kinds;
    std::vector<std::string> tags;
    {
        std::stringstream ss(planners_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok.empty()) continue;
            kinds.push_back(planner_from_tag(tok));
            tags.push_back(tok);
        }
    }
    if (kinds.empty()) throw ConfigError("benchmark: no planners given");
    if (trials < 1) throw ConfigError("benchmark: --trials must be >= 1");

    const Stack stack = load_stack(cfg, safeset, qmdp);
    fs::create_directories(out_dir);
    ScenarioSetup setup = make_scenario(cfg);
    ensure_replays(setup, cfg, out_dir, seed, trials);

    const std::size_t total = kinds.size() * static_cast<std::size_t>(trials);
    std::vector<TrialLog> logs(total);
    const PlannerStack pstack = view_of(stack);
    parallel_for(
        total,
        [&](std::size_t i) {
            const std::size_t p = i / static_cast<std::size_t>(trials);
            const std::size_t k = i % static_cast<std::size_t>(trials);
            logs[i] = run_trial(setup, pstack, kinds[p], seed + k);
        },
        jobs);

    // Ablation runs (for paired cost reduction): reuse if benchmarked, else run.
    std::vector<TrialLog> ablation;
    for (std::size_t p = 0; p < kinds.size(); ++p) {
        if (kinds[p] == PlannerKind::kAblation) {
            ablation.assign(logs.begin() + static_cast<std::ptrdiff_t>(p * trials),
                            logs.begin() + static_cast<std::ptrdiff_t>((p + 1) * trials));
            break;
        }
    }
    if (ablation.empty()) {
        ablation.resize(static_cast<std::size_t>(trials));
        parallel_for(
            static_cast<std::size_t>(trials),
            [&](std::size_t k) {
                ablation[k] = run_trial(setup, pstack, PlannerKind::kAblation, seed + k);
            },
            jobs);
    }

    bool violation = false;
    json summary;
    summary["scenario"] = setup.scenario;
    summary["trials"] = trials;
    summary["seed"] = seed;
    std::ostringstream tsv;
    tsv << "planner\tmetric\tmin\tq25\tmedian\tq75\tmax\n";
    std::ostringstream timing;
    timing << "planner\tmedian_plan_ms\n";
    for (std::size_t p = 0; p < kinds.size(); ++p) {
        std::vector<double> costs, freqs, ms;
        int violations = 0;
        for (int k = 0; k < trials; ++k) {
            const auto& log = logs[p * static_cast<std::size_t>(trials) +
                                   static_cast<std::size_t>(k)];
            costs.push_back(log.closed_loop_cost);
            freqs.push_back(log.shielding_freq_pct);
            violations += log.aborted_in_failure_set ? 1 : 0;
            ms.insert(ms.end(), log.plan_ms.begin(), log.plan_ms.end());
        }
        if (violations > 0) violation = true;
        const std::vector<TrialLog> mine(
            logs.begin() + static_cast<std::ptrdiff_t>(p * trials),
            logs.begin() + static_cast<std::ptrdiff_t>((p + 1) * trials));
        const PairedReduction red = cost_reduction(mine, ablation);

        json pj;
        pj["closed_loop_cost"] = quantile_row(costs);
        pj["shielding_freq_pct"] = quantile_row(freqs);
        pj["cost_reduction_pct"] = {{"median", red.median},
                                    {"q25", red.q25},
                                    {"q75", red.q75},
                                    {"excluded", red.excluded}};
        pj["safety_violations"] = violations;
        summary["planners"][tags[p]] = pj;

        for (const auto& [metric, vals] :
             {std::pair<std::string, std::vector<double>>{"closed_loop_cost", costs},
              {"shielding_freq_pct", freqs},
              {"cost_reduction_pct", red.per_trial_pct}}) {
            if (vals.empty()) continue;
            const json q = quantile_row(vals);
            tsv << tags[p] << '\t' << metric << '\t' << q["min"].get<double>() << '\t'
                << q["q25"].get<double>() << '\t' << q["median"].get<double>() << '\t'
                << q["q75"].get<double>() << '\t' << q["max"].get<double>() << '\n';
        }
        if (!ms.empty()) timing << tags[p] << '\t' << median(ms) << '\n';
    }

    write_text((fs::path(out_dir) / "summary.json").string(), summary.dump(2) + "\n");
    write_text((fs::path(out_dir) / "plot_data.tsv").string(), tsv.str());
    // Timing lives outside summary.json so reruns stay byte-identical.
    write_text((fs::path(out_dir) / "timing.tsv").string(), timing.str());
    write_text((fs::path(out_dir) / "effective_config.json").string(), config_to_json(cfg));
    std::cout << "benchmark complete: " << total << " trials -> " << out_dir << "\n";
    return violation ? kExitViolation : kExitOk;
}

int cmd_report(const std::string& in_dir) {
    std::ifstream f(fs::path(in_dir) / "summary.json");
    if (!f) throw std::runtime_error("no summary.json under " + in_dir);
    json summary = json::parse(f);
    std::cout << "scenario: " << summary.at("scenario").get<std::string>() << ", trials: "
              << summary.at("trials") << ", seed: " << summary.at("seed") << "\n\n";
    std::cout << std::left << std::setw(14) << "planner" << std::right << std::setw(14)
              << "med cost" << std::setw(14) << "med shield%" << std::setw(16) << "med cost red%"
              << std::setw(12) << "violations" << "\n";
    for (const auto& [tag, pj] : summary.at("planners").items()) {
        std::cout << std::left << std::setw(14) << tag << std::right << std::fixed
                  << std::setprecision(3) << std::setw(14)
                  << pj.at("closed_loop_cost").at("median").get<double>() << std::setw(14)
                  << pj.at("shielding_freq_pct").at("median").get<double>() << std::setw(16)
                  << pj.at("cost_reduction_pct").at("median").get<double>() << std::setw(12)
                  << pj.at("safety_violations").get<int>() << "\n";
    }
    return kExitOk;
}

int cmd_dump_tree(const std::string& config_path, const std::string& safeset,
                  const std::string& qmdp, std::uint64_t seed, const std::string& out) {
    const AppConfig cfg = load_config(config_path);
    const Stack stack = load_stack(cfg, safeset, qmdp);
    const ScenarioSetup setup = make_scenario(cfg);
    const JointState x0 = assemble_joint(setup.robot0, setup.human0);
    const Belief b0 = Belief::uniform(stack.filter.params().size());
    TreeBuilder builder(stack.cert, stack.table, stack.filter, stack.config.tree);
    auto rng = make_stream(seed, "tree-dump");
    const ScenarioTree tree = builder.build(x0, b0, rng);

    json j;
    j["horizon"] = tree.horizon;
    j["cap"] = tree.cap;
    j["shield_set"] = tree.shield_set;
    j["nodes"] = json::array();
    for (const auto& n : tree.nodes) {
        json nj;
        nj["id"] = n.id;
        nj["parent"] = n.parent;
        nj["t"] = n.t;
        nj["x"] = {n.x.px_r, n.x.v_r, n.x.py_R, n.x.py_H};
        nj["belief"] = std::vector<double>(n.b.w.data(), n.b.w.data() + n.b.w.size());
        nj["uR"] = {n.uR.v_lat, n.uR.a};
        nj["has_action"] = n.has_action;
        nj["shielded"] = n.shielded;
        nj["uH_edge"] = {n.uH_edge.v_lat, n.uH_edge.a};
        nj["pbar"] = n.pbar;
        nj["p"] = n.p;
        nj["children"] = n.children;
        j["nodes"].push_back(nj);
    }
    write_text(out, j.dump(2) + "\n");
    std::cout << "tree with " << tree.nodes.size() << " nodes -> " << out << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shielding-aware robust planning toolkit"};
    app.require_subcommand(1);

    std::string config_path, safeset, qmdp_path, out, planner = "sharp-smpc";
    std::string planners = "sharp-smpc,sharp-qmdp,baseline,ablation", in_dir;
    std::uint64_t seed = 0;
    int trials = 50;
    unsigned jobs = 0;

    auto* cs = app.add_subcommand("compute-safeset", "build and cache the safe-set certificate");
    cs->add_option("--config", config_path, "JSON config file");
    cs->add_option("--out", out, "cache output path")->required();

    auto* cq = app.add_subcommand("compute-qmdp", "build and cache the planner value table");
    cq->add_option("--config", config_path, "JSON config file");
    cq->add_option("--safeset", safeset, "safe-set cache")->required();
    cq->add_option("--out", out, "cache output path")->required();

    auto* sim = app.add_subcommand("simulate", "run one closed-loop trial");
    sim->add_option("--config", config_path, "JSON config file");
    sim->add_option("--safeset", safeset, "safe-set cache")->required();
    sim->add_option("--qmdp", qmdp_path, "planner table cache")->required();
    sim->add_option("--planner", planner, "sharp-smpc|sharp-qmdp|baseline|ablation");
    sim->add_option("--seed", seed, "root random seed");
    sim->add_option("--out", out, "output directory")->required();

    auto* bm = app.add_subcommand("benchmark", "run paired trials across planners");
    bm->add_option("--config", config_path, "JSON config file");
    bm->add_option("--safeset", safeset, "safe-set cache")->required();
    bm->add_option("--qmdp", qmdp_path, "planner table cache")->required();
    bm->add_option("--planners", planners, "comma-separated planner tags");
    bm->add_option("--trials", trials, "trials per planner");
    bm->add_option("--seed", seed, "root random seed");
    bm->add_option("--jobs", jobs, "worker threads (default: logical cores)");
    bm->add_option("--out", out, "output directory")->required();

    auto* rp = app.add_subcommand("report", "print the metrics table of a benchmark");
    rp->add_option("--in", in_dir, "benchmark output directory")->required();

    auto* dt = app.add_subcommand("dump-tree", "emit one planning step's scenario tree as JSON");
    dt->add_option("--config", config_path, "JSON config file");
    dt->add_option("--safeset", safeset, "safe-set cache")->required();
    dt->add_option("--qmdp", qmdp_path, "planner table cache")->required();
    dt->add_option("--seed", seed, "root random seed");
    dt->add_option("--out", out, "output JSON path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (cs->parsed()) return cmd_compute_safeset(config_path, out);
        if (cq->parsed()) return cmd_compute_qmdp(config_path, safeset, out);
        if (sim->parsed())
            return cmd_simulate(config_path, safeset, qmdp_path, planner, seed, out);
        if (bm->parsed())
            return cmd_benchmark(config_path, safeset, qmdp_path, planners, trials, seed, jobs,
                                 out);
        if (rp->parsed()) return cmd_report(in_dir);
        if (dt->parsed()) return cmd_dump_tree(config_path, safeset, qmdp_path, seed, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
