#include "sap/qmdp.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "sap/util.hpp"

namespace sap {

namespace {

// Interpolated hypothesis-vector of table values at joint state s.
void gather_values(const Grid4& g, const std::vector<double>& values, std::size_t nh,
                   const Vec4& s, double* out) {
    std::array<std::size_t, 4> i0{};
    std::array<double, 4> w{};
    g.locate(s, i0, w);
    for (std::size_t h = 0; h < nh; ++h) out[h] = 0.0;
    for (int c = 0; c < 16; ++c) {
        double cw = 1.0;
        std::array<std::size_t, 4> idx{};
        for (int d = 0; d < 4; ++d) {
            if (c & (1 << d)) {
                idx[d] = i0[d] + 1;
                cw *= w[d];
            } else {
                idx[d] = i0[d];
                cw *= 1.0 - w[d];
            }
        }
        if (cw == 0.0) continue;
        const double* row = values.data() + g.flat(idx[0], idx[1], idx[2], idx[3]) * nh;
        for (std::size_t h = 0; h < nh; ++h) out[h] += cw * row[h];
    }
}

struct CellContext {
    std::vector<AgentControl> eff;       // per robot-lattice index, post-filter control
    std::vector<double> stage;           // stage cost of the effective control
    std::vector<double> lik;             // [hyp * n_uH + iuH]
};

}  // namespace

QmdpTable solve_qmdp(const SafetyCertificate& cert, const Grid4& xgrid, const IntentBasis& basis,
                     const ParamGrid& params, const std::vector<AgentControl>& uR,
                     const std::vector<AgentControl>& uH, const TransitionModel& transition,
                     const QuadraticCost& cost, const TimeStep& dt, const QmdpOptions& opts) {
    if (opts.horizon < 1) throw std::invalid_argument("solve_qmdp: horizon must be >= 1");
    for (int d = 0; d < 4; ++d) {
        if (xgrid.lo[d] < cert.grid.lo[d] - 1e-9 || xgrid.hi[d] > cert.grid.hi[d] + 1e-9)
            throw std::invalid_argument("solve_qmdp: QMDP grid not covered by the certificate grid");
    }
    if (!transition.valid()) throw std::invalid_argument("solve_qmdp: invalid transition model");

    const std::size_t ncells = xgrid.size();
    const std::size_t nh = params.size();
    const std::size_t nr = uR.size();
    const std::size_t nu = uH.size();

    // Per-cell data that does not change across backups.
    std::vector<CellContext> ctx(ncells);
    parallel_for(
        ncells,
        [&](std::size_t i) {
            const JointState x = JointState::from_vec(xgrid.point(i));
            auto& c = ctx[i];
            c.eff.resize(nr);
            c.stage.resize(nr);
            if (opts.shield_aware) {
                const AgentControl safe = safe_action(cert, x);
                for (std::size_t r = 0; r < nr; ++r)
                    c.eff[r] = in_shielding_set(cert, x, uR[r]) ? safe : uR[r];
            } else {
                c.eff = uR;
            }
            for (std::size_t r = 0; r < nr; ++r) c.stage[r] = cost.stage(x, c.eff[r]);
            const HumanLocalState xh = human_view(x, opts.robot_ref_speed);
            c.lik.resize(nh * nu);
            for (std::size_t h = 0; h < nh; ++h) {
                const auto d = action_likelihood(basis, params.entries[h], xh, uH);
                for (std::size_t k = 0; k < nu; ++k) c.lik[h * nu + k] = d.weights[k];
            }
        },
        opts.jobs);

    QmdpTable table;
    table.xgrid = xgrid;
    table.params = params;
    table.uR = uR;
    table.uH = uH;
    table.transition = transition;
    table.cost = cost;
    table.basis = basis;
    table.dt = dt;
    table.horizon = opts.horizon;
    table.robot_ref_speed = opts.robot_ref_speed;
    table.shield_aware = opts.shield_aware;

    // Terminal condition.
    std::vector<double> value(ncells * nh), next(ncells * nh);
    for (std::size_t i = 0; i < ncells; ++i) {
        const double vf = cost.terminal(JointState::from_vec(xgrid.point(i)));
        for (std::size_t h = 0; h < nh; ++h) value[i * nh + h] = vf;
    }
    std::vector<std::uint16_t> greedy(ncells * nh, 0);

    for (std::size_t k = 0; k < opts.horizon; ++k) {
        const bool last = (k + 1 == opts.horizon);
        parallel_for(
            ncells,
            [&](std::size_t i) {
                const JointState x = JointState::from_vec(xgrid.point(i));
                const auto& c = ctx[i];
                std::vector<double> best(nh, std::numeric_limits<double>::infinity());
                std::vector<std::uint16_t> arg(nh, 0);
                std::vector<double> w(nh), a(nh), expect(nh);
                for (std::size_t r = 0; r < nr; ++r) {
                    std::fill(expect.begin(), expect.end(), 0.0);
                    for (std::size_t m = 0; m < nu; ++m) {
                        const JointState s = step_joint(x, c.eff[r], uH[m], dt);
                        gather_values(xgrid, value, nh, s.vec(), w.data());
                        // a = T * w, then weight by the per-hypothesis action likelihood.
                        for (std::size_t h = 0; h < nh; ++h) {
                            double acc = 0.0;
                            for (std::size_t h2 = 0; h2 < nh; ++h2)
                                acc += transition.P(static_cast<Eigen::Index>(h),
                                                    static_cast<Eigen::Index>(h2)) * w[h2];
                            a[h] = acc;
                        }
                        for (std::size_t h = 0; h < nh; ++h) expect[h] += c.lik[h * nu + m] * a[h];
                    }
                    for (std::size_t h = 0; h < nh; ++h) {
                        const double v = c.stage[r] + expect[h];
                        if (v < best[h]) {
                            best[h] = v;
                            arg[h] = static_cast<std::uint16_t>(r);
                        }
                    }
                }
                for (std::size_t h = 0; h < nh; ++h) {
                    next[i * nh + h] = best[h];
                    if (last) greedy[i * nh + h] = arg[h];
                }
            },
            opts.jobs);
        value.swap(next);
    }

    table.value = std::move(value);
    table.greedy = std::move(greedy);
    return table;
}

TerminalEval terminal_value(const QmdpTable& table, const SafetyCertificate& cert,
                            const JointState& x, const Belief& b) {
    if (!b.valid(1e-9)) throw std::invalid_argument("terminal_value: invalid belief");
    const std::size_t nh = table.params.size();
    if (static_cast<std::size_t>(b.w.size()) != nh)
        throw std::invalid_argument("terminal_value: belief/hypothesis size mismatch");

    TerminalEval out;
    out.clamped = !table.xgrid.inside(x.vec(), 1e-9);

    const HumanLocalState xh = human_view(x, table.robot_ref_speed);
    const std::size_t nu = table.uH.size();
    std::vector<double> lik(nh * nu);
    for (std::size_t h = 0; h < nh; ++h) {
        const auto d = action_likelihood(table.basis, table.params.entries[h], xh, table.uH);
        for (std::size_t m = 0; m < nu; ++m) lik[h * nu + m] = d.weights[m];
    }

    const AgentControl safe = table.shield_aware ? safe_action(cert, x) : AgentControl{};
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> w(nh), a(nh);
    for (std::size_t r = 0; r < table.uR.size(); ++r) {
        const AgentControl eff =
            table.shield_aware && in_shielding_set(cert, x, table.uR[r]) ? safe : table.uR[r];
        double v = table.cost.stage(x, eff);
        for (std::size_t m = 0; m < nu; ++m) {
            const JointState s = step_joint(x, eff, table.uH[m], table.dt);
            gather_values(table.xgrid, table.value, nh, s.vec(), w.data());
            for (std::size_t h = 0; h < nh; ++h) {
                double acc = 0.0;
                for (std::size_t h2 = 0; h2 < nh; ++h2)
                    acc += table.transition.P(static_cast<Eigen::Index>(h),
                                              static_cast<Eigen::Index>(h2)) * w[h2];
                a[h] = acc;
            }
            double mix = 0.0;
            for (std::size_t h = 0; h < nh; ++h) mix += b.w(static_cast<Eigen::Index>(h)) * lik[h * nu + m] * a[h];
            v += mix;
        }
        if (v < best) {
            best = v;
            out.action_index = r;
        }
    }
    out.value = best;
    return out;
}

AgentControl qmdp_policy(const QmdpTable& table, const SafetyCertificate& cert,
                         const JointState& x, const Belief& b) {
    return table.uR[terminal_value(table, cert, x, b).action_index];
}

// ---------------------------------------------------------------------------
// Persistence

std::uint64_t qmdp_descriptor_hash(const QmdpTable& t) {
    std::uint64_t h = fnv1a("qmdp-v1");
    auto mix = [&h](const void* p, std::size_t n) { h = fnv1a(p, n, h); };
    const double costs[] = {t.cost.w_lat,       t.cost.w_speed,      t.cost.w_control,
                            t.cost.terminal_scale, t.cost.v_r_ref,   t.cost.lane_overtake,
                            t.cost.lane_final,  t.cost.overtake_done_px};
    mix(costs, sizeof(costs));
    const double bas[] = {t.basis.target1.lane, t.basis.target1.speed, t.basis.target2.lane,
                          t.basis.target2.speed, t.basis.w_lane, t.basis.w_speed,
                          t.basis.w_effort, t.basis.dt};
    mix(bas, sizeof(bas));
    for (const auto& u : t.uR) {
        mix(&u.v_lat, sizeof(double));
        mix(&u.a, sizeof(double));
    }
    for (const auto& u : t.uH) {
        mix(&u.v_lat, sizeof(double));
        mix(&u.a, sizeof(double));
    }
    for (const auto& p : t.params.entries) {
        mix(&p.beta, sizeof(double));
        mix(&p.theta, sizeof(double));
    }
    for (Eigen::Index i = 0; i < t.transition.P.size(); ++i)
        mix(t.transition.P.data() + i, sizeof(double));
    mix(&t.dt.dt, sizeof(double));
    mix(&t.horizon, sizeof(t.horizon));
    mix(&t.robot_ref_speed, sizeof(double));
    const char aware = t.shield_aware ? 1 : 0;
    mix(&aware, 1);
    return h;
}

void save_qmdp(const QmdpTable& t, const std::string& path) {
    {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + path);
        f.write(reinterpret_cast<const char*>(t.value.data()),
                static_cast<std::streamsize>(t.value.size() * sizeof(double)));
        f.write(reinterpret_cast<const char*>(t.greedy.data()),
                static_cast<std::streamsize>(t.greedy.size() * sizeof(std::uint16_t)));
    }
    nlohmann::json j;
    j["kind"] = "qmdp-table";
    j["version"] = 1;
    j["grid"] = {{"lo", t.xgrid.lo}, {"hi", t.xgrid.hi}, {"n", t.xgrid.n}};
    j["horizon"] = t.horizon;
    j["dt"] = t.dt.dt;
    j["robot_ref_speed"] = t.robot_ref_speed;
    j["shield_aware"] = t.shield_aware;
    j["cost"] = {{"w_lat", t.cost.w_lat},
                 {"w_speed", t.cost.w_speed},
                 {"w_control", t.cost.w_control},
                 {"terminal_scale", t.cost.terminal_scale},
                 {"v_r_ref", t.cost.v_r_ref},
                 {"lane_overtake", t.cost.lane_overtake},
                 {"lane_final", t.cost.lane_final},
                 {"overtake_done_px", t.cost.overtake_done_px}};
    j["basis"] = {{"lane1", t.basis.target1.lane},   {"speed1", t.basis.target1.speed},
                  {"lane2", t.basis.target2.lane},   {"speed2", t.basis.target2.speed},
                  {"w_lane", t.basis.w_lane},        {"w_speed", t.basis.w_speed},
                  {"w_effort", t.basis.w_effort},    {"dt", t.basis.dt},
                  {"v_lat_min", t.basis.bounds.v_lat_min}, {"v_lat_max", t.basis.bounds.v_lat_max},
                  {"a_min", t.basis.bounds.a_min},   {"a_max", t.basis.bounds.a_max}};
    auto lat = [](const std::vector<AgentControl>& us) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& u : us) arr.push_back({u.v_lat, u.a});
        return arr;
    };
    j["uR"] = lat(t.uR);
    j["uH"] = lat(t.uH);
    nlohmann::json pg = nlohmann::json::array();
    for (const auto& p : t.params.entries) pg.push_back({p.beta, p.theta});
    j["params"] = pg;
    std::vector<double> trans(t.transition.P.data(), t.transition.P.data() + t.transition.P.size());
    j["transition"] = trans;
    j["descriptor_hash"] = qmdp_descriptor_hash(t);
    std::uint64_t h = fnv1a(t.value.data(), t.value.size() * sizeof(double));
    h = fnv1a(t.greedy.data(), t.greedy.size() * sizeof(std::uint16_t), h);
    j["hash"] = h;
    std::ofstream f(path + ".json");
    if (!f) throw std::runtime_error("cannot write " + path + ".json");
    f << j.dump(2) << "\n";
}

QmdpTable load_qmdp(const std::string& path) {
    std::ifstream sf(path + ".json");
    if (!sf) throw std::runtime_error("missing sidecar " + path + ".json");
    nlohmann::json j;
    sf >> j;
    if (j.at("kind") != "qmdp-table") throw std::runtime_error("not a QMDP table: " + path);

    QmdpTable t;
    t.xgrid = Grid4(j["grid"]["lo"].get<std::array<double, 4>>(),
                    j["grid"]["hi"].get<std::array<double, 4>>(),
                    j["grid"]["n"].get<std::array<std::size_t, 4>>());
    t.horizon = j["horizon"];
    t.dt.dt = j["dt"];
    t.robot_ref_speed = j["robot_ref_speed"];
    t.shield_aware = j.value("shield_aware", true);
    const auto& jc = j["cost"];
    t.cost.w_lat = jc["w_lat"];
    t.cost.w_speed = jc["w_speed"];
    t.cost.w_control = jc["w_control"];
    t.cost.terminal_scale = jc["terminal_scale"];
    t.cost.v_r_ref = jc["v_r_ref"];
    t.cost.lane_overtake = jc["lane_overtake"];
    t.cost.lane_final = jc["lane_final"];
    t.cost.overtake_done_px = jc["overtake_done_px"];
    const auto& jb = j["basis"];
    t.basis.target1 = {jb["lane1"], jb["speed1"]};
    t.basis.target2 = {jb["lane2"], jb["speed2"]};
    t.basis.w_lane = jb["w_lane"];
    t.basis.w_speed = jb["w_speed"];
    t.basis.w_effort = jb["w_effort"];
    t.basis.dt = jb["dt"];
    t.basis.bounds.v_lat_min = jb["v_lat_min"];
    t.basis.bounds.v_lat_max = jb["v_lat_max"];
    t.basis.bounds.a_min = jb["a_min"];
    t.basis.bounds.a_max = jb["a_max"];
    for (const auto& e : j["uR"]) t.uR.push_back({e.at(0), e.at(1)});
    for (const auto& e : j["uH"]) t.uH.push_back({e.at(0), e.at(1)});
    for (const auto& e : j["params"]) t.params.entries.push_back({e.at(0), e.at(1)});
    const auto trans = j["transition"].get<std::vector<double>>();
    const auto nh = static_cast<Eigen::Index>(t.params.size());
    t.transition.P = Eigen::Map<const Eigen::MatrixXd>(trans.data(), nh, nh);

    const std::size_t nvals = t.xgrid.size() * t.params.size();
    t.value.resize(nvals);
    t.greedy.resize(nvals);
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    f.read(reinterpret_cast<char*>(t.value.data()),
           static_cast<std::streamsize>(nvals * sizeof(double)));
    f.read(reinterpret_cast<char*>(t.greedy.data()),
           static_cast<std::streamsize>(nvals * sizeof(std::uint16_t)));
    if (!f) throw std::runtime_error("truncated cache file " + path);

    std::uint64_t h = fnv1a(t.value.data(), t.value.size() * sizeof(double));
    h = fnv1a(t.greedy.data(), t.greedy.size() * sizeof(std::uint16_t), h);
    if (h != j.at("hash").get<std::uint64_t>())
        throw std::runtime_error("cache hash mismatch for " + path + " (recompute the cache)");
    if (qmdp_descriptor_hash(t) != j.at("descriptor_hash").get<std::uint64_t>())
        throw std::runtime_error("stale QMDP table " + path + " (descriptor mismatch)");
    return t;
}

}  // namespace sap
