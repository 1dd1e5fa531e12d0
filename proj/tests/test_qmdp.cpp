#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <random>

#include "sap/qmdp.hpp"
#include "sap/util.hpp"

using namespace sap;

namespace {

struct Toy {
    SafetyCertificate cert;
    Grid4 xgrid{{-20.0, -6.0, -2.0, -2.0}, {20.0, 6.0, 2.0, 2.0}, {5, 5, 3, 3}};  // 225 cells
    IntentBasis basis;
    ParamGrid params;
    std::vector<AgentControl> uR{{0.0, -2.0}, {0.0, 2.0}};
    std::vector<AgentControl> uH{{0.0, -1.0}, {0.0, 1.0}};
    TransitionModel transition;
    QuadraticCost cost;
    TimeStep dt{0.2};

    Toy() {
        const Grid4 cgrid({-25.0, -8.0, -3.0, -3.0}, {25.0, 8.0, 3.0, 3.0}, {26, 17, 5, 5});
        FailureSpec spec;
        spec.sep_long = 5.5;
        spec.sep_lat = 2.0;
        spec.road_half = 10.0;
        const ControlBounds rb{0.0, 0.0, -2.0, 2.0};
        const ControlBounds hb{0.0, 0.0, -1.0, 1.0};
        cert = compute_certificate(cgrid, spec, control_lattice(rb, 1, 2),
                                   control_lattice(hb, 1, 2), dt,
                                   CertificateOptions{1e-6, 300, 0});
        basis.target1 = {-1.85, 25.0};
        basis.target2 = {1.85, 25.0};
        basis.dt = dt.dt;
        params = ParamGrid::make({1.0}, {0.0, 1.0});  // 2 hypotheses
        transition = TransitionModel::sticky(2, 0.1);
    }
};

const Toy& toy() {
    static Toy t;
    return t;
}

// Exhaustive-enumeration finite-horizon DP over the same discretization,
// written independently of the production backup loop.
std::vector<std::vector<double>> enumerate_dp(const Toy& t, std::size_t horizon,
                                              bool shield_aware, double ref_speed) {
    const std::size_t nc = t.xgrid.size();
    const std::size_t nh = t.params.size();
    std::vector<std::vector<double>> V(nh, std::vector<double>(nc));
    for (std::size_t i = 0; i < nc; ++i) {
        const double vf = t.cost.terminal(JointState::from_vec(t.xgrid.point(i)));
        for (std::size_t h = 0; h < nh; ++h) V[h][i] = vf;
    }
    for (std::size_t k = 0; k < horizon; ++k) {
        std::vector<std::vector<double>> next(nh, std::vector<double>(nc));
        for (std::size_t i = 0; i < nc; ++i) {
            const JointState x = JointState::from_vec(t.xgrid.point(i));
            const HumanLocalState xh = human_view(x, ref_speed);
            for (std::size_t h = 0; h < nh; ++h) {
                const auto lik = action_likelihood(t.basis, t.params.entries[h], xh, t.uH);
                double best = std::numeric_limits<double>::infinity();
                for (const auto& raw : t.uR) {
                    AgentControl eff = raw;
                    if (shield_aware && in_shielding_set(t.cert, x, raw))
                        eff = safe_action(t.cert, x);
                    double v = t.cost.stage(x, eff);
                    for (std::size_t m = 0; m < t.uH.size(); ++m) {
                        const JointState s = step_joint(x, eff, t.uH[m], t.dt);
                        double drift = 0.0;
                        for (std::size_t h2 = 0; h2 < nh; ++h2)
                            drift += t.transition.P(static_cast<Eigen::Index>(h),
                                                    static_cast<Eigen::Index>(h2)) *
                                     t.xgrid.interpolate(V[h2], s.vec());
                        v += lik.weights[m] * drift;
                    }
                    best = std::min(best, v);
                }
                next[h][i] = best;
            }
        }
        V.swap(next);
    }
    return V;
}

}  // namespace

TEST_CASE("three-step backups match exhaustive enumeration within 1e-9") {
    const Toy& t = toy();
    QmdpOptions opts;
    opts.horizon = 3;
    opts.robot_ref_speed = 25.0;
    const QmdpTable table = solve_qmdp(t.cert, t.xgrid, t.basis, t.params, t.uR, t.uH,
                                       t.transition, t.cost, t.dt, opts);
    const auto oracle = enumerate_dp(t, 3, true, 25.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < t.xgrid.size(); ++i)
        for (std::size_t h = 0; h < t.params.size(); ++h)
            worst = std::max(worst, std::abs(table.value[i * 2 + h] - oracle[h][i]));
    CHECK(worst <= 1e-9);
}

TEST_CASE("safety-unaware backups match the unfiltered enumeration") {
    const Toy& t = toy();
    QmdpOptions opts;
    opts.horizon = 3;
    opts.robot_ref_speed = 25.0;
    opts.shield_aware = false;
    const QmdpTable table = solve_qmdp(t.cert, t.xgrid, t.basis, t.params, t.uR, t.uH,
                                       t.transition, t.cost, t.dt, opts);
    CHECK(!table.shield_aware);
    const auto oracle = enumerate_dp(t, 3, false, 25.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < t.xgrid.size(); ++i)
        for (std::size_t h = 0; h < t.params.size(); ++h)
            worst = std::max(worst, std::abs(table.value[i * 2 + h] - oracle[h][i]));
    CHECK(worst <= 1e-9);
    // The two variants genuinely differ somewhere on this instance.
    const auto aware = enumerate_dp(t, 3, true, 25.0);
    double gap = 0.0;
    for (std::size_t i = 0; i < t.xgrid.size(); ++i)
        gap = std::max(gap, std::abs(aware[0][i] - oracle[0][i]));
    CHECK(gap > 1e-6);
}

TEST_CASE("greedy table stores the argmin of the final backup") {
    const Toy& t = toy();
    QmdpOptions opts;
    opts.horizon = 3;
    opts.robot_ref_speed = 25.0;
    const QmdpTable table = solve_qmdp(t.cert, t.xgrid, t.basis, t.params, t.uR, t.uH,
                                       t.transition, t.cost, t.dt, opts);
    for (std::size_t i = 0; i < t.xgrid.size(); ++i)
        for (std::size_t h = 0; h < t.params.size(); ++h)
            CHECK(table.greedy[i * 2 + h] < t.uR.size());
}

TEST_CASE("terminal_value at a one-hot belief equals one extra hand backup") {
    const Toy& t = toy();
    QmdpOptions opts;
    opts.horizon = 2;
    opts.robot_ref_speed = 25.0;
    const QmdpTable table = solve_qmdp(t.cert, t.xgrid, t.basis, t.params, t.uR, t.uH,
                                       t.transition, t.cost, t.dt, opts);
    // Re-split the stored values into per-hypothesis slices for the oracle.
    std::vector<std::vector<double>> V(2, std::vector<double>(t.xgrid.size()));
    for (std::size_t i = 0; i < t.xgrid.size(); ++i)
        for (std::size_t h = 0; h < 2; ++h) V[h][i] = table.value[i * 2 + h];

    auto rng = make_stream(61, "qmdp-terminal");
    std::uniform_int_distribution<std::size_t> cell(0, t.xgrid.size() - 1);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t i = cell(rng);
        const JointState x = JointState::from_vec(t.xgrid.point(i));
        for (std::size_t h = 0; h < 2; ++h) {
            Belief b;
            b.w = Eigen::Vector2d::Zero();
            b.w(static_cast<Eigen::Index>(h)) = 1.0;
            const HumanLocalState xh = human_view(x, 25.0);
            const auto lik = action_likelihood(t.basis, t.params.entries[h], xh, t.uH);
            double best = std::numeric_limits<double>::infinity();
            for (const auto& raw : t.uR) {
                const AgentControl eff =
                    in_shielding_set(t.cert, x, raw) ? safe_action(t.cert, x) : raw;
                double v = t.cost.stage(x, eff);
                for (std::size_t m = 0; m < t.uH.size(); ++m) {
                    const JointState s = step_joint(x, eff, t.uH[m], t.dt);
                    double drift = 0.0;
                    for (std::size_t h2 = 0; h2 < 2; ++h2)
                        drift += t.transition.P(static_cast<Eigen::Index>(h),
                                                static_cast<Eigen::Index>(h2)) *
                                 t.xgrid.interpolate(V[h2], s.vec());
                    v += lik.weights[m] * drift;
                }
                best = std::min(best, v);
            }
            const TerminalEval ev = terminal_value(table, t.cert, x, b);
            CHECK(std::abs(ev.value - best) <= 1e-9);
            CHECK(!ev.clamped);
        }
    }
}

TEST_CASE("qmdp_policy returns the raw lattice action of the minimizer") {
    const Toy& t = toy();
    QmdpOptions opts;
    opts.horizon = 2;
    opts.robot_ref_speed = 25.0;
    const QmdpTable table = solve_qmdp(t.cert, t.xgrid, t.basis, t.params, t.uR, t.uH,
                                       t.transition, t.cost, t.dt, opts);
    const JointState x{10.0, -2.0, 0.0, 0.0};
    const Belief b = Belief::uniform(2);
    const AgentControl u = qmdp_policy(table, t.cert, x, b);
    const TerminalEval ev = terminal_value(table, t.cert, x, b);
    CHECK(u.a == doctest::Approx(t.uR[ev.action_index].a));
    Belief bad;
    bad.w = Eigen::Vector3d::Constant(1.0 / 3.0);
    CHECK_THROWS_AS(terminal_value(table, t.cert, x, bad), std::invalid_argument);
}

TEST_CASE("table cache round-trips and detects staleness") {
    const Toy& t = toy();
    QmdpOptions opts;
    opts.horizon = 2;
    opts.robot_ref_speed = 25.0;
    const QmdpTable table = solve_qmdp(t.cert, t.xgrid, t.basis, t.params, t.uR, t.uH,
                                       t.transition, t.cost, t.dt, opts);
    const std::string path = "test_qmdp_cache.bin";
    save_qmdp(table, path);
    const QmdpTable back = load_qmdp(path);
    CHECK(back.value == table.value);
    CHECK(back.greedy == table.greedy);
    CHECK(back.horizon == table.horizon);
    CHECK(back.shield_aware == table.shield_aware);
    CHECK(qmdp_descriptor_hash(back) == qmdp_descriptor_hash(table));

    // A descriptor edit in the sidecar must be rejected on load.
    {
        std::ifstream in(path + ".json");
        nlohmann::json j;
        in >> j;
        in.close();
        j["cost"]["w_lat"] = j["cost"]["w_lat"].get<double>() + 0.5;
        std::ofstream out(path + ".json");
        out << j.dump(2) << "\n";
    }
    CHECK_THROWS_AS(load_qmdp(path), std::runtime_error);
    std::remove(path.c_str());
    std::remove((path + ".json").c_str());
}

TEST_CASE("grids not covered by the certificate are rejected") {
    const Toy& t = toy();
    const Grid4 wide({-100.0, -6.0, -2.0, -2.0}, {100.0, 6.0, 2.0, 2.0}, {5, 5, 3, 3});
    QmdpOptions opts;
    opts.horizon = 1;
    CHECK_THROWS_AS(solve_qmdp(t.cert, wide, t.basis, t.params, t.uR, t.uH, t.transition,
                               t.cost, t.dt, opts),
                    std::invalid_argument);
    opts.horizon = 0;
    CHECK_THROWS_AS(solve_qmdp(t.cert, t.xgrid, t.basis, t.params, t.uR, t.uH, t.transition,
                               t.cost, t.dt, opts),
                    std::invalid_argument);
}
