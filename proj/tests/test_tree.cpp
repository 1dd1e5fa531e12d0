#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "sap/tree.hpp"
#include "sap/util.hpp"

using namespace sap;

namespace {

struct Fixture {
    SafetyCertificate cert;
    QmdpTable table;
    QmdpTable table_unaware;
    IntentBasis basis;
    ParamGrid params;
    std::vector<AgentControl> lattice;
    TransitionModel transition;
    TimeStep dt{0.2};

    Fixture() {
        const Grid4 cgrid({-25.0, -10.0, -3.7, -3.7}, {25.0, 10.0, 3.7, 3.7}, {17, 11, 7, 7});
        FailureSpec spec;
        const ControlBounds robot{-2.0, 2.0, -5.0, 3.0};
        const ControlBounds adversary{-1.0, 1.0, -3.0, 2.0};
        cert = compute_certificate(cgrid, spec, control_lattice(robot, 3, 3),
                                   control_lattice(adversary, 3, 3), dt,
                                   CertificateOptions{1e-4, 150, 0});

        basis.target1 = {-1.85, 25.0};
        basis.target2 = {1.85, 25.0};
        basis.dt = dt.dt;
        params = ParamGrid::make({1.0, 10.0}, {0.0, 1.0});
        lattice = control_lattice(ControlBounds{-2.0, 2.0, -5.0, 3.0}, 3, 3);
        transition = TransitionModel::sticky(params.size(), 0.05);

        const Grid4 xgrid({-20.0, -8.0, -3.0, -3.0}, {20.0, 8.0, 3.0, 3.0}, {11, 9, 7, 7});
        QmdpOptions opts;
        opts.horizon = 6;
        opts.robot_ref_speed = 30.0;
        QuadraticCost cost;
        table = solve_qmdp(cert, xgrid, basis, params, control_lattice(ControlBounds{-2, 2, -5, 3}, 3, 3),
                           lattice, transition, cost, dt, opts);
        opts.shield_aware = false;
        table_unaware = solve_qmdp(cert, xgrid, basis, params,
                                   control_lattice(ControlBounds{-2, 2, -5, 3}, 3, 3), lattice,
                                   transition, cost, dt, opts);
    }

    BayesFilter filter() const { return BayesFilter(basis, params, lattice, transition); }
};

const Fixture& fix() {
    static Fixture f;
    return f;
}

JointState random_safe_state(const SafetyCertificate& cert, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> px(-18.0, 18.0), vr(-6.0, 6.0), lat(-2.5, 2.5);
    for (int k = 0; k < 10000; ++k) {
        const JointState x{px(rng), vr(rng), lat(rng), lat(rng)};
        if (cert.in_safe_set(x)) return x;
    }
    throw std::runtime_error("no safe state found");
}

Belief random_belief(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.01, 1.0);
    Belief b;
    b.w.resize(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < b.w.size(); ++i) b.w(i) = unif(rng);
    b.normalize();
    return b;
}

}  // namespace

TEST_CASE("scenario distance is the quadratic form and rejects mismatches") {
    Eigen::VectorXd a(4), b(4);
    a << 1.0, 2.0, 3.0, 4.0;
    b << 0.0, 2.0, 3.0, 2.0;
    const Eigen::MatrixXd H = 2.0 * Eigen::MatrixXd::Identity(4, 4);
    CHECK(scenario_distance(a, b, H) == doctest::Approx(2.0 * (1.0 + 4.0)).epsilon(1e-12));
    Eigen::VectorXd c(3);
    CHECK_THROWS_AS(scenario_distance(a, c, H), std::invalid_argument);
}

TEST_CASE("one thousand randomized builds satisfy the structural properties") {
    const Fixture& f = fix();
    const BayesFilter filter = f.filter();
    TreeOptions opts;
    opts.max_nodes = 25;
    opts.horizon = 6;
    opts.branch_samples = 3;
    const TreeBuilder builder(f.cert, f.table, filter, opts);

    auto seeder = make_stream(99, "tree-prop");
    for (int trial = 0; trial < 1000; ++trial) {
        const JointState x0 = random_safe_state(f.cert, seeder);
        const Belief b0 = random_belief(f.params.size(), seeder);
        auto rng = make_stream(static_cast<std::uint64_t>(trial), "tree-build");
        const ScenarioTree tree = builder.build(x0, b0, rng);

        // Node cap: at most M plus one final rollout of length N_bar.
        CHECK(tree.nodes.size() <= opts.max_nodes + static_cast<std::size_t>(opts.horizon));

        // Per-depth normalized path probabilities sum to one.
        std::vector<double> depth_sum(static_cast<std::size_t>(tree.horizon) + 1, 0.0);
        for (const auto& n : tree.nodes) {
            CHECK(n.t <= tree.horizon);
            depth_sum[static_cast<std::size_t>(n.t)] += n.p;
            if (n.parent >= 0) {
                const auto& par = tree.nodes[static_cast<std::size_t>(n.parent)];
                CHECK(par.t == n.t - 1);
                CHECK(n.p_raw == doctest::Approx(par.p_raw * n.pbar).epsilon(1e-12));
            }
        }
        for (double s : depth_sum) CHECK(std::abs(s - 1.0) <= 1e-9);

        // Every shielded node stores exactly the safety action.
        for (int id : tree.shield_set) {
            const auto& n = tree.nodes[static_cast<std::size_t>(id)];
            CHECK(n.shielded);
            const AgentControl safe = safe_action(f.cert, n.x);
            CHECK(n.uR.v_lat == doctest::Approx(safe.v_lat));
            CHECK(n.uR.a == doctest::Approx(safe.a));
        }
        for (const auto& n : tree.nodes) {
            if (n.has_action && !n.shielded)
                CHECK(!in_shielding_set(f.cert, n.x, n.uR));
        }
    }
}

TEST_CASE("identical seeds yield identical trees") {
    const Fixture& f = fix();
    const BayesFilter filter = f.filter();
    TreeOptions opts;
    opts.max_nodes = 30;
    opts.horizon = 6;
    const TreeBuilder builder(f.cert, f.table, filter, opts);
    auto seeder = make_stream(7, "tree-det");
    for (int trial = 0; trial < 20; ++trial) {
        const JointState x0 = random_safe_state(f.cert, seeder);
        const Belief b0 = random_belief(f.params.size(), seeder);
        auto r1 = make_stream(1234, "t", static_cast<std::uint64_t>(trial));
        auto r2 = make_stream(1234, "t", static_cast<std::uint64_t>(trial));
        const ScenarioTree t1 = builder.build(x0, b0, r1);
        const ScenarioTree t2 = builder.build(x0, b0, r2);
        REQUIRE(t1.nodes.size() == t2.nodes.size());
        for (std::size_t i = 0; i < t1.nodes.size(); ++i) {
            CHECK(t1.nodes[i].x.vec() == t2.nodes[i].x.vec());
            CHECK(t1.nodes[i].uR.vec() == t2.nodes[i].uR.vec());
            CHECK(t1.nodes[i].uH_edge.vec() == t2.nodes[i].uH_edge.vec());
            CHECK(t1.nodes[i].p == t2.nodes[i].p);
        }
        CHECK(t1.shield_set == t2.shield_set);
    }
}

TEST_CASE("leaves and scenario paths are consistent") {
    const Fixture& f = fix();
    const BayesFilter filter = f.filter();
    TreeOptions opts;
    opts.max_nodes = 40;
    opts.horizon = 5;
    const TreeBuilder builder(f.cert, f.table, filter, opts);
    auto rng = make_stream(3, "tree-paths");
    const JointState x0 = random_safe_state(f.cert, rng);
    const ScenarioTree tree = builder.build(x0, Belief::uniform(f.params.size()), rng);
    const auto leaves = tree.leaves();
    CHECK(!leaves.empty());
    for (int leaf : leaves) {
        CHECK(tree.is_leaf(tree.nodes[static_cast<std::size_t>(leaf)]));
        const auto path = tree.scenario_states(leaf);
        CHECK(path.size() == static_cast<std::size_t>(tree.horizon) + 1);
        CHECK(path.front().vec() == x0.vec());
        CHECK(path.back().vec() == tree.nodes[static_cast<std::size_t>(leaf)].x.vec());
    }
    // Non-leaf nodes have children; the root is node 0 at depth 0.
    CHECK(tree.nodes[0].t == 0);
    CHECK(tree.nodes[0].parent == -1);
}

TEST_CASE("shield-free rollouts never mark or substitute actions") {
    const Fixture& f = fix();
    const BayesFilter filter = f.filter();
    TreeOptions opts;
    opts.max_nodes = 30;
    opts.horizon = 6;
    opts.apply_shield = false;
    const TreeBuilder builder(f.cert, f.table_unaware, filter, opts);
    auto seeder = make_stream(21, "tree-noshield");
    for (int trial = 0; trial < 50; ++trial) {
        const JointState x0 = random_safe_state(f.cert, seeder);
        auto rng = make_stream(static_cast<std::uint64_t>(trial), "tree-noshield-build");
        const ScenarioTree tree = builder.build(x0, Belief::uniform(f.params.size()), rng);
        CHECK(tree.shield_set.empty());
        for (const auto& n : tree.nodes) CHECK(!n.shielded);
    }
}

TEST_CASE("roots outside the safe set and invalid beliefs are rejected") {
    const Fixture& f = fix();
    const BayesFilter filter = f.filter();
    const TreeBuilder builder(f.cert, f.table, filter, TreeOptions{});
    auto rng = make_stream(0, "tree-throws");
    const JointState unsafe{0.0, 0.0, 0.0, 0.0};  // co-located: inside the failure set
    REQUIRE(!f.cert.in_safe_set(unsafe));
    CHECK_THROWS_AS(builder.build(unsafe, Belief::uniform(f.params.size()), rng),
                    std::runtime_error);
    Belief bad;
    bad.w = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(f.params.size()), 0.5);
    const JointState ok = random_safe_state(f.cert, rng);
    CHECK_THROWS_AS(builder.build(ok, bad, rng), std::invalid_argument);
    CHECK_THROWS_AS(TreeBuilder(f.cert, f.table, filter, TreeOptions{0, 5, 3, 1e-6}),
                    std::invalid_argument);
}
