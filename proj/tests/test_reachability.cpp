#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "sap/reachability.hpp"
#include "sap/util.hpp"

using namespace sap;

namespace {

// Longitudinal-only sub-problem: lateral channels frozen at zero, so failure
// reduces to |p_x_r| < sep_long and the dynamics to a double integrator.
struct BrakingFixture {
    FailureSpec spec;
    SafetyCertificate cert;

    BrakingFixture() {
        spec.sep_long = 5.5;
        spec.sep_lat = 2.0;
        spec.road_half = 100.0;  // road clause never binds
        const Grid4 grid({-40.0, -10.0, -0.1, -0.1}, {40.0, 10.0, 0.1, 0.1}, {81, 41, 3, 3});
        const ControlBounds robot{0.0, 0.0, -5.0, 3.0};
        const ControlBounds human{0.0, 0.0, -3.0, 2.0};
        cert = compute_certificate(grid, spec, control_lattice(robot, 1, 3),
                                   control_lattice(human, 1, 3), TimeStep{0.2},
                                   CertificateOptions{1e-6, 400, 0});
    }
};

const BrakingFixture& braking() {
    static BrakingFixture f;
    return f;
}

// Discrete-time braking-distance oracle: both agents play their extremal
// longitudinal actions; returns the minimal separation reachable from
// (px, v_r) before the closing velocity is burned off.
double braking_oracle_min_px(double px, double v, double a_rel, double dt) {
    double mn = px;
    while (v < 0.0) {
        px += v * dt;
        v += a_rel * dt;
        mn = std::min(mn, px);
    }
    return mn;
}

}  // namespace

TEST_CASE("failure margin sign matches the set definition") {
    const FailureSpec spec;  // 5.5 / 2.0 / 3.7
    // Collision: close in both axes.
    CHECK(failure_margin({3.0, 0.0, 0.0, 1.0}, spec) < 0.0);
    // Long separation alone is enough.
    CHECK(failure_margin({10.0, 0.0, 0.0, 1.0}, spec) > 0.0);
    // Lateral separation alone is enough.
    CHECK(failure_margin({3.0, 0.0, -1.85, 1.85}, spec) > 0.0);
    // Off the road is failure regardless of separation.
    CHECK(failure_margin({50.0, 0.0, 4.0, 0.0}, spec) < 0.0);
    // Hand value: min(max(|3|-5.5, |1.0|-2.0), 3.7-0) = -1.0.
    CHECK(failure_margin({3.0, 0.0, 0.0, 1.0}, spec) == doctest::Approx(-1.0));
}

TEST_CASE("control lattice spans the box with the requested resolution") {
    const ControlBounds b{-2.0, 2.0, -5.0, 3.0};
    const auto lat = control_lattice(b, 3, 5);
    CHECK(lat.size() == 15);
    for (const auto& u : lat) CHECK(b.contains(u));
    CHECK(lat.front().v_lat == doctest::Approx(-2.0));
    CHECK(lat.front().a == doctest::Approx(-5.0));
    CHECK(lat.back().v_lat == doctest::Approx(2.0));
    CHECK(lat.back().a == doctest::Approx(3.0));
    const auto mid = control_lattice(b, 1, 1);
    CHECK(mid[0].v_lat == doctest::Approx(0.0));
    CHECK(mid[0].a == doctest::Approx(-1.0));
}

TEST_CASE("value iteration converges and stays below the failure margin") {
    const auto& f = braking();
    CHECK(f.cert.converged);
    CHECK(f.cert.margin >= 0.0);
    for (std::size_t i = 0; i < f.cert.grid.size(); ++i) {
        const JointState x = JointState::from_vec(f.cert.grid.point(i));
        CHECK(f.cert.value[i] <= failure_margin(x, f.spec) + 1e-12);
    }
}

TEST_CASE("safe-set boundary tracks the discrete braking parabola within one cell") {
    const auto& f = braking();
    const double dt = f.cert.dt.dt;
    const double cell = f.cert.grid.step(0);  // 1 m in p_x_r

    // Human ahead, robot closing: worst human brakes at -3, robot counters at
    // -5, so the relative acceleration is +2.
    for (double v = -8.0; v <= -1.0; v += 0.5) {
        double boundary = -1.0;
        for (double px = f.spec.sep_long; px <= 40.0; px += 0.05) {
            if (f.cert.in_safe_set({px, v, 0.0, 0.0})) {
                boundary = px;
                break;
            }
        }
        REQUIRE(boundary > 0.0);
        // Analytic boundary: smallest px whose braking trajectory never dips
        // below sep_long.
        double oracle = f.spec.sep_long;
        for (double px = f.spec.sep_long; px <= 40.0; px += 0.01) {
            if (braking_oracle_min_px(px, v, 2.0, dt) > f.spec.sep_long) {
                oracle = px;
                break;
            }
        }
        CHECK(std::abs(boundary - oracle) <= cell);
    }

    // Robot ahead, human closing from behind: worst human floors it at +2,
    // robot counters at +3, so the relative acceleration is -1.
    for (double v = 1.0; v <= 5.0; v += 0.5) {
        double boundary = -1.0;
        for (double px = -f.spec.sep_long; px >= -40.0; px -= 0.05) {
            if (f.cert.in_safe_set({px, v, 0.0, 0.0})) {
                boundary = px;
                break;
            }
        }
        REQUIRE(boundary < 0.0);
        double oracle = -f.spec.sep_long;
        for (double px = -f.spec.sep_long; px >= -40.0; px -= 0.01) {
            if (braking_oracle_min_px(-px, -v, 1.0, dt) > f.spec.sep_long) {
                oracle = px;
                break;
            }
        }
        CHECK(std::abs(boundary - oracle) <= cell);
    }
}

TEST_CASE("ten thousand sampled safe states survive one worst-case shielded step") {
    const auto& f = braking();
    auto rng = make_stream(17, "reach-invariance");
    std::uniform_real_distribution<double> px(-40.0, 40.0), vr(-10.0, 10.0);
    std::size_t checked = 0, violations = 0;
    while (checked < 10000) {
        const JointState x{px(rng), vr(rng), 0.0, 0.0};
        if (!f.cert.in_safe_set(x)) continue;
        ++checked;
        if (failure_margin(x, f.spec) <= 0.0) ++violations;
        const AgentControl u = safe_action(f.cert, x);
        for (const auto& uh : f.cert.uH) {
            const JointState n = step_joint(x, u, uh, f.cert.dt);
            if (f.cert.grid.interpolate(f.cert.value, n.vec()) < 0.0) ++violations;
        }
    }
    CHECK(violations == 0);
}

TEST_CASE("closed-loop safety policy keeps the failure margin positive") {
    const auto& f = braking();
    auto rng = make_stream(29, "reach-closed-loop");
    std::uniform_real_distribution<double> px(-40.0, 40.0), vr(-10.0, 10.0);
    std::uniform_int_distribution<std::size_t> adversary(0, f.cert.uH.size() - 1);
    int starts = 0;
    while (starts < 200) {
        JointState x{px(rng), vr(rng), 0.0, 0.0};
        if (!f.cert.in_safe_set(x)) continue;
        ++starts;
        for (int k = 0; k < 50; ++k) {
            CHECK(failure_margin(x, f.spec) > 0.0);
            // Worst-case adversary: pick the human action minimizing the value.
            const AgentControl u = safe_action(f.cert, x);
            JointState worst = step_joint(x, u, f.cert.uH[0], f.cert.dt);
            double wv = f.cert.grid.interpolate(f.cert.value, worst.vec());
            for (std::size_t i = 1; i < f.cert.uH.size(); ++i) {
                const JointState n = step_joint(x, u, f.cert.uH[i], f.cert.dt);
                const double v = f.cert.grid.interpolate(f.cert.value, n.vec());
                if (v < wv) {
                    wv = v;
                    worst = n;
                }
            }
            x = worst;
        }
    }
}

TEST_CASE("shield is least restrictive") {
    const auto& f = braking();
    // Far apart and not closing: any candidate passes through untouched.
    const JointState calm{35.0, 1.0, 0.0, 0.0};
    REQUIRE(f.cert.in_safe_set(calm));
    const AgentControl cand{0.0, 3.0};
    REQUIRE(!in_shielding_set(f.cert, calm, cand));
    const ShieldResult pass = shield(f.cert, calm, cand);
    CHECK(!pass.shielded);
    CHECK(pass.action.a == doctest::Approx(cand.a));

    // Near the boundary with full throttle toward the human: must override,
    // and the override equals the safety policy.
    JointState tight{17.0, -6.0, 0.0, 0.0};
    REQUIRE(f.cert.in_safe_set(tight));
    const ShieldResult hit = shield(f.cert, tight, AgentControl{0.0, 3.0});
    CHECK(hit.shielded);
    const AgentControl safe = safe_action(f.cert, tight);
    CHECK(hit.action.a == doctest::Approx(safe.a));
    CHECK(hit.action.v_lat == doctest::Approx(safe.v_lat));
}

TEST_CASE("shielding set agrees with direct successor enumeration") {
    const auto& f = braking();
    auto rng = make_stream(31, "reach-shield-set");
    std::uniform_real_distribution<double> px(-40.0, 40.0), vr(-10.0, 10.0);
    std::uniform_int_distribution<std::size_t> pick(0, f.cert.uR.size() - 1);
    for (int k = 0; k < 2000; ++k) {
        const JointState x{px(rng), vr(rng), 0.0, 0.0};
        const AgentControl u = f.cert.uR[pick(rng)];
        bool expect = false;
        for (const auto& uh : f.cert.uH) {
            const JointState n = step_joint(x, u, uh, f.cert.dt);
            if (f.cert.grid.interpolate(f.cert.value, n.vec()) < f.cert.margin) expect = true;
        }
        CHECK(in_shielding_set(f.cert, x, u) == expect);
    }
}

TEST_CASE("certificate cache round-trips and rejects tampering") {
    const auto& f = braking();
    const std::string path = "test_cert_cache.bin";
    save_certificate(f.cert, path);
    const SafetyCertificate back = load_certificate(path);
    CHECK(back.grid.n == f.cert.grid.n);
    CHECK(back.margin == doctest::Approx(f.cert.margin).epsilon(1e-15));
    CHECK(back.value == f.cert.value);
    CHECK(back.uR.size() == f.cert.uR.size());

    // Flip one stored byte: the content hash must catch it.
    {
        std::fstream file(path, std::ios::in | std::ios::out | std::ios::binary);
        file.seekp(128);
        char c;
        file.seekg(128);
        file.get(c);
        file.seekp(128);
        file.put(static_cast<char>(c ^ 0x1));
    }
    CHECK_THROWS_AS(load_certificate(path), std::runtime_error);
    std::remove(path.c_str());
    std::remove((path + ".json").c_str());
}

TEST_CASE("degenerate problems are rejected") {
    const Grid4 grid({-40.0, -10.0, -0.1, -0.1}, {40.0, 10.0, 0.1, 0.1}, {11, 5, 3, 3});
    FailureSpec spec;
    spec.sep_long = 1000.0;  // failure everywhere: no safe set exists
    spec.road_half = 100.0;
    const ControlBounds b{0.0, 0.0, -5.0, 3.0};
    CHECK_THROWS_AS(compute_certificate(grid, spec, control_lattice(b, 1, 3),
                                        control_lattice(b, 1, 3), TimeStep{0.2},
                                        CertificateOptions{1e-4, 50, 0}),
                    std::runtime_error);
    FailureSpec bad;
    bad.sep_long = -1.0;
    CHECK_THROWS_AS(compute_certificate(grid, bad, control_lattice(b, 1, 3),
                                        control_lattice(b, 1, 3), TimeStep{0.2}),
                    std::invalid_argument);
    CHECK_THROWS_AS(compute_certificate(grid, spec, {}, control_lattice(b, 1, 3), TimeStep{0.2}),
                    std::invalid_argument);
}
