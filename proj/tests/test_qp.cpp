#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "sap/qp.hpp"
#include "sap/util.hpp"

using namespace sap;

namespace {

Eigen::MatrixXd random_spd(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) m(i, j) = normal(rng);
    return m.transpose() * m + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

Eigen::VectorXd random_vec(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
    return v;
}

// Independent oracle for box-constrained QPs: projected gradient descent with
// the exact Lipschitz step, run to tight tolerance.
Eigen::VectorXd projected_gradient(const QpProblem& p, int iters) {
    const double L = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(p.P).eigenvalues().maxCoeff();
    Eigen::VectorXd z = Eigen::VectorXd::Zero(p.num_vars());
    for (int k = 0; k < iters; ++k) {
        const Eigen::VectorXd g = p.P * z + p.q;
        z = (z - g / L).cwiseMax(p.l).cwiseMin(p.u);
    }
    return z;
}

double objective(const QpProblem& p, const Eigen::VectorXd& z) {
    return 0.5 * z.dot(p.P * z) + p.q.dot(z);
}

}  // namespace

TEST_CASE("unconstrained solves match the closed form") {
    auto rng = make_stream(1, "qp-unconstrained");
    for (int t = 0; t < 20; ++t) {
        QpProblem p;
        p.P = random_spd(8, rng);
        p.q = random_vec(8, rng);
        p.A = Eigen::MatrixXd::Zero(0, 8);
        p.l = Eigen::VectorXd::Zero(0);
        p.u = Eigen::VectorXd::Zero(0);
        const QpSolution s = solve_qp(p);
        REQUIRE(s.status == QpStatus::kOptimal);
        const Eigen::VectorXd exact = -p.P.ldlt().solve(p.q);
        CHECK((s.z - exact).lpNorm<Eigen::Infinity>() <= 1e-5);
        CHECK(s.dual_residual <= 1e-6 + 1e-6 * p.q.lpNorm<Eigen::Infinity>());
    }
}

TEST_CASE("box-constrained solves match a projected-gradient oracle in objective") {
    auto rng = make_stream(2, "qp-box");
    for (int t = 0; t < 30; ++t) {
        const Eigen::Index n = 20;
        QpProblem p;
        p.P = random_spd(n, rng);
        p.q = random_vec(n, rng) * 3.0;
        p.A = Eigen::MatrixXd::Identity(n, n);
        p.l = random_vec(n, rng).cwiseMin(-0.1);
        p.u = random_vec(n, rng).cwiseMax(0.1);
        const QpSolution s = solve_qp(p);
        REQUIRE(s.status == QpStatus::kOptimal);
        const Eigen::VectorXd oracle = projected_gradient(p, 200000);
        CHECK(std::abs(objective(p, s.z) - objective(p, oracle)) <= 1e-5);
        // Feasibility of the returned point.
        CHECK(((s.z - p.l).array() >= -1e-6).all());
        CHECK(((p.u - s.z).array() >= -1e-6).all());
    }
}

TEST_CASE("equality-constrained solves match the KKT closed form") {
    auto rng = make_stream(3, "qp-equality");
    for (int t = 0; t < 20; ++t) {
        const Eigen::Index n = 12, m = 4;
        QpProblem p;
        p.P = random_spd(n, rng);
        p.q = random_vec(n, rng);
        p.A = Eigen::MatrixXd::Zero(m, n);
        for (Eigen::Index i = 0; i < m; ++i) p.A.row(i) = random_vec(n, rng).transpose();
        const Eigen::VectorXd b = random_vec(m, rng);
        p.l = b;
        p.u = b;
        const QpSolution s = solve_qp(p);
        REQUIRE(s.status == QpStatus::kOptimal);

        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + m, n + m);
        kkt.topLeftCorner(n, n) = p.P;
        kkt.topRightCorner(n, m) = p.A.transpose();
        kkt.bottomLeftCorner(m, n) = p.A;
        Eigen::VectorXd rhs(n + m);
        rhs.head(n) = -p.q;
        rhs.tail(m) = b;
        const Eigen::VectorXd exact = kkt.fullPivLu().solve(rhs).head(n);
        CHECK((s.z - exact).lpNorm<Eigen::Infinity>() <= 1e-5);
        CHECK((p.A * s.z - b).lpNorm<Eigen::Infinity>() <= 1e-5);
    }
}

TEST_CASE("general inequality solves satisfy the KKT conditions") {
    auto rng = make_stream(4, "qp-kkt");
    for (int t = 0; t < 30; ++t) {
        const Eigen::Index n = 15, m = 25;
        QpProblem p;
        p.P = random_spd(n, rng);
        p.q = random_vec(n, rng) * 2.0;
        p.A = Eigen::MatrixXd(m, n);
        for (Eigen::Index i = 0; i < m; ++i) p.A.row(i) = random_vec(n, rng).transpose();
        // Feasible by construction around a random interior point.
        const Eigen::VectorXd z0 = random_vec(n, rng);
        const Eigen::VectorXd az = p.A * z0;
        p.l = az - random_vec(m, rng).cwiseAbs() - Eigen::VectorXd::Constant(m, 0.1);
        p.u = az + random_vec(m, rng).cwiseAbs() + Eigen::VectorXd::Constant(m, 0.1);
        const QpSolution s = solve_qp(p);
        REQUIRE(s.status == QpStatus::kOptimal);

        // Stationarity: Pz + q + A'y = 0.
        const double stat = (p.P * s.z + p.q + p.A.transpose() * s.y).lpNorm<Eigen::Infinity>();
        const double scale = std::max({1.0, (p.P * s.z).lpNorm<Eigen::Infinity>(),
                                       p.q.lpNorm<Eigen::Infinity>()});
        CHECK(stat / scale <= 1e-6);
        CHECK(s.primal_residual <= 1e-6 + 1e-6 * (p.A * s.z).lpNorm<Eigen::Infinity>());
        // Dual sign/complementarity: y < 0 only at the lower bound, y > 0 only
        // at the upper bound.
        const Eigen::VectorXd azs = p.A * s.z;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (s.y(i) > 1e-5) CHECK(p.u(i) - azs(i) <= 1e-4);
            if (s.y(i) < -1e-5) CHECK(azs(i) - p.l(i) <= 1e-4);
        }
    }
}

TEST_CASE("mixed equality/inequality problems with large penalty scales converge") {
    // Shape of the planner QPs: equality dynamics rows plus soft rows whose
    // gradient scale is several orders larger than the rest.
    auto rng = make_stream(5, "qp-scales");
    const Eigen::Index n = 18, me = 6, mi = 12;
    QpProblem p;
    p.P = random_spd(n, rng);
    p.P.diagonal().tail(4).array() += 1e4;  // heavy slack penalties
    p.q = random_vec(n, rng);
    p.q.tail(4).array() += 1e4;
    p.A = Eigen::MatrixXd(me + mi, n);
    for (Eigen::Index i = 0; i < me + mi; ++i) p.A.row(i) = random_vec(n, rng).transpose();
    const Eigen::VectorXd z0 = random_vec(n, rng);
    const Eigen::VectorXd az = p.A * z0;
    p.l = az;
    p.u = az;
    p.l.tail(mi) = az.tail(mi) - random_vec(mi, rng).cwiseAbs() -
                   Eigen::VectorXd::Constant(mi, 0.5);
    p.u.tail(mi) = az.tail(mi) + random_vec(mi, rng).cwiseAbs() +
                   Eigen::VectorXd::Constant(mi, 0.5);
    const QpSolution s = solve_qp(p);
    CHECK(s.status == QpStatus::kOptimal);
}

TEST_CASE("infeasible and malformed problems are flagged") {
    QpProblem p;
    p.P = Eigen::MatrixXd::Identity(2, 2);
    p.q = Eigen::VectorXd::Zero(2);
    p.A = Eigen::MatrixXd::Identity(2, 2);
    p.l = Eigen::Vector2d(1.0, 0.0);
    p.u = Eigen::Vector2d(-1.0, 1.0);  // l > u in row 0
    CHECK(solve_qp(p).status == QpStatus::kInfeasible);

    p.u = Eigen::Vector2d(2.0, 1.0);
    p.q(0) = std::numeric_limits<double>::quiet_NaN();
    CHECK(solve_qp(p).status == QpStatus::kBadProblem);

    QpProblem mismatched;
    mismatched.P = Eigen::MatrixXd::Identity(3, 3);
    mismatched.q = Eigen::VectorXd::Zero(2);
    CHECK(!mismatched.well_formed());
    CHECK(solve_qp(mismatched).status == QpStatus::kBadProblem);
}

TEST_CASE("identical inputs give identical outputs") {
    auto rng = make_stream(6, "qp-determinism");
    QpProblem p;
    p.P = random_spd(10, rng);
    p.q = random_vec(10, rng);
    p.A = Eigen::MatrixXd::Identity(10, 10);
    p.l = Eigen::VectorXd::Constant(10, -1.0);
    p.u = Eigen::VectorXd::Constant(10, 1.0);
    const QpSolution a = solve_qp(p);
    const QpSolution b = solve_qp(p);
    CHECK(a.z == b.z);
    CHECK(a.y == b.y);
    CHECK(a.iterations == b.iterations);
}
