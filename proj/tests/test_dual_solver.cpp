#include "doctest.h"
#include "test_support.hpp"

#include "dualfb/dual_solver.hpp"
#include "dualfb/errors.hpp"

#include <Eigen/LU>

#include <cmath>
#include <random>
#include <vector>

using namespace dualfb;
using dualfb::testing::case_model;

namespace {

/// Dense LCP  min(Mv − q, v − ψ) = 0  by policy iteration with LU solves.
Eigen::VectorXd dense_lcp(const Eigen::MatrixXd& M, const Eigen::VectorXd& q, const Eigen::VectorXd& psi) {
    const Eigen::Index m = q.size();
    std::vector<bool> pinned(static_cast<std::size_t>(m), true);
    Eigen::VectorXd v = psi;
    for (int it = 0; it < 10 * m; ++it) {
        Eigen::MatrixXd A = M;
        Eigen::VectorXd rhs = q;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (pinned[static_cast<std::size_t>(i)]) {
                A.row(i).setZero();
                A(i, i) = 1.0;
                rhs(i) = psi(i);
            }
        }
        v = A.partialPivLu().solve(rhs);
        const Eigen::VectorXd w = M * v - q;
        bool changed = false;
        for (Eigen::Index i = 0; i < m; ++i) {
            const bool pin = v(i) - psi(i) < w(i);
            if (pin != pinned[static_cast<std::size_t>(i)]) changed = true;
            pinned[static_cast<std::size_t>(i)] = pin;
        }
        if (!changed) return v;
    }
    FAIL("dense policy iteration did not settle");
    return v;
}

struct StepProblem {
    std::vector<double> v_next, obstacle;
    ThetaScheme scheme;
    EdgeRows edges;
};

StepProblem step_problem(double theta) {
    const ModelParams p = case_model(0.1);
    const HullData h = compute_hull(p);
    const DualGrid g = build_grid(p, h, 50, 50);
    StepProblem s;
    s.scheme = assemble_operator(g, p, theta);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double psi = eval_dual_obstacle(g.y(i), h, p).value;
        s.obstacle.push_back(psi);
        // Terminal data lifted above ψ in the middle so both branches of the LCP are active.
        s.v_next.push_back(psi + 0.05 * std::exp(-std::pow(std::log(g.y(i) / h.k), 2)));
    }
    s.edges = {0.9, 0.1, s.obstacle.back()};
    return s;
}

/// Interior system written out densely from the row definitions.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> dense_system(const StepProblem& s) {
    const std::size_t n = s.v_next.size(), m = n - 2;
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    Eigen::VectorXd q(static_cast<Eigen::Index>(m));
    const Row3 im = s.scheme.implicit, ex = s.scheme.explicit_;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i - 1);
        q(r) = ex.lower * s.v_next[i - 1] + ex.diag * s.v_next[i] + ex.upper * s.v_next[i + 1];
        M(r, r) += im.diag;
        if (i == 1) {
            M(r, r) += im.lower * s.edges.lower_ratio;
            q(r) -= im.lower * s.edges.lower_shift;
        } else {
            M(r, r - 1) += im.lower;
        }
        if (i + 2 == n) {
            q(r) -= im.upper * s.edges.upper_value;
        } else {
            M(r, r + 1) += im.upper;
        }
    }
    return {M, q};
}

}  // namespace

TEST_CASE("grid places ln k in the middle of a cell") {
    const ModelParams p = case_model(0.1);
    const HullData h = compute_hull(p);
    const DualGrid g = build_grid(p, h, 400, 400);
    CHECK(g.size() == 400);
    const double lk = std::log(h.k);
    CHECK(g.z[g.kink_cell] < lk);
    CHECK(lk < g.z[g.kink_cell + 1]);
    CHECK(std::abs(lk - 0.5 * (g.z[g.kink_cell] + g.z[g.kink_cell + 1])) < 1e-12);
    CHECK(g.dt == doctest::Approx(1.0 / 400.0));
    CHECK_THROWS_AS(build_grid(p, h, 49, 400), InvalidGrid);
    CHECK_THROWS_AS(build_grid(p, h, 400, 10), InvalidGrid);
}

TEST_CASE("fitted stencil is exact on 1, y and y^p") {
    const ModelParams p = case_model(0.1);
    const HullData h = compute_hull(p);
    const DualGrid g = build_grid(p, h, 120, 100);
    const ThetaScheme s = assemble_operator(g, p, 1.0, StencilKind::Fitted);
    const double D = 0.5 * p.a_sq, m1 = p.beta - p.r;
    for (double q : {0.0, 1.0, dual_power(p)}) {
        const double symbol = p.beta - D * q * (q - 1.0) - m1 * q;
        for (std::size_t i = 1; i + 1 < g.size(); i += 17) {
            auto f = [&](double z) { return std::exp(q * z); };
            const Row3& a = s.spatial;
            const double applied = a.lower * f(g.z[i] - g.dz) + a.diag * f(g.z[i]) + a.upper * f(g.z[i] + g.dz);
            CAPTURE(q);
            CHECK(applied == doctest::Approx(symbol * f(g.z[i])).epsilon(1e-9));
        }
    }
    // Off-diagonals nonpositive: the implicit matrix is an M-matrix.
    CHECK(s.implicit.lower <= 0.0);
    CHECK(s.implicit.upper <= 0.0);
    CHECK(s.implicit.diag > -(s.implicit.lower + s.implicit.upper));
}

TEST_CASE("one backward step matches a dense LCP oracle on 50 nodes") {
    for (double theta : {1.0, 0.5}) {
        const StepProblem s = step_problem(theta);
        const auto [M, q] = dense_system(s);
        const Eigen::VectorXd psi =
            Eigen::Map<const Eigen::VectorXd>(s.obstacle.data() + 1, static_cast<Eigen::Index>(s.obstacle.size() - 2));
        const Eigen::VectorXd ref = dense_lcp(M, q, psi);

        SolverConfig polished;
        polished.theta = theta;
        const std::vector<double> v = step_backward(s.v_next, s.obstacle, s.scheme, s.edges, polished);
        SolverConfig psor_only = polished;
        psor_only.active_set_polish = false;
        psor_only.psor_tol = 1e-13;
        const std::vector<double> w = step_backward(s.v_next, s.obstacle, s.scheme, s.edges, psor_only);

        std::size_t active = 0;
        for (Eigen::Index i = 0; i < ref.size(); ++i) {
            const auto k = static_cast<std::size_t>(i + 1);
            CAPTURE(theta);
            CAPTURE(i);
            CHECK(v[k] == doctest::Approx(ref(i)).epsilon(1e-11));
            CHECK(w[k] == doctest::Approx(ref(i)).epsilon(1e-9));
            active += ref(i) - psi(i) < 1e-12 ? 1 : 0;
        }
        CHECK(active > 0);
        CHECK(active < static_cast<std::size_t>(ref.size()));
        CHECK(v.front() == doctest::Approx(0.9 * v[1] + 0.1).epsilon(1e-15));
        CHECK(v.back() == s.obstacle.back());

        // Complementarity of the returned vector itself.
        Eigen::VectorXd x(ref.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = v[static_cast<std::size_t>(i + 1)];
        const Eigen::VectorXd res = M * x - q;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            CHECK(x(i) - psi(i) >= -1e-12);
            CHECK(res(i) >= -1e-9);
            CHECK(std::abs(std::min(res(i), x(i) - psi(i))) < 1e-9);
        }
    }
}

TEST_CASE("solution agrees with an explicit projected scheme") {
    // Explicit Euler with centered differences in z on the same nodes, projected on ψ, with
    // v = ψ at both ends; stable for dt·(2D/dz² + β) < 1.
    const ModelParams p = case_model(0.1);
    const HullData h = compute_hull(p);
    const DualGrid g = build_grid(p, h, 200, 2000);
    const DualSolution sol = solve_dual(p, h, g, {});

    const std::size_t n = g.size();
    const double D = 0.5 * p.a_sq, drift = p.beta - p.r - D, dz = g.dz;
    const std::size_t steps = 20000;
    const double dt = p.T / static_cast<double>(steps);
    REQUIRE(dt * (2.0 * D / (dz * dz) + p.beta) < 1.0);
    std::vector<double> v(sol.psi), next(n);
    for (std::size_t s = 0; s < steps; ++s) {
        next.front() = sol.psi.front();
        next.back() = sol.psi.back();
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double vzz = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (dz * dz);
            const double vz = (v[i + 1] - v[i - 1]) / (2.0 * dz);
            next[i] = std::max(sol.psi[i], v[i] + dt * (D * vzz + drift * vz - p.beta * v[i]));
        }
        std::swap(v, next);
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = g.y(i);
        if (y < 0.1 * h.k || y > 10.0 * h.k) continue;
        worst = std::max(worst, std::abs(sol.v(0, static_cast<Eigen::Index>(i)) - v[i]));
    }
    // Both schemes are first order in time and second order in space on this grid.
    CHECK(worst < 2e-4);
}

TEST_CASE("grid refinement converges") {
    const ModelParams p = case_model(0.1);
    const HullData h = compute_hull(p);
    const std::vector<double> ys{0.55, 0.6, 0.62};  // inside (g, f) at t = 0
    // v = ψ + u with u interpolated linearly in z: interpolating v itself adds O(dz²·v) near the floor.
    std::vector<std::vector<double>> values;
    for (std::size_t n : {100u, 200u, 400u, 800u}) {
        const DualGrid g = build_grid(p, h, n, n);
        const DualSolution sol = solve_dual(p, h, g, {});
        REQUIRE(sol.g[0]);
        REQUIRE(sol.f[0]);
        std::vector<double> row;
        for (double y : ys) {
            REQUIRE(y > *sol.g[0]);
            REQUIRE(y < *sol.f[0]);
            const double z = std::log(y);
            std::size_t i = 0;
            while (g.z[i + 1] < z) ++i;
            const double w = (z - g.z[i]) / g.dz;
            const auto idx = [](std::size_t k) { return static_cast<Eigen::Index>(k); };
            row.push_back(eval_dual_obstacle(y, h, p).value + (1.0 - w) * sol.gap(0, idx(i)) +
                          w * sol.gap(0, idx(i + 1)));
        }
        values.push_back(row);
    }
    for (std::size_t k = 0; k < ys.size(); ++k) {
        CAPTURE(ys[k]);
        for (std::size_t m = 2; m < values.size(); ++m) {
            CAPTURE(m);
            CHECK(std::abs(values[m][k] - values[m - 1][k]) < std::abs(values[m - 1][k] - values[m - 2][k]));
        }
    }
}

TEST_CASE("solution properties hold for random parameters") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> ug(0.3, 0.7), ub(0.0, 1.5), uK(0.3, 1.5), ubeta(0.01, 0.15),
        ur(0.01, 0.05);
    for (int trial = 0; trial < 12; ++trial) {
        Eigen::VectorXd mu(1);
        mu << 0.06;
        Eigen::MatrixXd s(1, 1);
        s << 0.3;
        const ModelParams p = make_model(ur(rng), mu, s, ug(rng), ub(rng), uK(rng), ubeta(rng), 1.0);
        const HullData h = compute_hull(p);
        const DualGrid g = build_grid(p, h, 100, 100);
        const DualSolution sol = solve_dual(p, h, g, {});
        const BoundsReport b = verify_bounds(sol, p, h);
        CAPTURE(trial);
        CAPTURE(p.gamma);
        CAPTURE(p.b);
        CAPTURE(p.K);
        CAPTURE(p.beta);
        CAPTURE(p.r);
        CHECK(b.lower_violation <= 1e-8);
        CHECK(b.upper_violation <= 1e-6);
        CHECK(b.max_vt <= 1e-8);
        CHECK(b.max_vy <= 1e-8);
        CHECK(b.min_vyy >= -1e-8);
        CHECK(b.max_complementarity <= 1e-8);
        for (Eigen::Index j = 0; j < sol.v.rows(); ++j) {
            for (Eigen::Index i = 0; i < sol.v.cols(); ++i) {
                CHECK((sol.exercised(j, i) != 0) == (sol.gap(j, i) <= 1e-12));
            }
        }
    }
}

TEST_CASE("contact model solves the stationary equation on the contact cell") {
    const ModelParams p = case_model(0.1);
    const HullData h = compute_hull(p);
    const DualGrid g = build_grid(p, h, 400, 400);
    const DualSolution sol = solve_dual(p, h, g, {});
    const double D = 0.5 * p.a_sq, source = p.beta * std::pow(p.K, p.gamma) / p.gamma;
    for (std::size_t level : {std::size_t{0}, std::size_t{200}, std::size_t{390}}) {
        const std::size_t fn = *sol.f_node[level];
        const ContactPoint cp = locate_contact(sol, p, level, fn, fn - 1);
        CAPTURE(level);
        CHECK(cp.flat);
        CHECK(cp.y == doctest::Approx(*sol.f[level]).epsilon(1e-15));
        CHECK(std::abs(cp.gap(cp.y).value) < 1e-12);
        CHECK(std::abs(cp.gap(cp.y).d1) < 1e-10);
        const double y_a = g.y(cp.anchor);
        CHECK(cp.gap(y_a).value == doctest::Approx(sol.gap(static_cast<Eigen::Index>(level),
                                                           static_cast<Eigen::Index>(cp.anchor)))
                                       .epsilon(1e-9));
        // Residual −Dy²u'' − (β−r)yu' + βu + Lψ̃ is the time source: linear in y, zero at y_b.
        auto residual = [&](double y) {
            const ObstacleValue u = cp.gap(y);
            return -D * y * y * u.d2 - (p.beta - p.r) * y * u.d1 + p.beta * u.value + source;
        };
        CHECK(std::abs(residual(cp.y)) < 1e-9);
        const double mid = 0.5 * (cp.y + y_a);
        CHECK(residual(mid) == doctest::Approx(0.5 * residual(y_a)).epsilon(1e-6).scale(1e-9));
        CHECK(std::abs(std::log(cp.y) - g.z[fn]) <= g.dz);
    }
}

TEST_CASE("boundaries of the Case I solution") {
    const ModelParams p = case_model(0.1);
    const HullData h = compute_hull(p);
    const DualGrid g = build_grid(p, h, 400, 400);
    const DualSolution sol = solve_dual(p, h, g, {});
    CHECK(sol.case_label.case_id == CaseId::I);
    for (std::size_t j = 0; j + 1 < sol.n_levels(); ++j) {
        CHECK(sol.h_at_floor[j]);
        REQUIRE(sol.f[j]);
        REQUIRE(sol.g[j]);
        CHECK(*sol.g[j] < h.k);
        CHECK(*sol.f[j] > h.k);
    }
}
