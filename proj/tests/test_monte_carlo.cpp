#include "doctest.h"
#include "test_support.hpp"

#include "dualfb/errors.hpp"
#include "dualfb/monte_carlo.hpp"
#include "dualfb/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

using namespace dualfb;
using dualfb::testing::case_model;

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

SimConfig small_sim(std::size_t threads, double dt = 0.01) {
    SimConfig c;
    c.n_paths = 4000;
    c.dt_sim = dt;
    c.seed = 99;
    c.threads = threads;
    return c;
}

}  // namespace

TEST_CASE("Philox4x32-10 known-answer vectors") {
    using B = Philox4x32::Block;
    CHECK(Philox4x32(0u, 0u)(B{0u, 0u, 0u, 0u}) == B{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(Philox4x32(0xffffffffu, 0xffffffffu)(B{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}) ==
          B{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(Philox4x32(0xa4093822u, 0x299f31d0u)(B{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}) ==
          B{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("uniforms stay inside the open unit interval and normals are standard") {
    CHECK(Philox4x32::to_unit(0u, 0u) > 0.0);
    CHECK(Philox4x32::to_unit(0xffffffffu, 0xffffffffu) < 1.0);
    const Philox4x32 gen(12345);
    const int n = 200000;
    double sum = 0.0, sq = 0.0, cross = 0.0;
    for (int i = 0; i < n / 2; ++i) {
        const auto [a, b] = gen.normals(static_cast<std::uint32_t>(i), 0u, 7u);
        sum += a + b;
        sq += a * a + b * b;
        cross += a * b;
    }
    CHECK(std::abs(sum / n) < 4.0 / std::sqrt(n));
    CHECK(std::abs(sq / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(cross / (n / 2)) < 4.0 / std::sqrt(n / 2));
}

TEST_CASE("pairwise_sum is accurate and fixed-shape") {
    std::vector<double> v(10007);
    std::iota(v.begin(), v.end(), 1.0);
    CHECK(pairwise_sum(v) == 10007.0 * 10008.0 / 2.0);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& x : v) x = u(rng);
    long double exact = 0.0L;
    for (double x : v) exact += x;
    CHECK(std::abs(pairwise_sum(v) - static_cast<double>(exact)) < 1e-13);
    CHECK(pairwise_sum(std::span<const double>{}) == 0.0);
}

TEST_CASE("simulation validates its settings") {
    SimConfig c = small_sim(1);
    c.n_paths = 999;
    CHECK_THROWS_AS(validate(c, 1.0), InvalidParameters);
    c = small_sim(1, 0.02);
    CHECK_THROWS_AS(validate(c, 1.0), InvalidParameters);
    c = small_sim(1);
    c.antithetic = true;
    c.n_paths = 4001;
    CHECK_THROWS_AS(validate(c, 1.0), InvalidParameters);
}

TEST_CASE("trivial policies have exact values") {
    const ModelParams p = case_model(0.1);
    const double x0 = 1.7;
    SUBCASE("stop immediately pays g(x0)") {
        const McReport r = simulate_value(x0, zero_policy(true), p, small_sim(2));
        CHECK(r.estimate == doctest::Approx(payoff(x0, p)).epsilon(1e-15));
        CHECK(r.std_error == 0.0);
        CHECK(r.n_stopped_early == r.n_paths);
    }
    SUBCASE("hold cash to T pays e^(−βT) g(x0 e^(rT))") {
        const McReport r = simulate_value(x0, zero_policy(false), p, small_sim(2));
        CHECK(r.estimate == doctest::Approx(std::exp(-p.beta) * payoff(x0 * std::exp(p.r), p)).epsilon(1e-13));
        CHECK(r.std_error < 1e-12);
    }
}

TEST_CASE("results do not depend on the worker count") {
    const ModelParams p = case_model(0.1);
    const Policy pol = constant_proportion_policy(p, 0.5);
    const McReport a = simulate_value(2.0, pol, p, small_sim(1));
    const McReport b = simulate_value(2.0, pol, p, small_sim(3));
    const McReport c = simulate_value(2.0, pol, p, small_sim(7));
    CHECK(same_bits(a.estimate, b.estimate));
    CHECK(same_bits(a.estimate, c.estimate));
    CHECK(same_bits(a.std_error, c.std_error));
    const McReport m1 = martingale_check(2.0, pol, p, small_sim(1));
    const McReport m4 = martingale_check(2.0, pol, p, small_sim(4));
    CHECK(same_bits(m1.estimate, m4.estimate));
    SimConfig other = small_sim(1);
    other.seed = 100;
    CHECK_FALSE(same_bits(a.estimate, simulate_value(2.0, pol, p, other).estimate));
}

TEST_CASE("deflated wealth is a martingale") {
    const ModelParams p = case_model(0.1);
    SimConfig c = small_sim(0);
    c.n_paths = 20000;
    for (double share : {0.0, 0.5, 1.5}) {
        const McReport r = martingale_check(2.0, share == 0.0 ? zero_policy(false) : constant_proportion_policy(p, share), p, c);
        CAPTURE(share);
        CHECK(r.verdict);
        CHECK(std::abs(r.estimate - 2.0) <= 3.0 * r.std_error + 1e-12);
    }
}

TEST_CASE("antithetic pairs mirror the increments") {
    const ModelParams p = case_model(0.1);
    const HullData h = compute_hull(p);
    SimConfig c = small_sim(2, 1e-3);
    c.antithetic = true;
    const auto reps = bang_bang_limit(0.5 * h.x_hat, {100.0}, 0.1, p, h, c);
    // Paths absorbed within the horizon split evenly between 0 and x̂ when started halfway.
    CHECK(reps[0].p_top + reps[0].p_bottom == doctest::Approx(1.0));
    CHECK(reps[0].p_top == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("bang-bang strategy approaches the concave hull") {
    const ModelParams p = case_model(0.1);
    const HullData h = compute_hull(p);
    const double x0 = 0.5 * h.x_hat;
    SimConfig c = small_sim(0, 1e-4);
    c.n_paths = 20000;
    const auto reps = bang_bang_limit(x0, {2.0, 10.0, 50.0}, 0.1, p, h, c);
    const double target = eval_hull(x0, h, p).value;
    for (std::size_t i = 0; i < reps.size(); ++i) {
        CHECK(reps[i].payoff.estimate <= target + 3.0 * reps[i].payoff.std_error + 1e-12);
        if (i > 0) CHECK(reps[i].p_top + reps[i].p_bottom >= reps[i - 1].p_top + reps[i - 1].p_bottom);
    }
    CHECK(reps.front().payoff.estimate < reps.back().payoff.estimate);
    CHECK(std::abs(reps.back().payoff.estimate - target) / target < 0.05);
    // E g(X_T) for the two-point law: P(top) = x0/x̂ by optional stopping.
    CHECK(std::abs(reps.back().p_top - 0.5) < 4.0 * reps.back().p_top_se + 0.01);
}
