#pragma once

#include "dualfb/model.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace dualfb {

struct SimConfig {
    std::size_t n_paths = 100000;
    double dt_sim = 0.005;
    std::uint64_t seed = 20240521;
    bool antithetic = false;
    /// 0 picks the hardware concurrency, capped by SOLVER_THREADS when set.
    std::size_t threads = 0;
};

/// n_paths ≥ 10³ (even when antithetic), 0 < dt_sim ≤ horizon/100.  Throws InvalidParameters.
void validate(const SimConfig& cfg, double horizon);

/// Worker count actually used for cfg.
std::size_t worker_count(const SimConfig& cfg);

struct McReport {
    double estimate = 0.0;
    double std_error = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::size_t n_paths = 0;
    std::size_t n_steps = 0;
    std::size_t n_stopped_early = 0;
    std::size_t n_absorbed = 0;
    std::size_t n_capped = 0;  ///< portfolio evaluations cut back to the cap
    double pi_cap = 0.0;       ///< |π| ≤ pi_cap·x, 0 when uncapped
    bool verdict = true;
};

/// Feedback rule for the wealth process.  An empty `stop` never stops before the horizon.
struct Policy {
    std::function<void(double x, double t, std::span<double> pi)> portfolio;
    std::function<bool(double x, double t)> stop;
    /// Euclidean cap |π| ≤ pi_cap·x; 0 disables the cap.
    double pi_cap = 0.0;
};

Policy zero_policy(bool stop_immediately);
/// π = c·x·(σσ')⁻¹μ.
Policy constant_proportion_policy(const ModelParams& p, double c);

/// Estimates E[e^{−βτ} g(X_τ)] under the policy, τ the first stop time (else T).
/// Wealth is stepped as Euler–Maruyama on the discounted wealth e^{−rt}X and absorbed at 0,
/// which then pays g(0) discounted from the hitting time.  Throws NumericalBlowup when a
/// path exceeds 10⁶·x0.
McReport simulate_value(double x0, const Policy& policy, const ModelParams& p, const SimConfig& cfg);

/// mean(ζ_T X_T) against x0 with ζ_t = exp(−(r + a²/2)t − λ'W_t), λ = σ⁻¹μ, simulated exactly
/// on the same increments.  verdict: |mean − x0| ≤ 3·std_error.
McReport martingale_check(double x0, const Policy& policy, const ModelParams& p, const SimConfig& cfg);

struct BangBangReport {
    double intensity = 0.0;
    McReport payoff;        ///< E[g(X_T)]
    double p_top = 0.0;     ///< P(X_T = x̂)
    double p_bottom = 0.0;  ///< P(X_T = 0)
    double p_top_se = 0.0;
};

/// dX = N·1{0<X<x̂}dW on [0, horizon], absorbed at 0 and x̂, for each N.  The same random
/// numbers are reused across N.
std::vector<BangBangReport> bang_bang_limit(double x0, const std::vector<double>& intensities,
                                            double horizon, const ModelParams& p, const HullData& h,
                                            const SimConfig& cfg);

/// Deterministic sum independent of how the terms were produced: fixed-shape pairwise tree.
double pairwise_sum(std::span<const double> values);

}  // namespace dualfb
