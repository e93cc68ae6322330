#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>

namespace dualfb {

/// Market and preference constants of the stopping problem.
///
/// The market has n risky assets with excess returns `mu` and volatility
/// matrix `sigma`; everything downstream only sees the scalar reduction
/// a² = μ'(σσ')⁻¹μ.  Construct through make_model() so that the derived
/// fields are consistent with the inputs.
struct ModelParams {
    double r = 0.0;
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    double gamma = 0.5;
    double b = 0.0;
    double K = 1.0;
    double beta = 0.0;
    double T = 1.0;

    // Derived by make_model().
    double a_sq = 0.0;
    Eigen::VectorXd risk_price;       ///< λ = σ⁻¹μ, the Brownian loading of the state-price density
    Eigen::VectorXd merton_direction; ///< (σσ')⁻¹μ

    std::size_t n_assets() const { return static_cast<std::size_t>(mu.size()); }
};

/// Validates the inputs and fills the derived fields.  Throws InvalidParameters.
ModelParams make_model(double r, Eigen::VectorXd mu, Eigen::MatrixXd sigma, double gamma, double b,
                       double K, double beta, double T);

/// Re-checks the invariants of an already built parameter set.
void validate(const ModelParams& p);

/// Concave hull of the payoff: linear with slope k on [0, x̂), payoff beyond.
struct HullData {
    double k = 0.0;
    double x_hat = 0.0;
};

struct HullValue {
    double value;
    double slope;
};

/// Value and two derivatives of the dual obstacle ψ.
struct ObstacleValue {
    double value;
    double d1;
    double d2;
};

enum class CaseId { I, II_strict, II_equal, III, IV };

std::string_view to_string(CaseId id);

struct CaseLabel {
    CaseId case_id = CaseId::I;
    double threshold = 0.0;  ///< a²γ/(2(1−γ)) + rγ
    double psi_at_k = 0.0;
    std::optional<double> y_T;
};

/// Terminal payoff (1/γ)((x−b)⁺ + K)^γ.
double payoff(double x, const ModelParams& p);

HullData compute_hull(const ModelParams& p);

/// Residuals of the two smooth-pasting equations at (k, x̂).
struct HullResiduals {
    double value_match;
    double slope_match;
};
HullResiduals hull_residuals(const HullData& h, const ModelParams& p);

HullValue eval_hull(double x, const HullData& h, const ModelParams& p);

/// ψ(y) = max_x (φ(x) − xy).  At y == k the flat-side values are returned.
ObstacleValue eval_dual_obstacle(double y, const HullData& h, const ModelParams& p);

/// Exponent γ/(γ−1) of the power asymptote of ψ near y = 0.
double dual_power(const ModelParams& p);

/// Coefficient (β−rγ)/γ − a²/(2(1−γ)) of y^{γ/(γ−1)} in the dual operator applied to ψ.
double obstacle_power_coefficient(const ModelParams& p);

/// The dual operator −∂_t − (a²/2)y²∂_yy − (β−r)y∂_y + β applied to the
/// power piece of ψ:  C₁ y^{γ/(γ−1)} + r(K−b)y.  Its sign decides where
/// stopping can be optimal in (0, k).
double operator_on_obstacle(double y, const ModelParams& p);

/// β threshold a²γ/(2(1−γ)) + rγ separating the regimes.
double regime_threshold(const ModelParams& p);

CaseLabel classify_case(const ModelParams& p, const HullData& h);

}  // namespace dualfb
