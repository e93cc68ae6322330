#include "dualfb/model.hpp"

#include "dualfb/errors.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace dualfb {

namespace {

constexpr double kSignTol = 1e-12;
constexpr int kMaxBisection = 400;

}  // namespace

ModelParams make_model(double r, Eigen::VectorXd mu, Eigen::MatrixXd sigma, double gamma, double b,
                       double K, double beta, double T) {
    ModelParams p;
    p.r = r;
    p.mu = std::move(mu);
    p.sigma = std::move(sigma);
    p.gamma = gamma;
    p.b = b;
    p.K = K;
    p.beta = beta;
    p.T = T;

    if (p.mu.size() == 0) throw InvalidParameters("mu must have at least one component");
    if (p.sigma.rows() != p.mu.size() || p.sigma.cols() != p.mu.size()) {
        std::ostringstream os;
        os << "sigma must be " << p.mu.size() << "x" << p.mu.size() << ", got " << p.sigma.rows()
           << "x" << p.sigma.cols();
        throw InvalidParameters(os.str());
    }

    const Eigen::MatrixXd cov = p.sigma * p.sigma.transpose();
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
        throw InvalidParameters("sigma*sigma' must be symmetric positive definite");
    }
    p.merton_direction = llt.solve(p.mu);
    p.a_sq = p.mu.dot(p.merton_direction);
    p.risk_price = p.sigma.fullPivLu().solve(p.mu);
    validate(p);
    return p;
}

void validate(const ModelParams& p) {
    auto fail = [](const std::string& msg) { throw InvalidParameters(msg); };
    if (!(p.gamma > 0.0 && p.gamma < 1.0)) fail("gamma must lie in (0, 1)");
    if (!(p.K > 0.0)) fail("K must be positive");
    if (!(p.b >= 0.0)) fail("b must be nonnegative");
    if (!(p.T > 0.0)) fail("T must be positive");
    if (!(p.beta >= 0.0)) fail("beta must be nonnegative");
    if (!(p.r >= 0.0)) fail("r must be nonnegative");
    if (!(p.a_sq > 0.0) || !std::isfinite(p.a_sq)) fail("a^2 = mu'(sigma sigma')^-1 mu must be positive");
}

std::string_view to_string(CaseId id) {
    switch (id) {
        case CaseId::I: return "I";
        case CaseId::II_strict: return "II_strict";
        case CaseId::II_equal: return "II_equal";
        case CaseId::III: return "III";
        case CaseId::IV: return "IV";
    }
    return "?";
}

double payoff(double x, const ModelParams& p) {
    return std::pow(std::max(x - p.b, 0.0) + p.K, p.gamma) / p.gamma;
}

HullResiduals hull_residuals(const HullData& h, const ModelParams& p) {
    const double s = h.x_hat - p.b + p.K;
    const double g = p.gamma;
    return {h.k * h.x_hat + std::pow(p.K, g) / g - std::pow(s, g) / g, h.k - std::pow(s, g - 1.0)};
}

HullData compute_hull(const ModelParams& p) {
    const double g = p.gamma;
    if (p.b == 0.0) {
        // g is already concave on [0, ∞).
        return {std::pow(p.K, g - 1.0), 0.0};
    }

    // Value mismatch after eliminating k = (x̂−b+K)^{γ−1}; strictly decreasing in x̂ on (b, ∞),
    // positive at x̂ = b.
    const double floor_term = std::pow(p.K, g) / g;
    auto residual = [&](double x) {
        const double s = x - p.b + p.K;
        return std::pow(s, g - 1.0) * x + floor_term - std::pow(s, g) / g;
    };

    double lo = p.b;
    double hi = std::max(2.0 * p.b, p.b + p.K);
    int doublings = 0;
    while (residual(hi) > 0.0) {
        lo = hi;
        hi *= 2.0;
        if (++doublings > 1000 || !std::isfinite(hi)) {
            throw NoConvergence("hull bracket search did not find a sign change", doublings);
        }
    }

    // Run to full double resolution (well below the 1e-12 target); the residual is cheap.
    int it = 0;
    while (true) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        (residual(mid) > 0.0 ? lo : hi) = mid;
        if (++it > kMaxBisection) throw NoConvergence("hull bisection", it);
    }
    const double x_hat = std::abs(residual(lo)) < std::abs(residual(hi)) ? lo : hi;
    return {std::pow(x_hat - p.b + p.K, g - 1.0), x_hat};
}

HullValue eval_hull(double x, const HullData& h, const ModelParams& p) {
    const double g = p.gamma;
    if (x < h.x_hat) return {h.k * x + std::pow(p.K, g) / g, h.k};
    const double s = x - p.b + p.K;
    return {std::pow(s, g) / g, std::pow(s, g - 1.0)};
}

double dual_power(const ModelParams& p) { return p.gamma / (p.gamma - 1.0); }

ObstacleValue eval_dual_obstacle(double y, const HullData& h, const ModelParams& p) {
    if (!(y > 0.0)) throw DomainError("dual obstacle requires y > 0");
    const double g = p.gamma;
    if (y >= h.k) return {std::pow(p.K, g) / g, 0.0, 0.0};
    const double inv = 1.0 / (g - 1.0);
    const double y_inv = std::pow(y, inv);  // y^{1/(γ−1)}
    return {(1.0 - g) / g * y_inv * y + (p.K - p.b) * y, -y_inv + (p.K - p.b),
            y_inv / y / (1.0 - g)};
}

double obstacle_power_coefficient(const ModelParams& p) {
    const double g = p.gamma;
    return (p.beta - p.r * g) / g - 0.5 * p.a_sq / (1.0 - g);
}

double operator_on_obstacle(double y, const ModelParams& p) {
    if (!(y > 0.0)) throw DomainError("operator_on_obstacle requires y > 0");
    return obstacle_power_coefficient(p) * std::pow(y, dual_power(p)) + p.r * (p.K - p.b) * y;
}

double regime_threshold(const ModelParams& p) {
    const double g = p.gamma;
    return 0.5 * p.a_sq * g / (1.0 - g) + p.r * g;
}

CaseLabel classify_case(const ModelParams& p, const HullData& h) {
    CaseLabel label;
    label.threshold = regime_threshold(p);
    label.psi_at_k = operator_on_obstacle(h.k, p);

    const double diff = p.beta - label.threshold;
    const int beta_sign =
        std::abs(diff) <= kSignTol * std::max(1.0, std::abs(label.threshold)) ? 0 : (diff > 0 ? 1 : -1);
    const int psi_sign = std::abs(label.psi_at_k) <= kSignTol ? 0 : (label.psi_at_k > 0 ? 1 : -1);

    auto terminal_root = [&] {
        return std::pow(-p.r * (p.K - p.b) / obstacle_power_coefficient(p), p.gamma - 1.0);
    };

    if (beta_sign >= 0 && psi_sign >= 0) {
        label.case_id = CaseId::I;
    } else if (beta_sign > 0) {
        label.case_id = CaseId::II_strict;
        label.y_T = terminal_root();
    } else if (beta_sign == 0) {
        label.case_id = CaseId::II_equal;
    } else if (psi_sign > 0) {
        label.case_id = CaseId::III;
        label.y_T = terminal_root();
    } else {
        label.case_id = CaseId::IV;
    }
    return label;
}

}  // namespace dualfb
