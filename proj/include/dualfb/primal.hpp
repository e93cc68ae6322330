#pragma once

#include "dualfb/dual_solver.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <vector>

namespace dualfb {

/// x = 0 followed by n_x geometric nodes on [x̂·10⁻³, x̂·10²] (K replaces x̂ when x̂ = 0).
std::vector<double> wealth_grid(const HullData& h, const ModelParams& p, std::size_t n_x = 400);

/// Dual quantities at one point of a time level.
struct DualPoint {
    double y;
    double v;
    double slope;      ///< −v_y
    double curvature;  ///< v_yy
};

/// Piecewise model of v(·, t_j) on one time level, used to invert the dual slope.
///
/// Exercise intervals use the closed-form obstacle.  Between two continuation nodes the
/// centered differences −v_y and v_yy are interpolated linearly and v is recovered by
/// integrating the slope.  In the cell between a free boundary and its first continuation
/// node, v is the contact model of locate_contact(), so no difference stencil ever
/// straddles a free boundary.
class DualSlice {
public:
    DualSlice(const DualSolution& sol, const ModelParams& p, std::size_t level);

    /// J(x) with the slice quantities there.  x = 0 returns the point y = f(t).
    /// Throws RangeError when x exceeds the largest slope the grid represents.
    DualPoint at_slope(double x) const;

    /// Slice evaluated at a dual point inside the modelled range.
    DualPoint at(double y) const;

    double max_slope() const { return segments_.front().slope_lo; }
    double y_lo() const { return segments_.front().y_lo; }
    double y_hi() const { return segments_.back().y_hi; }

private:
    enum class Kind { ExercisedPower, ExercisedFlat, Contact, Interpolated };
    struct Segment {
        Kind kind;
        double y_lo, y_hi;
        double slope_lo, slope_hi;  // −v_y at the ends (slope_lo ≥ slope_hi)
        // Contact
        ContactPoint contact;
        // Interpolated
        double v_lo = 0.0, v_hi = 0.0, s_lo = 0.0, s_hi = 0.0;
    };

    DualPoint eval(const Segment& s, double y) const;
    DualPoint solve(const Segment& s, double x) const;

    ModelParams p_;
    std::vector<Segment> segments_;
};

/// V̂ and derivatives on a wealth grid at every time level.  Row j is level t_j, column i is x_i.
/// The final level is the concave hull itself.
struct PrimalSolution {
    std::vector<double> x;
    std::vector<double> t;
    Eigen::MatrixXd V, Vx, Vxx;
    Eigen::MatrixXd risk_exposure;  ///< −V̂_x/V̂_xx = J·v_yy(J); 0 where undefined (x = 0, linear hull piece at T)
    Eigen::MatrixXd y_star;         ///< J(x_i, t_j)

    /// Primal free boundaries.  H is +∞ (unbounded) when the dual exercise set reaches y = 0;
    /// both are absent on levels with no exercise below k.
    std::vector<std::optional<double>> G;
    std::vector<std::optional<double>> H;
    std::vector<bool> H_unbounded;

    std::vector<double> f_slope;  ///< V̂_x(0, t) = J(0, t)
    std::vector<double> V_zero;   ///< V̂(0+, t) as the tangent intercept at the first positive node

    std::size_t n_levels() const { return static_cast<std::size_t>(V.rows()); }
};

/// J(x, t_j); x = 0 gives f(t).  Throws RangeError.
double invert_dual_slope(double x, const DualSolution& sol, const ModelParams& p, std::size_t level);

PrimalSolution recover_primal(const DualSolution& sol, const ModelParams& p, const HullData& h,
                              const std::vector<double>& x_nodes);

struct Portfolio {
    Eigen::VectorXd weights;  ///< (σσ')⁻¹μ · exposure
    double exposure;          ///< J·v_yy(J)
};

/// π*(x, t_j) in its dual form.  Requires x > 0.  Throws RangeError.
Portfolio optimal_portfolio(double x, const DualSolution& sol, const ModelParams& p, std::size_t level);

struct PrimalViReport {
    double max_residual = 0.0;  ///< max |min(operator, V̂ − φ)| over checked nodes
    std::size_t worst_level = 0;
    std::size_t worst_node = 0;
    double min_obstacle_gap = 0.0;  ///< min V̂ − φ
    std::size_t checked = 0;
    std::size_t excluded = 0;  ///< nodes whose J falls in the dual cell next to (k, T)
    std::size_t exercised = 0;
    std::size_t partition_mismatches = 0;  ///< nodes more than one cell from G, H where {V̂ = φ} and [G, H] disagree
};

/// Checks  min{−V̂_t + (a²/2)V̂_x²/V̂_xx − r x V̂_x + βV̂,  V̂ − φ} = 0  at interior nodes of
/// levels t < T.  V̂_x = J and V̂_xx = −1/v_yy(J) come from the dual slice, and V̂_t is the
/// difference of v to the next level at fixed y = J(x, t).
PrimalViReport verify_primal_vi(const PrimalSolution& ps, const DualSolution& sol, const ModelParams& p,
                                const HullData& h, double exercise_tol = 1e-9);

}  // namespace dualfb
