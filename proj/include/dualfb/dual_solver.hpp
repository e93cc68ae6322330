#pragma once

#include "dualfb/model.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dualfb {

/// Uniform grid in z = ln y, shifted so that ln k sits in the middle of a cell,
/// together with the uniform time levels t_j = j·dt, j = 0..n_time.
struct DualGrid {
    std::vector<double> z;
    double dz = 0.0;
    double y_min = 0.0;
    double y_max = 0.0;
    std::size_t n_time = 0;
    double dt = 0.0;
    double T = 0.0;
    std::size_t kink_cell = 0;  ///< z[kink_cell] < ln k < z[kink_cell + 1]
    double shift = 0.0;         ///< offset applied to the nominal [ln y_min, ln y_max] placement

    std::size_t size() const { return z.size(); }
    double y(std::size_t i) const;
    double time(std::size_t level) const { return static_cast<double>(level) * dt; }
};

struct GridOverrides {
    std::optional<double> y_min;
    std::optional<double> y_max;
};

/// Nominal range is [k·10⁻⁴, k·10²].  Throws InvalidGrid.
DualGrid build_grid(const ModelParams& p, const HullData& h, std::size_t n_space, std::size_t n_time,
                    const GridOverrides& overrides = {});

enum class StencilKind {
    Fitted,    ///< exact on 1, y and y^{γ/(γ−1)}; falls back to Centered if not an M-matrix
    Centered,  ///< centered differences, upwinded drift when the cell Péclet number exceeds 1
};

struct SolverConfig {
    double theta = 1.0;
    double psor_omega = 1.5;
    double psor_tol = 1e-10;
    std::size_t psor_max_iter = 10000;
    /// Absolute threshold on the gap v − ψ below which a node counts as exercised.
    double exercise_tol = 1e-12;
    /// Finish each PSOR solve with policy iteration on the tridiagonal system so the
    /// active set and values are exact to rounding.
    bool active_set_polish = true;
    StencilKind stencil = StencilKind::Fitted;
};

void validate(const SolverConfig& cfg);

/// Three coefficients of a constant-coefficient tridiagonal row.
struct Row3 {
    double lower;
    double diag;
    double upper;
};

/// Constant-coefficient discretisation of the dual operator in z = ln y,
///   −(a²/2)v_zz − (β − r − a²/2)v_z + βv,
/// and the θ-weighted two-level rows built from it:
///   implicit:  I/Δt + θA   (acts on the unknown level)
///   explicit:  I/Δt − (1−θ)A (acts on the known later level)
struct ThetaScheme {
    Row3 spatial;
    Row3 implicit;
    Row3 explicit_;
    StencilKind kind = StencilKind::Fitted;
    double drift = 0.0;      ///< β − r − a²/2
    double diffusion = 0.0;  ///< a²/2
};

ThetaScheme assemble_operator(const DualGrid& grid, const ModelParams& p, double theta,
                              StencilKind kind = StencilKind::Fitted);

/// Non-PDE rows at the two ends of the grid:
///   v_0 = lower_ratio · v_1 + lower_shift,   v_{N−1} = upper_value.
struct EdgeRows {
    double lower_ratio = 1.0;
    double lower_shift = 0.0;
    double upper_value = 0.0;
};

struct StepStats {
    std::size_t psor_iterations = 0;
    std::size_t polish_iterations = 0;
};

/// One backward step of the discrete obstacle problem: find v ≥ obstacle with
/// M·v ≥ E·v_next and complementarity on the interior nodes.  Entries of the
/// obstacle may be −∞ (unconstrained).  Throws NoConvergence.
std::vector<double> step_backward(std::span<const double> v_next, std::span<const double> obstacle,
                                  const ThetaScheme& scheme, const EdgeRows& edges,
                                  const SolverConfig& cfg, StepStats* stats = nullptr);

/// Solution of the dual variational inequality on the whole space-time grid.
/// Row j of each matrix is time level t_j; column i is node y_i.
struct DualSolution {
    DualGrid grid;
    ThetaScheme scheme;
    CaseLabel case_label;
    HullData hull;
    std::vector<double> psi;
    Eigen::MatrixXd v;
    Eigen::MatrixXd gap;  ///< v − ψ as solved (no cancellation)
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> exercised;

    /// Free boundaries per level (dual units).  h is the lower end and g the upper end of the
    /// exercise interval below k; f is the lower end of the exercise set above k.
    std::vector<std::optional<double>> h, g, f;
    std::vector<std::optional<std::size_t>> h_node, g_node, f_node;
    /// True where the exercise interval below k reaches the lowest grid node (h(t) = 0).
    std::vector<bool> h_at_floor;

    /// Operator residual of the obstacle (Aψ) at interior nodes, as used by the solver.
    std::vector<double> operator_on_psi;
    std::size_t total_psor_iterations = 0;

    std::size_t n_levels() const { return static_cast<std::size_t>(v.rows()); }
    std::size_t n_nodes() const { return static_cast<std::size_t>(v.cols()); }
};

/// Marches backward from v(·,T) = ψ.  Propagates NoConvergence.
DualSolution solve_dual(const ModelParams& p, const HullData& h, const DualGrid& grid,
                        const SolverConfig& cfg);

/// Worst violation of each property the exact solution satisfies.
struct BoundsReport {
    double lower_violation = 0.0;     ///< max(ψ − v), ≤ 0 when satisfied
    double upper_violation = 0.0;     ///< max(v − A(e^{B(T−t)}y^{γ/(γ−1)} + 1))
    double max_vt = 0.0;              ///< max of (v_{j+1} − v_j)/Δt
    double max_vy = 0.0;              ///< max first divided difference in y
    double min_vyy = 0.0;             ///< min second divided difference in y
    double min_vyy_below_f = 0.0;     ///< min second divided difference on nodes with y < f(t)
    std::size_t nonstrict_below_f = 0;  ///< count of nodes below f(t) with v_yy ≤ 0
    double max_complementarity = 0.0; ///< max |min(M v − E v_next, v − ψ)| / max(1, largest row term)
    double A = 0.0;
    double B = 0.0;
};

/// Smooth piece of ψ on one side of k: the power branch extended to all y > 0, or the flat value.
ObstacleValue obstacle_piece(double y, bool flat, const ModelParams& p);

/// Free-boundary point between an exercised node and an adjacent continuation node, with the
/// gap u = v − ψ̃ on the contact cell (ψ̃ the obstacle piece on the exercised side).
///
/// On the cell u solves the stationary equation −D y²u'' − (β − r) y u' + βu = w − Lψ̃ with
/// u(y_b) = u'(y_b) = 0, where w is the backward time difference of u taken linear in y and
/// zero at y_b.  The sources are combinations of 1, y and y^p, so u is a sum of powers of y.
/// y_b is the root that reproduces the gap at the anchor: the second continuation node when
/// the continuation run is at least three nodes long, else the adjacent one.  When no root lies within
/// one cell beyond the exercised node, y_b is pinned there and a quadratic term restores the
/// node value.
struct ContactPoint {
    double y = 0.0;  ///< y_b
    bool flat = false;  ///< exercised side is the flat piece (y > k)
    double exponent[5] = {0.0, 1.0, 0.0, 0.0, 0.0};  ///< 0, 1, p, λ₊, λ₋
    double coeff[5] = {0.0, 0.0, 0.0, 0.0, 0.0};     ///< terms coeff·(y / y_b)^exponent
    double adjust = 0.0;                              ///< coefficient of (y − y_b)²
    std::size_t anchor = 0;  ///< continuation node whose value the model reproduces

    ObstacleValue gap(double y) const;  ///< u, u_y, u_yy
};
ContactPoint locate_contact(const DualSolution& sol, const ModelParams& p, std::size_t level,
                            std::size_t exercised, std::size_t continuation);

struct SupersolutionConstants {
    double A;
    double B;
};

/// A = max{(1−γ)/γ, K^γ/γ, |K−b|k},  B = (a²/2)γ/(γ−1)² + (β−rγ)/(γ−1).
SupersolutionConstants supersolution_constants(const ModelParams& p, const HullData& h);

/// Checks every node except the space-time cell containing (k, T).
BoundsReport verify_bounds(const DualSolution& sol, const ModelParams& p, const HullData& h);

}  // namespace dualfb
