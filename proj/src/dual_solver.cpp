#include "dualfb/dual_solver.hpp"

#include "dualfb/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>

namespace dualfb {

namespace {

constexpr std::size_t kMinNodes = 50;
constexpr std::size_t kMaxPolishIterations = 100;

/// Interior (reduced) tridiagonal system; lower[0] and upper[m−1] are unused.
struct Tridiagonal {
    std::vector<double> lower, diag, upper;

    std::size_t size() const { return diag.size(); }

    double row_times(std::span<const double> x, std::size_t i) const {
        double s = diag[i] * x[i];
        if (i > 0) s += lower[i] * x[i - 1];
        if (i + 1 < x.size()) s += upper[i] * x[i + 1];
        return s;
    }
};

// Thomas algorithm; the systems solved here are M-matrices or M-matrices with some rows
// replaced by identity rows, so no pivoting is needed.
void thomas_solve(const Tridiagonal& sys, std::span<const double> rhs, std::span<double> x) {
    const std::size_t m = sys.size();
    std::vector<double> c(m), d(m);
    double denom = sys.diag[0];
    c[0] = m > 1 ? sys.upper[0] / denom : 0.0;
    d[0] = rhs[0] / denom;
    for (std::size_t i = 1; i < m; ++i) {
        denom = sys.diag[i] - sys.lower[i] * c[i - 1];
        c[i] = i + 1 < m ? sys.upper[i] / denom : 0.0;
        d[i] = (rhs[i] - sys.lower[i] * d[i - 1]) / denom;
    }
    x[m - 1] = d[m - 1];
    for (std::size_t i = m - 1; i-- > 0;) x[i] = d[i] - c[i] * x[i + 1];
}

/// Projected SOR followed (optionally) by policy iteration on the same system:
///   x ≥ lb,  sys·x ≥ rhs,  (sys·x − rhs)ᵀ(x − lb) = 0.
/// x holds the initial guess on entry.
void solve_lcp(const Tridiagonal& sys, std::span<const double> rhs, std::span<const double> lb,
               std::span<double> x, const SolverConfig& cfg, StepStats& stats) {
    const std::size_t m = sys.size();
    for (std::size_t i = 0; i < m; ++i) x[i] = std::max(x[i], lb[i]);

    std::size_t iter = 0;
    for (;;) {
        if (iter == cfg.psor_max_iter) throw NoConvergence("projected SOR", iter);
        ++iter;
        double max_change = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double r = rhs[i] - sys.row_times(x, i);
            const double updated = std::max(lb[i], x[i] + cfg.psor_omega * r / sys.diag[i]);
            // Relative above 1: gaps near the grid floor can be large enough that an absolute
            // tolerance sits below their rounding level.
            max_change = std::max(max_change, std::abs(updated - x[i]) / std::max(1.0, std::abs(updated)));
            x[i] = updated;
        }
        if (max_change <= cfg.psor_tol) break;
    }
    stats.psor_iterations += iter;

    if (!cfg.active_set_polish) return;

    std::vector<std::uint8_t> active(m, 2), previous(m);
    Tridiagonal policy_sys = sys;
    std::vector<double> policy_rhs(rhs.begin(), rhs.end());
    for (std::size_t it = 0; it < kMaxPolishIterations; ++it) {
        previous = active;
        for (std::size_t i = 0; i < m; ++i) {
            const double residual = sys.row_times(x, i) - rhs[i];
            active[i] = residual > x[i] - lb[i] ? 1 : 0;
        }
        if (active == previous) break;
        ++stats.polish_iterations;
        for (std::size_t i = 0; i < m; ++i) {
            if (active[i]) {
                policy_sys.lower[i] = 0.0;
                policy_sys.diag[i] = 1.0;
                policy_sys.upper[i] = 0.0;
                policy_rhs[i] = lb[i];
            } else {
                policy_sys.lower[i] = sys.lower[i];
                policy_sys.diag[i] = sys.diag[i];
                policy_sys.upper[i] = sys.upper[i];
                policy_rhs[i] = rhs[i];
            }
        }
        thomas_solve(policy_sys, policy_rhs, x);
    }
    for (std::size_t i = 0; i < m; ++i) x[i] = std::max(x[i], lb[i]);
}

/// Interior system for nodes 1..N−2 with the edge rows eliminated.
Tridiagonal reduced_system(std::size_t n_nodes, const Row3& implicit_row, const EdgeRows& edges) {
    const std::size_t m = n_nodes - 2;
    Tridiagonal sys{std::vector<double>(m, implicit_row.lower), std::vector<double>(m, implicit_row.diag),
                    std::vector<double>(m, implicit_row.upper)};
    sys.diag[0] += implicit_row.lower * edges.lower_ratio;
    return sys;
}

/// Right-hand side E·v_next on interior nodes with the edge contributions of the implicit rows moved over.
std::vector<double> reduced_rhs(std::span<const double> v_next, const ThetaScheme& scheme,
                                const EdgeRows& edges) {
    const std::size_t n = v_next.size();
    const Row3& e = scheme.explicit_;
    std::vector<double> rhs(n - 2);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        rhs[i - 1] = e.lower * v_next[i - 1] + e.diag * v_next[i] + e.upper * v_next[i + 1];
    }
    rhs.front() -= scheme.implicit.lower * edges.lower_shift;
    rhs.back() -= scheme.implicit.upper * edges.upper_value;
    return rhs;
}

Row3 centered_row(double diffusion, double drift, double beta, double h) {
    const double d = diffusion / (h * h);
    if (std::abs(drift) * h <= 2.0 * diffusion) {
        return {-d + drift / (2.0 * h), 2.0 * d + beta, -d - drift / (2.0 * h)};
    }
    // Upwind the −drift·v_z term so both off-diagonals stay nonpositive.
    if (drift > 0.0) return {-d, 2.0 * d + drift / h + beta, -d - drift / h};
    return {-d + drift / h, 2.0 * d - drift / h + beta, -d};
}

// Three-point row reproducing the continuous operator exactly on 1, e^z and e^{qz}:
//   A v_i = −α(v_{i+1} − v_i) − δ(v_{i−1} − v_i) + β v_i.
// Exactness on e^z and e^{qz} gives α − δe^{−h} = S₁/(e^h−1), α − δe^{−qh} = S_q/(e^{qh}−1).
std::optional<Row3> fitted_row(double diffusion, double drift, double beta, double q, double h) {
    const double s1 = diffusion + drift;          // β − (operator on e^z)/e^z
    const double sq = q * (diffusion * q + drift);  // β − (operator on e^{qz})/e^{qz}
    const double r1 = s1 / std::expm1(h);
    const double rq = sq / std::expm1(q * h);
    const double delta = (r1 - rq) / (std::exp(-h) * std::expm1((1.0 - q) * h));
    const double alpha = r1 + delta * std::exp(-h);
    if (!(alpha >= 0.0 && delta >= 0.0) || !std::isfinite(alpha) || !std::isfinite(delta)) {
        return std::nullopt;
    }
    return Row3{-delta, alpha + delta + beta, -alpha};
}

double gap_edge_ratio(const DualGrid& grid, const ModelParams& p) {
    // The gap v − ψ behaves like y^{γ/(γ−1)} as y → 0.
    return std::exp(-dual_power(p) * grid.dz);
}

void extract_boundaries(DualSolution& sol, const ModelParams& p) {
    const DualGrid& grid = sol.grid;
    const std::size_t levels = sol.n_levels();
    const std::size_t n = sol.n_nodes();
    const std::size_t kc = grid.kink_cell;
    sol.h.assign(levels, std::nullopt);
    sol.g.assign(levels, std::nullopt);
    sol.f.assign(levels, std::nullopt);
    sol.h_node.assign(levels, std::nullopt);
    sol.g_node.assign(levels, std::nullopt);
    sol.f_node.assign(levels, std::nullopt);
    sol.h_at_floor.assign(levels, false);

    for (std::size_t j = 0; j < levels; ++j) {
        auto ex = [&](std::size_t i) { return sol.exercised(j, i) != 0; };
        for (std::size_t i = 0; i <= kc; ++i) {
            if (ex(i)) {
                sol.h_node[j] = i;
                break;
            }
        }
        for (std::size_t i = kc + 1; i-- > 0;) {
            if (ex(i)) {
                sol.g_node[j] = i;
                break;
            }
        }
        for (std::size_t i = kc + 1; i < n; ++i) {
            if (ex(i)) {
                sol.f_node[j] = i;
                break;
            }
        }

        if (const auto i = sol.h_node[j]) {
            if (*i == 0) {
                sol.h_at_floor[j] = true;
                sol.h[j] = grid.y(0);
            } else {
                sol.h[j] = locate_contact(sol, p, j, *i, *i - 1).y;
            }
        }
        if (const auto i = sol.g_node[j]) {
            sol.g[j] = ex(*i + 1) ? grid.y(*i) : locate_contact(sol, p, j, *i, *i + 1).y;
        }
        if (const auto i = sol.f_node[j]) {
            sol.f[j] = ex(*i - 1) ? grid.y(*i) : locate_contact(sol, p, j, *i, *i - 1).y;
        }
    }
}

}  // namespace

double DualGrid::y(std::size_t i) const { return std::exp(z[i]); }

DualGrid build_grid(const ModelParams& p, const HullData& h, std::size_t n_space, std::size_t n_time,
                    const GridOverrides& overrides) {
    if (n_space < kMinNodes || n_time < kMinNodes) {
        std::ostringstream os;
        os << "grid needs at least " << kMinNodes << " space and time nodes (got " << n_space << ", "
           << n_time << ")";
        throw InvalidGrid(os.str());
    }
    const double k = h.k;
    const double y_lo = overrides.y_min.value_or(k * 1e-4);
    const double y_hi = overrides.y_max.value_or(k * 1e2);
    if (!(y_lo > 0.0 && y_lo < k)) throw InvalidGrid("y_min must lie in (0, k)");
    if (!(y_hi > 10.0 * k)) throw InvalidGrid("y_max must exceed 10k");

    DualGrid grid;
    const double z_lo = std::log(y_lo);
    const double z_hi = std::log(y_hi);
    const double dz = (z_hi - z_lo) / static_cast<double>(n_space - 1);
    const double z_k = std::log(k);
    const double pos = (z_k - z_lo) / dz;
    const double cell = std::floor(pos);
    grid.shift = (pos - cell - 0.5) * dz;
    grid.dz = dz;
    grid.kink_cell = static_cast<std::size_t>(cell);
    grid.z.resize(n_space);
    const double z0 = z_lo + grid.shift;
    for (std::size_t i = 0; i < n_space; ++i) grid.z[i] = z0 + static_cast<double>(i) * dz;

    if (grid.kink_cell < 1 || grid.kink_cell + 2 >= n_space) {
        throw InvalidGrid("ln k must lie strictly inside the grid with interior nodes on both sides");
    }
    if (!(grid.z[grid.kink_cell] < z_k && z_k < grid.z[grid.kink_cell + 1])) {
        throw InvalidGrid("could not place ln k strictly inside a cell");
    }
    grid.y_min = std::exp(grid.z.front());
    grid.y_max = std::exp(grid.z.back());
    grid.n_time = n_time;
    grid.T = p.T;
    grid.dt = p.T / static_cast<double>(n_time);
    return grid;
}

void validate(const SolverConfig& cfg) {
    if (!(cfg.theta >= 0.5 && cfg.theta <= 1.0)) throw InvalidParameters("theta must lie in [0.5, 1]");
    if (!(cfg.psor_omega > 0.0 && cfg.psor_omega < 2.0)) {
        throw InvalidParameters("psor_omega must lie in (0, 2)");
    }
    if (!(cfg.psor_tol > 0.0)) throw InvalidParameters("psor_tol must be positive");
    if (cfg.psor_max_iter == 0) throw InvalidParameters("psor_max_iter must be positive");
    if (!(cfg.exercise_tol >= 0.0)) throw InvalidParameters("exercise_tol must be nonnegative");
}

ThetaScheme assemble_operator(const DualGrid& grid, const ModelParams& p, double theta, StencilKind kind) {
    ThetaScheme s;
    s.diffusion = 0.5 * p.a_sq;
    s.drift = p.beta - p.r - 0.5 * p.a_sq;
    const double h = grid.dz;

    std::optional<Row3> row;
    if (kind == StencilKind::Fitted) row = fitted_row(s.diffusion, s.drift, p.beta, dual_power(p), h);
    if (row) {
        s.kind = StencilKind::Fitted;
    } else {
        row = centered_row(s.diffusion, s.drift, p.beta, h);
        s.kind = StencilKind::Centered;
    }
    s.spatial = *row;

    const double inv_dt = 1.0 / grid.dt;
    s.implicit = {theta * row->lower, inv_dt + theta * row->diag, theta * row->upper};
    s.explicit_ = {-(1.0 - theta) * row->lower, inv_dt - (1.0 - theta) * row->diag,
                   -(1.0 - theta) * row->upper};
    return s;
}

std::vector<double> step_backward(std::span<const double> v_next, std::span<const double> obstacle,
                                  const ThetaScheme& scheme, const EdgeRows& edges,
                                  const SolverConfig& cfg, StepStats* stats) {
    const std::size_t n = v_next.size();
    if (n < 4 || obstacle.size() != n) throw std::invalid_argument("step_backward: size mismatch");

    const Tridiagonal sys = reduced_system(n, scheme.implicit, edges);
    const std::vector<double> rhs = reduced_rhs(v_next, scheme, edges);
    std::vector<double> x(v_next.begin() + 1, v_next.end() - 1);
    StepStats local;
    solve_lcp(sys, rhs, obstacle.subspan(1, n - 2), x, cfg, local);
    if (stats) {
        stats->psor_iterations += local.psor_iterations;
        stats->polish_iterations += local.polish_iterations;
    }

    std::vector<double> v(n);
    std::copy(x.begin(), x.end(), v.begin() + 1);
    v.front() = edges.lower_ratio * v[1] + edges.lower_shift;
    v.back() = edges.upper_value;
    return v;
}

DualSolution solve_dual(const ModelParams& p, const HullData& h, const DualGrid& grid,
                        const SolverConfig& cfg) {
    validate(cfg);
    const std::size_t n = grid.size();
    const std::size_t levels = grid.n_time + 1;

    DualSolution sol;
    sol.grid = grid;
    sol.hull = h;
    sol.case_label = classify_case(p, h);
    sol.scheme = assemble_operator(grid, p, cfg.theta, cfg.stencil);

    sol.psi.resize(n);
    for (std::size_t i = 0; i < n; ++i) sol.psi[i] = eval_dual_obstacle(grid.y(i), h, p).value;

    // Aψ on interior nodes.  Away from the kink the fitted stencil reproduces the closed form
    // exactly, so the closed form is used there to avoid cancellation among the large ψ values
    // near the floor of the grid.
    const Row3& a = sol.scheme.spatial;
    const std::size_t kc = grid.kink_cell;
    const double flat = std::pow(p.K, p.gamma) / p.gamma;
    sol.operator_on_psi.assign(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const bool touches_kink = i == kc || i == kc + 1;
        if (sol.scheme.kind == StencilKind::Fitted && !touches_kink) {
            sol.operator_on_psi[i] = i <= kc ? operator_on_obstacle(grid.y(i), p) : p.beta * flat;
        } else {
            sol.operator_on_psi[i] = a.lower * sol.psi[i - 1] + a.diag * sol.psi[i] + a.upper * sol.psi[i + 1];
        }
    }

    // Unknown is the gap u = v − ψ ≥ 0:  M u ≥ E u_next − Aψ.
    const EdgeRows edges{gap_edge_ratio(grid, p), 0.0, 0.0};
    const Tridiagonal sys = reduced_system(n, sol.scheme.implicit, edges);
    const std::vector<double> zeros(n - 2, 0.0);

    sol.gap = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(levels), static_cast<Eigen::Index>(n));
    std::vector<double> next(n, 0.0), x(n - 2, 0.0);
    StepStats stats;
    for (std::size_t j = grid.n_time; j-- > 0;) {
        std::vector<double> rhs = reduced_rhs(next, sol.scheme, edges);
        for (std::size_t i = 1; i + 1 < n; ++i) rhs[i - 1] -= sol.operator_on_psi[i];
        solve_lcp(sys, rhs, zeros, x, cfg, stats);

        next[0] = edges.lower_ratio * x[0];
        std::copy(x.begin(), x.end(), next.begin() + 1);
        next[n - 1] = 0.0;
        for (std::size_t i = 0; i < n; ++i) sol.gap(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = next[i];
    }
    sol.total_psor_iterations = stats.psor_iterations;

    sol.v.resize(static_cast<Eigen::Index>(levels), static_cast<Eigen::Index>(n));
    sol.exercised.resize(static_cast<Eigen::Index>(levels), static_cast<Eigen::Index>(n));
    for (Eigen::Index j = 0; j < sol.v.rows(); ++j) {
        for (Eigen::Index i = 0; i < sol.v.cols(); ++i) {
            const double u = sol.gap(j, i);
            sol.v(j, i) = sol.psi[static_cast<std::size_t>(i)] + u;
            sol.exercised(j, i) = u <= cfg.exercise_tol ? 1 : 0;
        }
    }
    extract_boundaries(sol, p);
    return sol;
}

ObstacleValue obstacle_piece(double y, bool flat, const ModelParams& p) {
    if (flat) return {std::pow(p.K, p.gamma) / p.gamma, 0.0, 0.0};
    const double g = p.gamma;
    const double y_inv = std::pow(y, 1.0 / (g - 1.0));
    return {(1.0 - g) / g * y_inv * y + (p.K - p.b) * y, -y_inv + (p.K - p.b), y_inv / y / (1.0 - g)};
}

ObstacleValue ContactPoint::gap(double yy) const {
    const double s = yy / y;
    ObstacleValue out{0.0, 0.0, 0.0};
    for (int m = 0; m < 5; ++m) {
        const double q = exponent[m];
        const double term = coeff[m] * std::pow(s, q);
        out.value += term;
        out.d1 += q * term / yy;
        out.d2 += q * (q - 1.0) * term / (yy * yy);
    }
    const double d = yy - y;
    out.value += adjust * d * d;
    out.d1 += 2.0 * adjust * d;
    out.d2 += 2.0 * adjust;
    return out;
}

namespace {

/// Gap model with contact at y_b for the source S(y) = s0 + s1·y + sp·y^p.
ContactPoint contact_model(double y_b, bool flat, double s0, double s1, double sp, const ModelParams& p) {
    const double D = 0.5 * p.a_sq;
    const double m1 = p.beta - p.r;
    auto symbol = [&](double q) { return p.beta - D * q * (q - 1.0) - m1 * q; };
    const double disc = std::sqrt((m1 - D) * (m1 - D) + 4.0 * D * p.beta);
    const double lp = (-(m1 - D) + disc) / (2.0 * D);
    const double lm = (-(m1 - D) - disc) / (2.0 * D);
    const double pw = dual_power(p);

    ContactPoint cp;
    cp.y = y_b;
    cp.flat = flat;
    cp.exponent[2] = pw;
    cp.exponent[3] = lp;
    cp.exponent[4] = lm;
    // Particular solution: each source power over its symbol.
    cp.coeff[0] = s0 / symbol(0.0);
    cp.coeff[1] = s1 * y_b / symbol(1.0);
    cp.coeff[2] = sp != 0.0 ? sp * std::pow(y_b, pw) / symbol(pw) : 0.0;
    const double P = cp.coeff[0] + cp.coeff[1] + cp.coeff[2];
    const double yP = cp.coeff[1] + pw * cp.coeff[2];
    cp.coeff[3] = (lm * P - yP) / (lp - lm);
    cp.coeff[4] = -P - cp.coeff[3];
    return cp;
}

}  // namespace

ContactPoint locate_contact(const DualSolution& sol, const ModelParams& p, std::size_t level,
                            std::size_t exercised, std::size_t continuation) {
    const DualGrid& grid = sol.grid;
    const auto row = static_cast<Eigen::Index>(level);
    auto ex = [&](std::size_t i) { return sol.exercised(row, static_cast<Eigen::Index>(i)) != 0; };
    const bool flat = exercised > grid.kink_cell;

    // Anchor on the second continuation node when the run is long enough: the node next to the
    // boundary carries the staircase error of the discrete free boundary.
    std::size_t anchor = continuation;
    if (continuation > exercised) {
        if (continuation + 2 < sol.n_nodes() && !ex(continuation + 1) && !ex(continuation + 2)) anchor += 1;
    } else if (continuation >= 2 && !ex(continuation - 1) && !ex(continuation - 2)) {
        anchor -= 1;
    }

    const double y_e = grid.y(exercised);
    const double y_a = grid.y(anchor);
    const auto col = static_cast<Eigen::Index>(anchor);
    const double u_a = sol.v(row, col) - obstacle_piece(y_a, flat, p).value;
    const double w_a = level + 1 < sol.n_levels() ? (sol.v(row + 1, col) - sol.v(row, col)) / grid.dt : 0.0;

    // The discrete free boundary moves in whole cells, so the contact point may lie up to one
    // cell beyond the exercised node; the far end stays on the exercised node's side of k.
    double y_far = y_e * std::exp(std::copysign(grid.dz, y_e - y_a));
    if (exercised <= grid.kink_cell && y_far > sol.hull.k) y_far = sol.hull.k;
    if (exercised > grid.kink_cell && y_far < sol.hull.k) y_far = sol.hull.k;

    // Lψ̃ = f0 + f1·y + fp·y^p.
    const double f0 = flat ? p.beta * std::pow(p.K, p.gamma) / p.gamma : 0.0;
    const double f1 = flat ? 0.0 : p.r * (p.K - p.b);
    const double fp = flat ? 0.0 : obstacle_power_coefficient(p);
    auto model = [&](double y_b) {
        const double omega = w_a / (y_a - y_b);
        ContactPoint cp = contact_model(y_b, flat, -f0 - omega * y_b, omega - f1, -fp, p);
        cp.anchor = anchor;
        return cp;
    };
    auto mismatch = [&](double y_b) { return model(y_b).gap(y_a).value - u_a; };
    auto pinned = [&](double y_b) {
        ContactPoint cp = model(y_b);
        const double d = y_a - y_b;
        cp.adjust = (std::max(u_a, 0.0) - cp.gap(y_a).value) / (d * d);
        return cp;
    };
    if (!(u_a > 0.0)) return pinned(y_e);
    if (!(mismatch(y_far) > 0.0)) return pinned(y_far);
    double near = y_a, far = y_far;  // mismatch(near) < 0 < mismatch(far)
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (near + far);
        if (mid == near || mid == far) break;
        (mismatch(mid) > 0.0 ? far : near) = mid;
    }
    return pinned(far);
}

SupersolutionConstants supersolution_constants(const ModelParams& p, const HullData& h) {
    const double g = p.gamma;
    const double A = std::max({(1.0 - g) / g, std::pow(p.K, g) / g, std::abs(p.K - p.b) * h.k});
    const double B = 0.5 * p.a_sq * g / ((g - 1.0) * (g - 1.0)) + (p.beta - p.r * g) / (g - 1.0);
    return {A, B};
}

BoundsReport verify_bounds(const DualSolution& sol, const ModelParams& p, const HullData& h) {
    const DualGrid& grid = sol.grid;
    const std::size_t n = sol.n_nodes();
    const std::size_t last = grid.n_time;
    const std::size_t kc = grid.kink_cell;
    const auto [A, B] = supersolution_constants(p, h);
    const double q = dual_power(p);

    BoundsReport rep;
    rep.A = A;
    rep.B = B;
    rep.lower_violation = -std::numeric_limits<double>::infinity();
    rep.upper_violation = -std::numeric_limits<double>::infinity();
    rep.max_vt = -std::numeric_limits<double>::infinity();
    rep.max_vy = -std::numeric_limits<double>::infinity();
    rep.min_vyy = std::numeric_limits<double>::infinity();
    rep.min_vyy_below_f = std::numeric_limits<double>::infinity();

    auto in_corner = [&](std::size_t level, std::size_t i) {
        return level + 1 >= last && (i == kc || i == kc + 1);
    };
    auto idx = [](std::size_t v) { return static_cast<Eigen::Index>(v); };

    const Row3& m = sol.scheme.implicit;
    const Row3& e = sol.scheme.explicit_;

    for (std::size_t j = 0; j <= last; ++j) {
        const double tau = grid.T - grid.time(j);
        const double growth = std::exp(B * tau);
        for (std::size_t i = 0; i < n; ++i) {
            if (in_corner(j, i)) continue;
            const double y = grid.y(i);
            const double v = sol.v(idx(j), idx(i));
            rep.lower_violation = std::max(rep.lower_violation, -sol.gap(idx(j), idx(i)));
            rep.upper_violation = std::max(rep.upper_violation, v - A * (growth * std::pow(y, q) + 1.0));

            if (j < last && !in_corner(j + 1, i)) {
                const double vt = (sol.gap(idx(j + 1), idx(i)) - sol.gap(idx(j), idx(i))) / grid.dt;
                rep.max_vt = std::max(rep.max_vt, vt);
            }
            if (i + 1 < n && !in_corner(j, i + 1)) {
                const double vy = (sol.v(idx(j), idx(i + 1)) - v) / (grid.y(i + 1) - y);
                rep.max_vy = std::max(rep.max_vy, vy);
            }
            if (i > 0 && i + 1 < n && !in_corner(j, i - 1) && !in_corner(j, i + 1)) {
                const double y_m = grid.y(i - 1), y_p = grid.y(i + 1);
                const double s_right = (sol.v(idx(j), idx(i + 1)) - v) / (y_p - y);
                const double s_left = (v - sol.v(idx(j), idx(i - 1))) / (y - y_m);
                const double vyy = 2.0 * (s_right - s_left) / (y_p - y_m);
                rep.min_vyy = std::min(rep.min_vyy, vyy);
                const bool below_f = !sol.f[j] || y < *sol.f[j];
                if (below_f && j < last) {
                    rep.min_vyy_below_f = std::min(rep.min_vyy_below_f, vyy);
                    if (vyy <= 0.0) ++rep.nonstrict_below_f;
                }
            }
            if (j < last && i > 0 && i + 1 < n) {
                const auto u = [&](std::size_t level, std::size_t node) { return sol.gap(idx(level), idx(node)); };
                const double terms[] = {m.lower * u(j, i - 1), m.diag * u(j, i), m.upper * u(j, i + 1),
                                        -e.lower * u(j + 1, i - 1), -e.diag * u(j + 1, i),
                                        -e.upper * u(j + 1, i + 1), sol.operator_on_psi[i]};
                double residual = 0.0, scale = 1.0;
                for (double t : terms) {
                    residual += t;
                    scale = std::max(scale, std::abs(t));
                }
                // Measured in units of the largest row term once that exceeds 1: near the grid
                // floor the terms reach 1e10 and their rounding alone is ~1e-6.
                rep.max_complementarity =
                    std::max(rep.max_complementarity, std::abs(std::min(residual, u(j, i))) / scale);
            }
        }
    }
    return rep;
}

}  // namespace dualfb
