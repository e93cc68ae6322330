#include "dualfb/pipeline.hpp"

#include "dualfb/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace dualfb {

namespace {

using nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

/// Width of the dual grid cell holding y.
double y_cell(const DualGrid& grid, double y) {
    const double z = std::log(y);
    const double pos = (z - grid.z.front()) / grid.dz;
    const auto i = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(grid.size() - 2)));
    return grid.y(i + 1) - grid.y(i);
}

/// Width of the wealth grid cell holding x.
double x_cell(const std::vector<double>& x, double at) {
    auto it = std::upper_bound(x.begin(), x.end(), at);
    const std::size_t i = std::clamp<std::size_t>(static_cast<std::size_t>(it - x.begin()), 1, x.size() - 1);
    return x[i] - x[i - 1];
}

CheckResult make_check(int id, std::string name) {
    CheckResult c;
    c.id = id;
    c.name = std::move(name);
    return c;
}

void decide(CheckResult& c, bool pass) { c.status = pass ? CheckStatus::Pass : CheckStatus::Fail; }

class Stopwatch {
public:
    explicit Stopwatch(std::vector<std::pair<std::string, double>>& out) : out_(out) {}
    void lap(const std::string& stage) {
        const auto now = std::chrono::steady_clock::now();
        out_.emplace_back(stage, std::chrono::duration<double>(now - start_).count());
        start_ = now;
    }

private:
    std::vector<std::pair<std::string, double>>& out_;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

Solved solve_with(const RunConfig& cfg, const ModelParams& solver_model) {
    Solved s;
    s.model = cfg.model;
    s.hull = compute_hull(s.model);
    const DualGrid grid = build_grid(s.model, s.hull, cfg.n_space, cfg.n_time, cfg.overrides);
    s.dual = solve_dual(solver_model, s.hull, grid, cfg.solver);
    s.primal = recover_primal(s.dual, s.model, s.hull, wealth_grid(s.hull, s.model, cfg.n_x));
    return s;
}

// ---------------------------------------------------------------------------------------------
// Acceptance checks

CheckResult check_hull(const Solved& s) {
    CheckResult c = make_check(1, "hull correctness");
    c.limit = 1e-10;
    const ModelParams& base = s.model;
    double worst = 0.0;
    const std::array<double, 3> offsets{0.0, 0.5, 1.0};
    const std::array<const char*, 3> labels{"b0", "bK", "b1"};
    for (std::size_t e = 0; e < offsets.size(); ++e) {
        const ModelParams p = make_model(base.r, base.mu, base.sigma, 0.5, offsets[e], 0.5, base.beta, base.T);
        const HullData h = compute_hull(p);
        const HullResiduals res = hull_residuals(h, p);
        const double r = std::max(std::abs(res.value_match), std::abs(res.slope_match));
        c.values[std::string(labels[e]) + "_residual"] = r;
        c.values[std::string(labels[e]) + "_x_hat"] = h.x_hat;
        c.values[std::string(labels[e]) + "_k"] = h.k;
        worst = std::max(worst, r);
        if (e == 0) {
            const double err = std::max(std::abs(h.x_hat), std::abs(h.k - std::pow(0.5, -0.5)));
            c.values["b0_closed_form_error"] = err;
            worst = std::max(worst, err);
        }
        if (e == 1) {
            const double err = std::abs(h.x_hat - 0.5 * std::pow(0.5, -1.0 / 0.5));
            c.values["bK_closed_form_error"] = err;
            worst = std::max(worst, err);
        }
    }
    const HullResiduals own = hull_residuals(s.hull, s.model);
    c.values["config_residual"] = std::max(std::abs(own.value_match), std::abs(own.slope_match));
    worst = std::max(worst, c.values["config_residual"]);
    c.measured = worst;
    decide(c, worst < c.limit);
    return c;
}

CheckResult check_bounds(const BoundsReport& b) {
    CheckResult c = make_check(2, "dual solution bounds");
    c.limit = 1e-8;
    c.values["lower_violation"] = b.lower_violation;
    c.values["upper_violation"] = b.upper_violation;
    c.values["upper_limit"] = 1e-6;
    c.values["max_vt"] = b.max_vt;
    c.values["max_vy"] = b.max_vy;
    c.values["min_vyy"] = b.min_vyy;
    c.values["A"] = b.A;
    c.values["B"] = b.B;
    c.measured = std::max({b.lower_violation, b.max_vt, b.max_vy, -b.min_vyy});
    decide(c, c.measured <= c.limit && b.upper_violation <= 1e-6);
    return c;
}

CheckResult check_topology(const Solved& s) {
    CheckResult c = make_check(3, "case topology");
    const DualSolution& d = s.dual;
    const DualGrid& grid = d.grid;
    const std::size_t last = grid.n_time - 1;  // t = T − Δt
    const double k = s.hull.k;
    const double cell_k = y_cell(grid, k);
    const CaseLabel& label = d.case_label;
    c.limit = 2.0;
    c.values["k"] = k;
    c.values["cell_at_k"] = cell_k;
    if (d.f[last]) {
        c.values["f_T_minus"] = *d.f[last];
        c.values["f_offset_cells"] = std::abs(*d.f[last] - k) / cell_k;
    }

    auto offset = [&](const std::optional<double>& at, double target, const char* name) {
        if (!at) {
            c.note = std::string(name) + "(T-) is absent";
            return kInf;
        }
        c.values[std::string(name) + "_T_minus"] = *at;
        const double cells = std::abs(*at - target) / y_cell(grid, target);
        c.values[std::string(name) + "_offset_cells"] = cells;
        return cells;
    };
    auto exercised_below_k = [&] {
        std::size_t count = 0;
        for (std::size_t j = 0; j < grid.n_time; ++j) {
            for (std::size_t i = 0; i <= grid.kink_cell; ++i) count += d.exercised(ix(j), ix(i)) ? 1 : 0;
        }
        return static_cast<double>(count);
    };

    switch (label.case_id) {
        case CaseId::I: {
            std::size_t off_floor = 0;
            for (std::size_t j = 0; j < grid.n_time; ++j) off_floor += d.h_at_floor[j] ? 0 : 1;
            c.values["levels_not_reaching_floor"] = static_cast<double>(off_floor);
            const double g_off = offset(d.g[last], k, "g");
            const double f_off = offset(d.f[last], k, "f");
            c.measured = std::max(g_off, f_off);
            decide(c, off_floor == 0 && c.measured <= c.limit);
            break;
        }
        case CaseId::II_strict:
            c.values["y_T"] = *label.y_T;
            c.measured = offset(d.g[last], *label.y_T, "g");
            decide(c, c.measured <= c.limit);
            break;
        case CaseId::III:
            c.values["y_T"] = *label.y_T;
            c.measured = offset(d.h[last], *label.y_T, "h");
            decide(c, c.measured <= c.limit);
            break;
        case CaseId::II_equal:
        case CaseId::IV:
            c.limit = 0.0;
            c.measured = exercised_below_k();
            c.values["exercised_nodes_below_k"] = c.measured;
            decide(c, c.measured == 0.0);
            break;
    }
    return c;
}

CheckResult check_monotonicity(const Solved& s) {
    CheckResult c = make_check(4, "boundary monotonicity");
    c.limit = 1.0;
    const DualSolution& d = s.dual;
    const PrimalSolution& ps = s.primal;
    const std::size_t levels = d.grid.n_time;  // t < T
    double worst = 0.0;

    // sign = +1: nondecreasing in t; −1: nonincreasing.  Steps measured in local cells.
    auto dual_curve = [&](const std::vector<std::optional<double>>& curve, double sign, const char* name) {
        double w = 0.0;
        for (std::size_t j = 0; j + 1 < levels; ++j) {
            if (!curve[j] || !curve[j + 1]) continue;
            const double step = sign * (*curve[j] - *curve[j + 1]);
            if (step > 0.0) w = std::max(w, step / y_cell(d.grid, *curve[j]));
        }
        c.values[std::string(name) + "_max_violation_cells"] = w;
        worst = std::max(worst, w);
    };
    dual_curve(d.h, -1.0, "h");
    dual_curve(d.f, -1.0, "f");
    dual_curve(d.g, 1.0, "g");

    double g_w = 0.0;
    for (std::size_t j = 0; j + 1 < levels; ++j) {
        if (!ps.G[j] || !ps.G[j + 1]) continue;
        const double step = *ps.G[j + 1] - *ps.G[j];
        if (step > 0.0) g_w = std::max(g_w, step / x_cell(ps.x, *ps.G[j]));
    }
    double h_w = 0.0;
    for (std::size_t j = 0; j + 1 < levels; ++j) {
        const bool has_a = ps.H_unbounded[j] || ps.H[j];
        const bool has_b = ps.H_unbounded[j + 1] || ps.H[j + 1];
        if (!has_a || !has_b || ps.H_unbounded[j + 1]) continue;
        if (ps.H_unbounded[j]) {
            h_w = kInf;
            continue;
        }
        const double a = *ps.H[j], b = *ps.H[j + 1];
        if (a > b) h_w = std::max(h_w, (a - b) / x_cell(ps.x, b));
    }
    c.values["G_max_violation_cells"] = g_w;
    c.values["H_max_violation_cells"] = std::isfinite(h_w) ? h_w : 1e300;
    worst = std::max({worst, g_w, h_w});
    c.measured = worst;
    decide(c, worst <= c.limit);
    return c;
}

struct Probe {
    double y;
    std::size_t level;
};

std::vector<Probe> round_trip_probes(const Solved& s) {
    const std::array<double, 5> y_fracs{0.25, 0.5, 0.8, 0.95, 1.1};
    const std::array<double, 5> t_fracs{0.0, 0.25, 0.5, 0.75, 0.9};
    std::vector<Probe> out;
    for (double tf : t_fracs) {
        const auto level = static_cast<std::size_t>(std::llround(tf * static_cast<double>(s.dual.grid.n_time)));
        for (double yf : y_fracs) out.push_back({yf * s.hull.k, level});
    }
    return out;
}

struct RoundTrip {
    double max_error = 0.0;
    double max_estimate = 0.0;
};

/// max_x (V̂(x, t) − xy) over the wealth grid against v(y, t) from the dual slice.
RoundTrip round_trip(const Solved& s, const std::vector<Probe>& probes) {
    RoundTrip rt;
    const PrimalSolution& ps = s.primal;
    const std::size_t nx = ps.x.size();
    for (const Probe& pr : probes) {
        const DualSlice slice(s.dual, s.model, pr.level);
        double best = -kInf;
        std::size_t arg = 0;
        for (std::size_t i = 0; i < nx; ++i) {
            const double val = ps.V(ix(pr.level), ix(i)) - ps.x[i] * pr.y;
            if (val > best) {
                best = val;
                arg = i;
            }
        }
        const double v = slice.at(pr.y).v;
        const double dx = std::max(arg > 0 ? ps.x[arg] - ps.x[arg - 1] : 0.0,
                                   arg + 1 < nx ? ps.x[arg + 1] - ps.x[arg] : 0.0);
        const double vxx = ps.Vxx(ix(pr.level), ix(arg));
        const double estimate = std::isfinite(vxx) ? 0.125 * std::abs(vxx) * dx * dx : 0.0;
        rt.max_error = std::max(rt.max_error, std::abs(best - v));
        rt.max_estimate = std::max(rt.max_estimate, estimate);
    }
    return rt;
}

CheckResult check_round_trip(const Solved& ref, const Solved& fine) {
    CheckResult c = make_check(5, "duality round trip");
    const std::vector<Probe> probes = round_trip_probes(ref);
    std::vector<Probe> fine_probes = probes;
    for (Probe& p : fine_probes) p.level *= fine.dual.grid.n_time / ref.dual.grid.n_time;
    const RoundTrip a = round_trip(ref, probes);
    const RoundTrip b = round_trip(fine, fine_probes);
    c.measured = a.max_error;
    c.limit = 5.0 * a.max_estimate;
    c.values["estimate"] = a.max_estimate;
    c.values["refined_error"] = b.max_error;
    c.values["refined_estimate"] = b.max_estimate;
    c.values["probes"] = static_cast<double>(probes.size());
    decide(c, a.max_error <= c.limit && b.max_error < a.max_error);
    return c;
}

CheckResult check_primal_vi(const Solved& s, const PrimalViReport& vi, const PrimalViReport& vi_fine) {
    CheckResult c = make_check(6, "primal variational inequality");
    c.limit = 1e-3;
    c.measured = vi.max_residual;
    c.values["refined_residual"] = vi_fine.max_residual;
    c.values["worst_t"] = s.dual.grid.time(vi.worst_level);
    c.values["worst_x"] = s.primal.x[vi.worst_node];
    c.values["checked_nodes"] = static_cast<double>(vi.checked);
    c.values["excluded_nodes"] = static_cast<double>(vi.excluded);
    c.values["partition_mismatches"] = static_cast<double>(vi.partition_mismatches);
    c.values["min_obstacle_gap"] = vi.min_obstacle_gap;

    const PrimalSolution& ps = s.primal;
    const double flat = std::pow(s.model.K, s.model.gamma) / s.model.gamma;
    const double x1 = ps.x[1], x2 = ps.x[2];
    double zero_err = 0.0, slope_cells = 0.0;
    bool f_missing = false;
    for (std::size_t j = 0; j < s.dual.grid.n_time; ++j) {
        const double v1 = ps.V(ix(j), 1), v2 = ps.V(ix(j), 2);
        const double slope = (v2 - v1) / (x2 - x1);
        zero_err = std::max(zero_err, std::abs(v1 - x1 * slope - flat));
        if (!s.dual.f[j]) {
            f_missing = true;
            continue;
        }
        slope_cells = std::max(slope_cells, std::abs(slope - *s.dual.f[j]) / y_cell(s.dual.grid, *s.dual.f[j]));
    }
    c.values["V_zero_error"] = zero_err;
    c.values["Vx_zero_offset_cells"] = slope_cells;
    const bool decreasing = vi_fine.max_residual < vi.max_residual;
    decide(c, vi.max_residual <= c.limit && decreasing && zero_err <= 1e-4 && slope_cells <= 2.0 && !f_missing);
    if (vi.max_residual > c.limit) c.note = "residual above limit on the reference grid";
    return c;
}

CheckResult check_terminal_gap(const Solved& s) {
    CheckResult c = make_check(7, "terminal discontinuity");
    const ModelParams& p = s.model;
    const double x = p.b;
    const double gap = eval_hull(x, s.hull, p).value - payoff(x, p);
    if (!(gap > 0.1)) {
        c.note = "max of phi - g is not above 0.1 for this config";
        return c;
    }
    const std::size_t level = s.dual.grid.n_time - 1;
    const double V = primal_value(x, s, level);
    const double phi = eval_hull(x, s.hull, p).value;
    c.values["x"] = x;
    c.values["V"] = V;
    c.values["phi"] = phi;
    c.values["g"] = payoff(x, p);
    c.values["V_minus_g"] = V - payoff(x, p);
    c.measured = std::abs(V - phi) / phi;
    c.limit = 0.02;
    decide(c, c.measured <= c.limit && V - payoff(x, p) >= 0.08);
    return c;
}

CheckResult check_martingale(const RunConfig& cfg) {
    CheckResult c = make_check(8, "martingale oracle");
    const double x0 = *cfg.mc.x0;
    const McReport zero = martingale_check(x0, zero_policy(false), cfg.model, cfg.mc.sim);
    const McReport prop = martingale_check(x0, constant_proportion_policy(cfg.model, 0.5), cfg.model, cfg.mc.sim);
    c.values["zero_mean"] = zero.estimate;
    c.values["zero_std_error"] = zero.std_error;
    c.values["proportional_mean"] = prop.estimate;
    c.values["proportional_std_error"] = prop.std_error;
    c.values["x0"] = x0;
    auto sigmas = [&](const McReport& r) {
        const double d = std::abs(r.estimate - x0);
        return r.std_error > 0.0 ? d / r.std_error : (d == 0.0 ? 0.0 : kInf);
    };
    c.measured = std::max(sigmas(zero), sigmas(prop));
    c.limit = 3.0;
    decide(c, zero.verdict && prop.verdict);
    return c;
}

CheckResult check_sandwich(const RunConfig& cfg, const Solved& ref, const Solved& fine) {
    CheckResult c = make_check(9, "policy optimality sandwich");
    const ModelParams& p = cfg.model;
    const double x0 = *cfg.mc.x0;
    const double V0 = primal_value(x0, ref, 0);
    const double V0_fine = primal_value(x0, fine, 0);
    const PrimalSolution& ps = ref.primal;
    const double G0 = ps.G[0].value_or(kInf);
    const double H0 = ps.H_unbounded[0] ? kInf : ps.H[0].value_or(-kInf);
    const bool continuation = !(G0 <= x0 && x0 <= H0) && V0 - eval_hull(x0, ref.hull, p).value > 0.0;

    const Policy pol = solver_policy(ps, p, cfg.mc.pi_cap);
    const McReport mc = simulate_value(x0, pol, p, cfg.mc.sim);
    SimConfig coarse = cfg.mc.sim;
    coarse.dt_sim = 2.0 * coarse.dt_sim <= p.T / 100.0 ? 2.0 * coarse.dt_sim : 0.5 * coarse.dt_sim;
    const McReport mc_coarse = simulate_value(x0, pol, p, coarse);
    const McReport hold = simulate_value(x0, zero_policy(false), p, cfg.mc.sim);
    const McReport stop = simulate_value(x0, zero_policy(true), p, cfg.mc.sim);

    const double delta = std::abs(mc.estimate - mc_coarse.estimate) + std::abs(V0 - V0_fine);
    const double lo = V0 - 3.0 * mc.std_error - delta;
    const double hi = V0 + 3.0 * mc.std_error;
    const double sep_hold = std::hypot(mc.std_error, hold.std_error);
    const double sep_stop = std::hypot(mc.std_error, stop.std_error);

    c.values["x0"] = x0;
    c.values["V_hat"] = V0;
    c.values["V_hat_refined"] = V0_fine;
    c.values["mc_estimate"] = mc.estimate;
    c.values["mc_std_error"] = mc.std_error;
    c.values["mc_estimate_other_dt"] = mc_coarse.estimate;
    c.values["other_dt"] = coarse.dt_sim;
    c.values["delta_grid"] = delta;
    c.values["lower"] = lo;
    c.values["upper"] = hi;
    c.values["hold_to_T"] = hold.estimate;
    c.values["stop_now"] = stop.estimate;
    c.values["stopped_early"] = static_cast<double>(mc.n_stopped_early);
    c.values["absorbed"] = static_cast<double>(mc.n_absorbed);
    c.values["capped_evaluations"] = static_cast<double>(mc.n_capped);
    c.values["pi_cap"] = mc.pi_cap;
    c.values["x0_in_continuation"] = continuation ? 1.0 : 0.0;
    c.measured = (mc.estimate - V0) / std::max(mc.std_error, 1e-300);
    c.limit = 3.0;
    const bool inside = lo <= mc.estimate && mc.estimate <= hi;
    const bool beats = mc.estimate - hold.estimate >= 3.0 * sep_hold && mc.estimate - stop.estimate >= 3.0 * sep_stop;
    decide(c, continuation && inside && beats);
    if (!continuation) c.note = "x0 is not in the continuation region at t = 0";
    return c;
}

CheckResult check_bang_bang(const RunConfig& cfg, const Solved& s) {
    CheckResult c = make_check(10, "bang-bang limit");
    if (!(s.hull.x_hat > 0.0)) {
        c.note = "x_hat = 0, no linear hull piece";
        return c;
    }
    const double x0 = 0.5 * s.hull.x_hat;
    SimConfig sim = cfg.mc.sim;
    sim.dt_sim = cfg.mc.bang_bang_dt;
    const auto reps = bang_bang_limit(x0, cfg.mc.bang_bang_intensities, cfg.mc.bang_bang_horizon, s.model, s.hull, sim);
    const double target = eval_hull(x0, s.hull, s.model).value;
    bool increasing = true;
    for (std::size_t i = 0; i < reps.size(); ++i) {
        const std::string n = std::to_string(static_cast<long long>(std::llround(reps[i].intensity)));
        c.values["payoff_N" + n] = reps[i].payoff.estimate;
        c.values["payoff_se_N" + n] = reps[i].payoff.std_error;
        c.values["p_top_N" + n] = reps[i].p_top;
        // E_N ≤ φ(x0), with equality once every path is absorbed; ties are allowed, decreases are not.
        if (i > 0 && !(reps[i].payoff.estimate >= reps[i - 1].payoff.estimate)) increasing = false;
    }
    c.values["target"] = target;
    c.values["p_top_target"] = x0 / s.hull.x_hat;
    c.values["horizon"] = cfg.mc.bang_bang_horizon;
    const double last = reps.back().payoff.estimate;
    c.measured = std::abs(last - target) / target;
    c.limit = 0.05;
    decide(c, increasing && c.measured <= c.limit);
    if (!increasing) c.note = "estimate decreases between consecutive N";
    return c;
}

// ---------------------------------------------------------------------------------------------
// Rendering

void append_number(std::string& out, double v) {
    if (!std::isfinite(v)) return;  // undefined cell
    char buf[32];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    out.append(buf, static_cast<std::size_t>(n));
}

void append_optional(std::string& out, const std::optional<double>& v) {
    if (v) append_number(out, *v);
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json check_json(const CheckResult& c) {
    json values = json::object();
    for (const auto& [k, v] : c.values) values[k] = finite_or_null(v);
    return {{"id", c.id},          {"name", c.name},   {"status", std::string(to_string(c.status))},
            {"measured", finite_or_null(c.measured)}, {"limit", finite_or_null(c.limit)},
            {"values", values},    {"note", c.note}};
}

json vi_json(const PrimalViReport& r) {
    return {{"max_residual", r.max_residual}, {"worst_level", r.worst_level}, {"worst_node", r.worst_node},
            {"min_obstacle_gap", finite_or_null(r.min_obstacle_gap)}, {"checked", r.checked},
            {"excluded", r.excluded}, {"exercised", r.exercised}, {"partition_mismatches", r.partition_mismatches}};
}

json model_json(const ModelParams& p) {
    json sigma = json::array();
    for (Eigen::Index i = 0; i < p.sigma.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < p.sigma.cols(); ++j) row.push_back(p.sigma(i, j));
        sigma.push_back(row);
    }
    json mu = json::array();
    for (Eigen::Index i = 0; i < p.mu.size(); ++i) mu.push_back(p.mu[i]);
    return {{"r", p.r}, {"mu", mu}, {"sigma", sigma}, {"gamma", p.gamma}, {"b", p.b},
            {"K", p.K}, {"beta", p.beta}, {"T", p.T}, {"a_sq", p.a_sq}};
}

json case_json(const CaseLabel& label, const HullData& h) {
    return {{"case", std::string(to_string(label.case_id))},
            {"threshold", label.threshold},
            {"psi_at_k", label.psi_at_k},
            {"k", h.k},
            {"x_hat", h.x_hat},
            {"y_T", label.y_T ? json(*label.y_T) : json(nullptr)}};
}

std::string render_report(const RunResult& r) {
    const Solved& s = r.reference;
    const DualGrid& grid = s.dual.grid;
    json checks = json::array();
    for (const CheckResult& c : r.checks) checks.push_back(check_json(c));

    const HullResiduals hr = hull_residuals(s.hull, s.model);
    const BoundsReport& b = r.bounds;

    json probes = json::array();
    double max_delta = 0.0;
    const std::size_t scale = r.refined.dual.grid.n_time / grid.n_time;
    for (const Probe& pr : round_trip_probes(s)) {
        const double v = DualSlice(s.dual, s.model, pr.level).at(pr.y).v;
        const double vf = DualSlice(r.refined.dual, r.refined.model, pr.level * scale).at(pr.y).v;
        max_delta = std::max(max_delta, std::abs(v - vf));
        probes.push_back({{"t", grid.time(pr.level)}, {"y", pr.y}, {"v", v}, {"v_refined", vf}, {"delta", vf - v}});
    }

    const RunConfig& cfg = r.config;
    json mc = {{"n_paths", cfg.mc.sim.n_paths}, {"dt_sim", cfg.mc.sim.dt_sim}, {"seed", cfg.mc.sim.seed},
               {"antithetic", cfg.mc.sim.antithetic}, {"pi_cap", cfg.mc.pi_cap},
               {"x0", cfg.mc.x0 ? json(*cfg.mc.x0) : json(nullptr)},
               {"bang_bang_horizon", cfg.mc.bang_bang_horizon}, {"bang_bang_dt", cfg.mc.bang_bang_dt},
               {"bang_bang_intensities", cfg.mc.bang_bang_intensities}};

    json report = {
        {"config", {{"source", std::filesystem::path(cfg.source).filename().string()}}},
        {"model", model_json(s.model)},
        {"classification", case_json(s.dual.case_label, s.hull)},
        {"hull", {{"k", s.hull.k}, {"x_hat", s.hull.x_hat}, {"value_residual", hr.value_match},
                  {"slope_residual", hr.slope_match}}},
        {"grid", {{"n_space", grid.size()}, {"n_time", grid.n_time}, {"n_x", s.primal.x.size() - 1},
                  {"y_min", grid.y(0)}, {"y_max", grid.y(grid.size() - 1)}, {"dz", grid.dz}, {"dt", grid.dt},
                  {"kink_cell", grid.kink_cell}}},
        {"solver", {{"theta", cfg.solver.theta}, {"psor_omega", cfg.solver.psor_omega},
                    {"psor_tol", cfg.solver.psor_tol}, {"psor_iterations", s.dual.total_psor_iterations},
                    {"stencil", s.dual.scheme.kind == StencilKind::Fitted ? "fitted" : "centered"}}},
        {"bounds", {{"lower_violation", b.lower_violation}, {"upper_violation", b.upper_violation},
                    {"max_vt", b.max_vt}, {"max_vy", b.max_vy}, {"min_vyy", b.min_vyy},
                    {"min_vyy_below_f", b.min_vyy_below_f}, {"nonstrict_below_f", b.nonstrict_below_f},
                    {"max_complementarity", b.max_complementarity}, {"A", b.A}, {"B", b.B}}},
        {"primal_vi", vi_json(r.primal_vi)},
        {"primal_vi_refined", vi_json(r.primal_vi_refined)},
        {"refinement", {{"n_space", r.refined.dual.grid.size()}, {"n_time", r.refined.dual.grid.n_time},
                        {"probes", probes}, {"max_delta", max_delta}}},
        {"monte_carlo", mc},
        {"checks", checks},
        {"all_passed", r.all_passed()},
    };
    return report.dump(2) + "\n";
}

std::string render_v_surface(const Solved& s) {
    const DualSolution& d = s.dual;
    std::string out = "t,y,v,psi,exercised\n";
    out.reserve(d.n_levels() * d.n_nodes() * 80);
    for (std::size_t j = 0; j < d.n_levels(); ++j) {
        for (std::size_t i = 0; i < d.n_nodes(); ++i) {
            append_number(out, d.grid.time(j));
            out += ',';
            append_number(out, d.grid.y(i));
            out += ',';
            append_number(out, d.v(ix(j), ix(i)));
            out += ',';
            append_number(out, d.psi[i]);
            out += d.exercised(ix(j), ix(i)) ? ",1\n" : ",0\n";
        }
    }
    return out;
}

std::string render_dual_boundaries(const Solved& s) {
    const DualSolution& d = s.dual;
    std::string out = "t,h,g,f\n";
    for (std::size_t j = 0; j < d.n_levels(); ++j) {
        append_number(out, d.grid.time(j));
        out += ',';
        append_optional(out, d.h[j]);
        out += ',';
        append_optional(out, d.g[j]);
        out += ',';
        append_optional(out, d.f[j]);
        out += '\n';
    }
    return out;
}

std::string render_primal_surface(const Solved& s) {
    const PrimalSolution& ps = s.primal;
    std::string out = "t,x,V,Vx,Vxx,pi_star_scalar\n";
    out.reserve(ps.n_levels() * ps.x.size() * 110);
    for (std::size_t j = 0; j < ps.n_levels(); ++j) {
        for (std::size_t i = 0; i < ps.x.size(); ++i) {
            append_number(out, ps.t[j]);
            out += ',';
            append_number(out, ps.x[i]);
            out += ',';
            append_number(out, ps.V(ix(j), ix(i)));
            out += ',';
            append_number(out, ps.Vx(ix(j), ix(i)));
            out += ',';
            append_number(out, ps.Vxx(ix(j), ix(i)));
            out += ',';
            append_number(out, ps.risk_exposure(ix(j), ix(i)));
            out += '\n';
        }
    }
    return out;
}

std::string render_primal_boundaries(const Solved& s) {
    const PrimalSolution& ps = s.primal;
    std::string out = "t,G,H\n";
    for (std::size_t j = 0; j < ps.n_levels(); ++j) {
        append_number(out, ps.t[j]);
        out += ',';
        append_optional(out, ps.G[j]);
        out += ',';
        if (ps.H_unbounded[j]) {
            out += "inf";
        } else {
            append_optional(out, ps.H[j]);
        }
        out += '\n';
    }
    return out;
}

}  // namespace

std::string_view to_string(CheckStatus s) {
    switch (s) {
        case CheckStatus::Pass: return "pass";
        case CheckStatus::Fail: return "fail";
        case CheckStatus::Skipped: return "skipped";
    }
    return "?";
}

bool RunResult::all_passed() const {
    return std::none_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.status == CheckStatus::Fail; });
}

Solved solve(const RunConfig& cfg) { return solve_with(cfg, cfg.model); }

double primal_value(double x, const Solved& s, std::size_t level) {
    if (level + 1 >= s.dual.n_levels()) return eval_hull(x, s.hull, s.model).value;
    const DualPoint pt = DualSlice(s.dual, s.model, level).at_slope(x);
    return pt.v + x * pt.y;
}

Policy solver_policy(const PrimalSolution& ps, const ModelParams& p, double pi_cap) {
    Policy pol;
    pol.pi_cap = pi_cap;
    const std::size_t levels = ps.n_levels();
    const double dt = ps.t[1] - ps.t[0];
    const auto level_at = [dt, levels](double t) {
        const auto j = static_cast<std::size_t>(std::max(0.0, std::floor(t / dt + 1e-9)));
        return std::min(j, levels - 2);
    };
    const Eigen::VectorXd direction = p.merton_direction;
    // Policies outlive nothing but the run; share the solution by pointer.
    const PrimalSolution* sol = &ps;
    pol.portfolio = [sol, direction, level_at](double x, double t, std::span<double> pi) {
        const std::size_t j = level_at(t);
        const std::vector<double>& xs = sol->x;
        const auto i = static_cast<std::size_t>(std::upper_bound(xs.begin() + 1, xs.end(), x) - xs.begin());
        double e;
        if (i <= 1) {
            e = sol->risk_exposure(ix(j), 1);
        } else if (i >= xs.size()) {
            e = sol->risk_exposure(ix(j), ix(xs.size() - 1));
        } else {
            const double w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
            e = (1.0 - w) * sol->risk_exposure(ix(j), ix(i - 1)) + w * sol->risk_exposure(ix(j), ix(i));
        }
        for (std::size_t a = 0; a < pi.size(); ++a) pi[a] = direction[ix(a)] * e;
    };
    pol.stop = [sol, dt, level_at](double x, double t) {
        const std::size_t j = level_at(t);
        const double w = std::clamp(t / dt - static_cast<double>(j), 0.0, 1.0);
        auto lerp = [w](double a, double b) {
            if (std::isfinite(a) && std::isfinite(b)) return a + w * (b - a);
            return w < 0.5 ? a : b;
        };
        auto G = [sol](std::size_t l) { return sol->G[l].value_or(kInf); };
        auto H = [sol](std::size_t l) { return sol->H_unbounded[l] ? kInf : sol->H[l].value_or(-kInf); };
        return lerp(G(j), G(j + 1)) <= x && x <= lerp(H(j), H(j + 1));
    };
    return pol;
}

RunResult run_pipeline(const RunConfig& cfg, const PipelineOptions& opts) {
    RunResult r;
    r.config = cfg;
    Stopwatch clock(r.timings);

    ModelParams solver_model = cfg.model;
    if (opts.sabotage_beta) solver_model.beta = -solver_model.beta;
    const RunConfig fine_cfg = refined(cfg, 1);

    r.reference = solve_with(cfg, solver_model);
    clock.lap("solve_reference");
    r.refined = solve_with(fine_cfg, solver_model);
    clock.lap("solve_refined");

    const Solved& s = r.reference;
    r.bounds = verify_bounds(s.dual, s.model, s.hull);
    r.primal_vi = verify_primal_vi(s.primal, s.dual, s.model, s.hull);
    r.primal_vi_refined = verify_primal_vi(r.refined.primal, r.refined.dual, r.refined.model, r.refined.hull);
    clock.lap("verify");

    r.checks.push_back(check_hull(s));
    r.checks.push_back(check_bounds(r.bounds));
    r.checks.push_back(check_topology(s));
    r.checks.push_back(check_monotonicity(s));
    r.checks.push_back(check_round_trip(s, r.refined));
    r.checks.push_back(check_primal_vi(s, r.primal_vi, r.primal_vi_refined));
    r.checks.push_back(check_terminal_gap(s));
    clock.lap("checks");

    if (opts.run_mc && cfg.mc.x0) {
        r.checks.push_back(check_martingale(cfg));
        clock.lap("mc_martingale");
        r.checks.push_back(check_sandwich(cfg, s, r.refined));
        clock.lap("mc_sandwich");
        r.checks.push_back(check_bang_bang(cfg, s));
        clock.lap("mc_bang_bang");
    } else {
        const std::string why = cfg.mc.x0 ? "Monte Carlo disabled" : "config has no mc.x0";
        r.checks.push_back(make_check(8, "martingale oracle"));
        r.checks.push_back(make_check(9, "policy optimality sandwich"));
        r.checks.push_back(make_check(10, "bang-bang limit"));
        for (std::size_t i = r.checks.size() - 3; i < r.checks.size(); ++i) r.checks[i].note = why;
    }

    CheckResult det = make_check(11, "determinism");
    det.note = "run verify to re-run and compare outputs";
    if (opts.check_determinism) {
        det.note.clear();
        RunConfig again = cfg;
        again.mc.sim.threads = 1;
        PipelineOptions once = opts;
        once.check_determinism = false;
        const RunResult second = run_pipeline(again, once);
        RunResult first_view = r;
        first_view.checks.push_back(second.checks.back());
        const OutputBundle a = render_outputs(first_view);
        const OutputBundle b = render_outputs(second);
        std::size_t differing = 0;
        for (std::size_t i = 0; i < a.size(); ++i) differing += a[i] != b[i] ? 1 : 0;
        det.measured = static_cast<double>(differing);
        det.limit = 0.0;
        det.values["files_compared"] = static_cast<double>(a.size());
        det.values["bytes"] = 0.0;
        for (const auto& f : a) det.values["bytes"] += static_cast<double>(f.second.size());
        decide(det, differing == 0);
        clock.lap("determinism_rerun");
    }
    r.checks.push_back(det);
    return r;
}

OutputBundle render_outputs(const RunResult& r) {
    return {
        {"v_surface.csv", render_v_surface(r.reference)},
        {"dual_boundaries.csv", render_dual_boundaries(r.reference)},
        {"primal_surface.csv", render_primal_surface(r.reference)},
        {"primal_boundaries.csv", render_primal_boundaries(r.reference)},
        {"report.json", render_report(r)},
    };
}

std::string render_timings(const RunResult& r) {
    json stages = json::object();
    double total = 0.0;
    for (const auto& [name, sec] : r.timings) {
        stages[name] = sec;
        total += sec;
    }
    return json{{"stages_seconds", stages}, {"total_seconds", total}}.dump(2) + "\n";
}

std::string classify_json(const RunConfig& cfg) {
    const HullData h = compute_hull(cfg.model);
    return case_json(classify_case(cfg.model, h), h).dump() + "\n";
}

void write_outputs(const OutputBundle& files, const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<fs::path> written;
    auto rollback = [&](const std::string& why) {
        std::error_code ec;
        for (const fs::path& p : written) fs::remove(p, ec);
        throw std::runtime_error(why);
    };
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
    for (const auto& [name, content] : files) {
        const fs::path path = fs::path(dir) / name;
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) rollback("cannot open " + path.string() + " for writing");
        written.push_back(path);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.close();
        if (!out) rollback("failed writing " + path.string());
    }
}

}  // namespace dualfb
