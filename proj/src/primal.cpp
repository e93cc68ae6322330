#include "dualfb/primal.hpp"

#include "dualfb/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dualfb {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

}  // namespace

std::vector<double> wealth_grid(const HullData& h, const ModelParams& p, std::size_t n_x) {
    if (n_x < 2) throw InvalidGrid("wealth grid needs at least two positive nodes");
    const double scale = h.x_hat > 0.0 ? h.x_hat : p.K;
    const double lo = scale * 1e-3;
    const double ratio = std::log(1e5);
    std::vector<double> x(n_x + 1);
    x[0] = 0.0;
    for (std::size_t i = 0; i < n_x; ++i) {
        x[i + 1] = lo * std::exp(ratio * static_cast<double>(i) / static_cast<double>(n_x - 1));
    }
    return x;
}

DualSlice::DualSlice(const DualSolution& sol, const ModelParams& p, std::size_t level) : p_(p) {
    const DualGrid& grid = sol.grid;
    const std::size_t n = sol.n_nodes();
    const std::size_t kc = grid.kink_cell;
    const double dz = grid.dz;
    auto ex = [&](std::size_t i) { return sol.exercised(ix(level), ix(i)) != 0; };
    auto v = [&](std::size_t i) { return sol.v(ix(level), ix(i)); };

    auto push_exercised = [&](double y_from, double y_to, std::size_t first, std::size_t last) {
        auto push = [&](double a, double b, bool flat) {
            Segment s{flat ? Kind::ExercisedFlat : Kind::ExercisedPower, a, b, 0.0, 0.0, {}};
            if (!flat) {
                s.slope_lo = a > 0.0 ? -obstacle_piece(a, false, p).d1 : kInf;
                s.slope_hi = -obstacle_piece(b, false, p).d1;
            }
            segments_.push_back(s);
        };
        if (first <= kc && last > kc) {
            push(y_from, sol.hull.k, false);
            push(sol.hull.k, y_to, true);
        } else {
            push(y_from, y_to, first > kc);
        }
    };

    auto contact_segment = [&](const ContactPoint& cp, double y_node) {
        Segment s{Kind::Contact, std::min(cp.y, y_node), std::max(cp.y, y_node), 0.0, 0.0, {}};
        s.contact = cp;
        s.slope_lo = eval(s, s.y_lo).slope;
        s.slope_hi = eval(s, s.y_hi).slope;
        return s;
    };

    double exercised_from = 0.0;
    std::size_t exercised_first = 0;
    std::size_t i = 0;
    while (i < n) {
        if (ex(i)) {
            ++i;
            continue;
        }
        const std::size_t a = i;
        std::size_t b = a;
        while (b + 1 < n && !ex(b + 1)) ++b;
        i = b + 1;

        std::vector<double> slope(b - a + 1), curv(b - a + 1);
        for (std::size_t m = std::max<std::size_t>(a, 1); m <= b && m + 1 < n; ++m) {
            const double z = grid.z[m];
            const double d1 = (v(m + 1) - v(m - 1)) / (2.0 * dz);
            const double d2 = (v(m + 1) - 2.0 * v(m) + v(m - 1)) / (dz * dz);
            slope[m - a] = -std::exp(-z) * d1;
            curv[m - a] = std::exp(-2.0 * z) * (d2 - d1);
        }

        // Interpolation runs between the contact anchors lo..hi.
        std::size_t lo = std::max<std::size_t>(a, 1), hi = b;
        if (a > 0) {
            const ContactPoint cp = locate_contact(sol, p, level, a - 1, a);
            lo = cp.anchor;
            push_exercised(exercised_from, cp.y, exercised_first, a - 1);
            segments_.push_back(contact_segment(cp, grid.y(lo)));
            slope[lo - a] = segments_.back().slope_hi;
            curv[lo - a] = eval(segments_.back(), grid.y(lo)).curvature;
        }
        std::optional<Segment> right;
        if (b + 1 < n) {
            const ContactPoint cp = locate_contact(sol, p, level, b + 1, b);
            hi = cp.anchor;
            right = contact_segment(cp, grid.y(hi));
            if (hi > lo || a == 0) {
                slope[hi - a] = right->slope_lo;
                curv[hi - a] = eval(*right, grid.y(hi)).curvature;
            }
            exercised_from = cp.y;
            exercised_first = b + 1;
        }
        for (std::size_t m = lo; m < hi; ++m) {
            Segment s{Kind::Interpolated, grid.y(m), grid.y(m + 1), slope[m - a], slope[m + 1 - a], {}};
            s.v_lo = v(m);
            s.v_hi = v(m + 1);
            s.s_lo = curv[m - a];
            s.s_hi = curv[m + 1 - a];
            segments_.push_back(s);
        }
        if (right) segments_.push_back(*right);
    }
    if (ex(n - 1)) push_exercised(exercised_from, grid.y(n - 1), exercised_first, n - 1);
    if (segments_.empty()) throw InvalidGrid("dual level has no usable segments");
}

DualPoint DualSlice::eval(const Segment& s, double y) const {
    switch (s.kind) {
        case Kind::ExercisedPower: {
            const ObstacleValue ob = obstacle_piece(y, false, p_);
            return {y, ob.value, -ob.d1, ob.d2};
        }
        case Kind::ExercisedFlat:
            return {y, std::pow(p_.K, p_.gamma) / p_.gamma, 0.0, 0.0};
        case Kind::Contact: {
            const ObstacleValue ob = obstacle_piece(y, s.contact.flat, p_);
            const ObstacleValue u = s.contact.gap(y);
            return {y, ob.value + u.value, -ob.d1 - u.d1, ob.d2 + u.d2};
        }
        case Kind::Interpolated: {
            const double w = (y - s.y_lo) / (s.y_hi - s.y_lo);
            const double slope = (1.0 - w) * s.slope_lo + w * s.slope_hi;
            const double from_lo = s.v_lo - (y - s.y_lo) * 0.5 * (s.slope_lo + slope);
            const double from_hi = s.v_hi + (s.y_hi - y) * 0.5 * (slope + s.slope_hi);
            return {y, (1.0 - w) * from_lo + w * from_hi, slope, (1.0 - w) * s.s_lo + w * s.s_hi};
        }
    }
    return {y, 0.0, 0.0, 0.0};
}

DualPoint DualSlice::solve(const Segment& s, double x) const {
    switch (s.kind) {
        case Kind::ExercisedPower: {
            const double y = std::pow(x + p_.K - p_.b, p_.gamma - 1.0);
            return eval(s, std::clamp(y, s.y_lo, s.y_hi));
        }
        case Kind::ExercisedFlat:
            return eval(s, s.y_lo);
        case Kind::Contact: {
            double lo = s.y_lo, hi = s.y_hi;
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (mid == lo || mid == hi) break;
                (eval(s, mid).slope > x ? lo : hi) = mid;
            }
            return eval(s, 0.5 * (lo + hi));
        }
        case Kind::Interpolated: {
            const double span = s.slope_lo - s.slope_hi;
            const double w = span > 0.0 ? std::clamp((s.slope_lo - x) / span, 0.0, 1.0) : 0.0;
            return eval(s, s.y_lo + w * (s.y_hi - s.y_lo));
        }
    }
    return eval(s, s.y_lo);
}

DualPoint DualSlice::at_slope(double x) const {
    if (!(x >= 0.0)) throw RangeError("wealth must be nonnegative");
    if (x > max_slope()) {
        std::ostringstream os;
        os << "wealth " << x << " exceeds the largest dual slope " << max_slope()
           << " on the grid; lower y_min";
        throw RangeError(os.str());
    }
    auto it = std::partition_point(segments_.begin(), segments_.end(),
                                   [x](const Segment& s) { return s.slope_hi > x; });
    if (it == segments_.end()) it = std::prev(segments_.end());
    // x inside a slope jump between two segments maps to the point where they meet.
    if (it->slope_lo < x) return eval(*it, it->y_lo);
    return solve(*it, x);
}

DualPoint DualSlice::at(double y) const {
    auto it = std::partition_point(segments_.begin(), segments_.end(),
                                   [y](const Segment& s) { return s.y_hi < y; });
    if (it == segments_.end() || y < it->y_lo) throw RangeError("dual point outside the modelled range");
    return eval(*it, y);
}

double invert_dual_slope(double x, const DualSolution& sol, const ModelParams& p, std::size_t level) {
    return DualSlice(sol, p, level).at_slope(x).y;
}

PrimalSolution recover_primal(const DualSolution& sol, const ModelParams& p, const HullData& h,
                              const std::vector<double>& x_nodes) {
    if (x_nodes.size() < 3 || x_nodes.front() != 0.0) {
        throw InvalidGrid("wealth grid must start at 0 and hold at least two positive nodes");
    }
    const std::size_t levels = sol.n_levels();
    const std::size_t last = levels - 1;
    const std::size_t nx = x_nodes.size();

    PrimalSolution ps;
    ps.x = x_nodes;
    ps.t.resize(levels);
    for (std::size_t j = 0; j < levels; ++j) ps.t[j] = sol.grid.time(j);
    ps.V.resize(ix(levels), ix(nx));
    ps.Vx.resizeLike(ps.V);
    ps.Vxx.resizeLike(ps.V);
    ps.risk_exposure.resizeLike(ps.V);
    ps.y_star.resizeLike(ps.V);
    ps.G.assign(levels, std::nullopt);
    ps.H.assign(levels, std::nullopt);
    ps.H_unbounded.assign(levels, false);
    ps.f_slope.assign(levels, 0.0);
    ps.V_zero.assign(levels, 0.0);

    const double inv = 1.0 / (p.gamma - 1.0);
    auto to_wealth = [&](double y) { return std::pow(y, inv) - (p.K - p.b); };

    for (std::size_t j = 0; j < last; ++j) {
        const DualSlice slice(sol, p, j);
        for (std::size_t i = 0; i < nx; ++i) {
            const double x = x_nodes[i];
            const DualPoint pt = slice.at_slope(x);
            ps.y_star(ix(j), ix(i)) = pt.y;
            ps.V(ix(j), ix(i)) = pt.v + x * pt.y;
            ps.Vx(ix(j), ix(i)) = pt.y;
            ps.Vxx(ix(j), ix(i)) = pt.curvature > 0.0 ? -1.0 / pt.curvature : -kInf;
            ps.risk_exposure(ix(j), ix(i)) = x > 0.0 ? pt.y * pt.curvature : 0.0;
        }
        ps.f_slope[j] = ps.Vx(ix(j), 0);
        ps.V_zero[j] = ps.V(ix(j), 1) - x_nodes[1] * ps.Vx(ix(j), 1);

        if (sol.h_at_floor[j]) {
            ps.H_unbounded[j] = true;
        } else if (sol.h[j]) {
            ps.H[j] = to_wealth(*sol.h[j]);
        }
        if (sol.g[j]) ps.G[j] = to_wealth(*sol.g[j]);
    }

    // Terminal level: the concave hull.
    for (std::size_t i = 0; i < nx; ++i) {
        const double x = x_nodes[i];
        const HullValue hv = eval_hull(x, h, p);
        const bool power = x >= h.x_hat;
        const double curvature = power ? (p.gamma - 1.0) * std::pow(x - p.b + p.K, p.gamma - 2.0) : 0.0;
        ps.V(ix(last), ix(i)) = hv.value;
        ps.Vx(ix(last), ix(i)) = hv.slope;
        ps.Vxx(ix(last), ix(i)) = curvature;
        ps.y_star(ix(last), ix(i)) = hv.slope;
        ps.risk_exposure(ix(last), ix(i)) = power && x > 0.0 ? -hv.slope / curvature : 0.0;
    }
    ps.f_slope[last] = h.k;
    ps.V_zero[last] = std::pow(p.K, p.gamma) / p.gamma;
    ps.G[last] = h.x_hat;
    ps.H_unbounded[last] = true;
    return ps;
}

Portfolio optimal_portfolio(double x, const DualSolution& sol, const ModelParams& p, std::size_t level) {
    if (!(x > 0.0)) throw RangeError("optimal portfolio requires x > 0");
    const DualPoint pt = DualSlice(sol, p, level).at_slope(x);
    const double exposure = pt.y * pt.curvature;
    return {p.merton_direction * exposure, exposure};
}

PrimalViReport verify_primal_vi(const PrimalSolution& ps, const DualSolution& sol, const ModelParams& p,
                                const HullData& h, double exercise_tol) {
    PrimalViReport rep;
    rep.min_obstacle_gap = kInf;
    const std::size_t levels = ps.n_levels();
    const std::size_t nx = ps.x.size();
    const double dt = sol.grid.dt;
    const double D = 0.5 * p.a_sq;
    const double y_corner_lo = sol.grid.y(sol.grid.kink_cell);
    const double y_corner_hi = sol.grid.y(sol.grid.kink_cell + 1);

    std::optional<DualSlice> next(std::in_place, sol, p, levels - 1);
    for (std::size_t j = levels - 1; j-- > 0;) {
        const DualSlice current(sol, p, j);
        const bool corner_level = j + 2 >= levels;
        const double H = ps.H_unbounded[j] ? kInf : ps.H[j].value_or(-kInf);
        const double G = ps.G[j].value_or(kInf);
        for (std::size_t i = 1; i + 1 < nx; ++i) {
            const double x = ps.x[i];
            const double y = ps.y_star(ix(j), ix(i));
            if (corner_level && y >= y_corner_lo && y <= y_corner_hi) {
                ++rep.excluded;
                continue;
            }
            const double V = ps.V(ix(j), ix(i));
            const double Vx = ps.Vx(ix(j), ix(i));
            const double Vxx = ps.Vxx(ix(j), ix(i));
            // Envelope identity: V̂_t(x, t) = v_t(J(x, t), t).
            const double Vt = (next->at(y).v - current.at(y).v) / dt;
            const double op = -Vt + D * Vx * Vx / Vxx - p.r * x * Vx + p.beta * V;
            const double gap = V - eval_hull(x, h, p).value;
            const double residual = std::abs(std::min(op, gap));
            ++rep.checked;
            rep.min_obstacle_gap = std::min(rep.min_obstacle_gap, gap);
            if (residual > rep.max_residual) {
                rep.max_residual = residual;
                rep.worst_level = j;
                rep.worst_node = i;
            }

            const bool exercised = gap <= exercise_tol;
            rep.exercised += exercised ? 1 : 0;
            const bool inside = G <= x && x <= H;
            if (exercised != inside) {
                // Tolerate the node on either side of a boundary.
                const double lo = ps.x[i - 1], hi = ps.x[i + 1];
                const bool near = (lo <= G && G <= hi) || (lo <= H && H <= hi);
                if (!near) ++rep.partition_mismatches;
            }
        }
        next.emplace(current);
    }
    return rep;
}

}  // namespace dualfb
