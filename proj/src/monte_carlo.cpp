#include "dualfb/monte_carlo.hpp"

#include "dualfb/errors.hpp"
#include "dualfb/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <sstream>
#include <string>
#include <thread>

namespace dualfb {

namespace {

constexpr double kBlowupFactor = 1e6;

struct PathOut {
    double value = 0.0;
    bool stopped = false;
    bool absorbed = false;
    std::uint32_t capped = 0;
};

/// Standard normals of one path in draw order.  Draw m comes from counter (unit, m/2 split
/// into two words), so the sequence depends only on the seed and the path's unit.
class NormalStream {
public:
    NormalStream(const Philox4x32& rng, std::uint32_t unit) : rng_(rng), unit_(unit) {}

    double next() {
        if (index_ % 2 == 0) {
            const std::uint64_t block = index_ / 2;
            pair_ = rng_.normals(unit_, static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32));
        }
        return index_++ % 2 == 0 ? pair_.first : pair_.second;
    }

private:
    const Philox4x32& rng_;
    std::uint32_t unit_;
    std::uint64_t index_ = 0;
    std::pair<double, double> pair_{0.0, 0.0};
};

std::size_t step_count(double horizon, double dt) {
    return static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9));
}

/// Runs fn(unit) for every unit on a fixed static partition; each unit writes only its own slot.
template <class Fn>
void for_each_unit(std::size_t n_units, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n_units));
    if (workers == 1) {
        for (std::size_t u = 0; u < n_units; ++u) fn(u);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = n_units * w / workers;
        const std::size_t end = n_units * (w + 1) / workers;
        pool.emplace_back([&, w, begin, end] {
            try {
                for (std::size_t u = begin; u < end; ++u) fn(u);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

void summarize(std::span<const double> unit_values, McReport& rep) {
    const auto n = static_cast<double>(unit_values.size());
    rep.estimate = pairwise_sum(unit_values) / n;
    std::vector<double> sq(unit_values.size());
    for (std::size_t i = 0; i < sq.size(); ++i) {
        const double d = unit_values[i] - rep.estimate;
        sq[i] = d * d;
    }
    const double var = unit_values.size() > 1 ? pairwise_sum(sq) / (n - 1.0) : 0.0;
    rep.std_error = std::sqrt(var / n);
    rep.ci_lo = rep.estimate - 1.96 * rep.std_error;
    rep.ci_hi = rep.estimate + 1.96 * rep.std_error;
}

enum class Quantity { Payoff, DeflatedWealth };

McReport run_wealth(double x0, const Policy& policy, const ModelParams& p, const SimConfig& cfg,
                    Quantity quantity) {
    if (!(x0 > 0.0)) throw InvalidParameters("x0 must be positive");
    validate(cfg, p.T);
    const std::size_t steps = step_count(p.T, cfg.dt_sim);
    const double dt = p.T / static_cast<double>(steps);
    const double sqrt_dt = std::sqrt(dt);
    const double growth = std::exp(p.r * dt);
    const double zeta_drift = -(p.r + 0.5 * p.a_sq) * dt;
    const std::size_t n = p.n_assets();
    // Row-major copies so the step loop does no allocation.
    std::vector<double> sigma(n * n), mu(n), lambda(n);
    for (std::size_t a = 0; a < n; ++a) {
        mu[a] = p.mu[static_cast<Eigen::Index>(a)];
        lambda[a] = p.risk_price[static_cast<Eigen::Index>(a)];
        for (std::size_t c = 0; c < n; ++c) {
            sigma[a * n + c] = p.sigma(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
        }
    }
    const Philox4x32 rng(cfg.seed);
    const bool use_stop = quantity == Quantity::Payoff && static_cast<bool>(policy.stop);

    std::vector<PathOut> paths(cfg.n_paths);
    auto simulate = [&](std::size_t path) {
        const std::size_t unit = cfg.antithetic ? path / 2 : path;
        const double sign = cfg.antithetic && (path % 2 == 1) ? -1.0 : 1.0;
        NormalStream normals(rng, static_cast<std::uint32_t>(unit));
        std::vector<double> pi(n, 0.0), dw(n), sdw(n);
        PathOut out;
        double x = x0;
        double log_zeta = 0.0;
        auto finish = [&](double t, double wealth) {
            out.value = quantity == Quantity::Payoff ? std::exp(-p.beta * t) * payoff(wealth, p)
                                                     : std::exp(log_zeta) * wealth;
        };
        for (std::size_t s = 0; s < steps; ++s) {
            const double t = static_cast<double>(s) * dt;
            if (use_stop && policy.stop(x, t)) {
                out.stopped = true;
                finish(t, x);
                return out;
            }
            std::fill(pi.begin(), pi.end(), 0.0);
            if (policy.portfolio) policy.portfolio(x, t, pi);
            if (policy.pi_cap > 0.0) {
                double norm = 0.0;
                for (double v : pi) norm += v * v;
                norm = std::sqrt(norm);
                if (norm > policy.pi_cap * x) {
                    const double scale = policy.pi_cap * x / norm;
                    for (double& v : pi) v *= scale;
                    ++out.capped;
                }
            }
            double drift = 0.0, noise = 0.0, shock = 0.0;
            for (std::size_t a = 0; a < n; ++a) dw[a] = sign * sqrt_dt * normals.next();
            for (std::size_t a = 0; a < n; ++a) {
                double row = 0.0;
                for (std::size_t c = 0; c < n; ++c) row += sigma[a * n + c] * dw[c];
                sdw[a] = row;
            }
            for (std::size_t a = 0; a < n; ++a) {
                drift += mu[a] * pi[a];
                noise += pi[a] * sdw[a];
                shock += lambda[a] * dw[a];
            }
            const double next = growth * (x + drift * dt + noise);
            log_zeta += zeta_drift - shock;
            if (next <= 0.0) {
                out.absorbed = true;
                finish(t + dt, 0.0);
                return out;
            }
            if (next > kBlowupFactor * x0) {
                std::ostringstream os;
                os << "wealth path exceeded " << kBlowupFactor << "*x0 at t=" << t + dt;
                throw NumericalBlowup(os.str());
            }
            x = next;
        }
        finish(p.T, x);
        return out;
    };
    for_each_unit(cfg.n_paths, worker_count(cfg), [&](std::size_t path) { paths[path] = simulate(path); });

    McReport rep;
    rep.n_paths = cfg.n_paths;
    rep.n_steps = steps;
    rep.pi_cap = policy.pi_cap;
    std::vector<double> units;
    if (cfg.antithetic) {
        units.resize(cfg.n_paths / 2);
        for (std::size_t u = 0; u < units.size(); ++u) {
            units[u] = 0.5 * (paths[2 * u].value + paths[2 * u + 1].value);
        }
    } else {
        units.resize(cfg.n_paths);
        for (std::size_t u = 0; u < units.size(); ++u) units[u] = paths[u].value;
    }
    for (const PathOut& o : paths) {
        rep.n_stopped_early += o.stopped ? 1 : 0;
        rep.n_absorbed += o.absorbed ? 1 : 0;
        rep.n_capped += o.capped;
    }
    summarize(units, rep);
    return rep;
}

}  // namespace

void validate(const SimConfig& cfg, double horizon) {
    if (cfg.n_paths < 1000) throw InvalidParameters("n_paths must be at least 1000");
    if (cfg.antithetic && cfg.n_paths % 2 != 0) throw InvalidParameters("antithetic runs need an even n_paths");
    if (!(cfg.dt_sim > 0.0) || cfg.dt_sim > horizon / 100.0 * (1.0 + 1e-12)) {
        throw InvalidParameters("dt_sim must lie in (0, horizon/100]");
    }
    if (cfg.n_paths > 0xFFFFFFFFull) throw InvalidParameters("n_paths exceeds the counter range");
}

std::size_t worker_count(const SimConfig& cfg) {
    std::size_t workers = cfg.threads;
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SOLVER_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end != env && cap > 0) workers = std::min(workers, static_cast<std::size_t>(cap));
    }
    return workers;
}

Policy zero_policy(bool stop_immediately) {
    Policy pol;
    if (stop_immediately) pol.stop = [](double, double) { return true; };
    return pol;
}

Policy constant_proportion_policy(const ModelParams& p, double c) {
    Policy pol;
    const Eigen::VectorXd direction = p.merton_direction;
    pol.portfolio = [direction, c](double x, double, std::span<double> pi) {
        for (std::size_t a = 0; a < pi.size(); ++a) pi[a] = c * x * direction[static_cast<Eigen::Index>(a)];
    };
    return pol;
}

McReport simulate_value(double x0, const Policy& policy, const ModelParams& p, const SimConfig& cfg) {
    return run_wealth(x0, policy, p, cfg, Quantity::Payoff);
}

McReport martingale_check(double x0, const Policy& policy, const ModelParams& p, const SimConfig& cfg) {
    McReport rep = run_wealth(x0, policy, p, cfg, Quantity::DeflatedWealth);
    rep.verdict = std::abs(rep.estimate - x0) <= 3.0 * rep.std_error;
    return rep;
}

std::vector<BangBangReport> bang_bang_limit(double x0, const std::vector<double>& intensities,
                                            double horizon, const ModelParams& p, const HullData& h,
                                            const SimConfig& cfg) {
    if (!(x0 > 0.0 && x0 < h.x_hat)) throw InvalidParameters("bang-bang start must lie in (0, x_hat)");
    if (!(horizon > 0.0)) throw InvalidParameters("horizon must be positive");
    validate(cfg, horizon);
    const std::size_t steps = step_count(horizon, cfg.dt_sim);
    const double sqrt_dt = std::sqrt(horizon / static_cast<double>(steps));
    const Philox4x32 rng(cfg.seed);
    const double top = h.x_hat;

    std::vector<BangBangReport> out;
    for (const double intensity : intensities) {
        if (!(intensity > 0.0)) throw InvalidParameters("bang-bang intensity must be positive");
        std::vector<double> end(cfg.n_paths);
        auto simulate = [&](std::size_t path) {
            const std::size_t unit = cfg.antithetic ? path / 2 : path;
            const double sign = cfg.antithetic && (path % 2 == 1) ? -1.0 : 1.0;
            NormalStream normals(rng, static_cast<std::uint32_t>(unit));
            double x = x0;
            for (std::size_t s = 0; s < steps && x > 0.0 && x < top; ++s) {
                x = std::clamp(x + sign * intensity * sqrt_dt * normals.next(), 0.0, top);
            }
            end[path] = x;
        };
        for_each_unit(cfg.n_paths, worker_count(cfg), simulate);

        const std::size_t units = cfg.antithetic ? cfg.n_paths / 2 : cfg.n_paths;
        std::vector<double> values(units), at_top(units), at_bottom(units);
        const std::size_t per = cfg.antithetic ? 2 : 1;
        for (std::size_t u = 0; u < units; ++u) {
            double v = 0.0, t = 0.0, b = 0.0;
            for (std::size_t k = 0; k < per; ++k) {
                const double x = end[u * per + k];
                v += payoff(x, p);
                t += x >= top ? 1.0 : 0.0;
                b += x <= 0.0 ? 1.0 : 0.0;
            }
            values[u] = v / static_cast<double>(per);
            at_top[u] = t / static_cast<double>(per);
            at_bottom[u] = b / static_cast<double>(per);
        }
        BangBangReport rep;
        rep.intensity = intensity;
        rep.payoff.n_paths = cfg.n_paths;
        rep.payoff.n_steps = steps;
        summarize(values, rep.payoff);
        McReport top_rep;
        summarize(at_top, top_rep);
        rep.p_top = top_rep.estimate;
        rep.p_top_se = top_rep.std_error;
        rep.p_bottom = pairwise_sum(at_bottom) / static_cast<double>(units);
        out.push_back(rep);
    }
    return out;
}

double pairwise_sum(std::span<const double> values) {
    if (values.size() <= 8) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

}  // namespace dualfb
