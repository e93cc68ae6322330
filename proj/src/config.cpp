#include "dualfb/config.hpp"

#include "dualfb/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dualfb {

namespace {

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        out.push_back(trim(std::string_view(s).substr(start, pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

struct Entry {
    std::string value;
    int line;
};

class Parser {
public:
    Parser(std::string source, std::map<std::string, Entry> entries)
        : source_(std::move(source)), entries_(std::move(entries)) {}

    [[noreturn]] void fail(int line, const std::string& msg) const {
        std::ostringstream os;
        os << source_ << ":" << line << ": " << msg;
        throw ConfigError(os.str());
    }
    [[noreturn]] void fail_key(const std::string& key, const std::string& msg) const {
        const auto it = entries_.find(key);
        fail(it == entries_.end() ? 0 : it->second.line, key + ": " + msg);
    }

    bool has(const std::string& key) const { return entries_.count(key) != 0; }
    int line(const std::string& key) const { return has(key) ? entries_.at(key).line : 0; }

    double number(const std::string& key, std::string_view text, int at) const {
        double v = 0.0;
        const char* end = text.data() + text.size();
        const auto res = std::from_chars(text.data(), end, v);
        if (text.empty() || res.ec != std::errc() || res.ptr != end || !std::isfinite(v)) {
            fail(at, key + ": expected a finite number, got '" + std::string(text) + "'");
        }
        return v;
    }

    double real(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        return number(key, entries_.at(key).value, line(key));
    }

    double required(const std::string& key) const {
        if (!has(key)) fail(0, "missing required key " + key);
        return real(key, 0.0);
    }

    std::size_t count(const std::string& key, std::size_t fallback) const {
        if (!has(key)) return fallback;
        const std::string& text = entries_.at(key).value;
        std::size_t v = 0;
        const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
        if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
            fail(line(key), key + ": expected a nonnegative integer, got '" + text + "'");
        }
        return v;
    }

    std::uint64_t u64(const std::string& key, std::uint64_t fallback) const {
        if (!has(key)) return fallback;
        const std::string& text = entries_.at(key).value;
        std::uint64_t v = 0;
        const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
        if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
            fail(line(key), key + ": expected an unsigned 64-bit integer, got '" + text + "'");
        }
        return v;
    }

    bool flag(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const std::string& text = entries_.at(key).value;
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        fail(line(key), key + ": expected true or false, got '" + text + "'");
    }

    std::string text(const std::string& key, const std::string& fallback) const {
        return has(key) ? entries_.at(key).value : fallback;
    }

    std::vector<double> list(const std::string& key, const std::string& text, char sep) const {
        std::vector<double> out;
        for (const std::string& item : split(text, sep)) out.push_back(number(key, item, line(key)));
        return out;
    }

private:
    std::string source_;
    std::map<std::string, Entry> entries_;
};

const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {
        "model.r", "model.mu", "model.sigma", "model.gamma", "model.b", "model.K", "model.beta", "model.T",
        "grid.n_space", "grid.n_time", "grid.n_x", "grid.y_min", "grid.y_max",
        "solver.theta", "solver.omega", "solver.tol", "solver.max_iter", "solver.exercise_tol",
        "solver.stencil", "solver.polish",
        "mc.n_paths", "mc.dt_sim", "mc.seed", "mc.antithetic", "mc.threads", "mc.x0", "mc.pi_cap",
        "mc.bang_bang_horizon", "mc.bang_bang_dt", "mc.bang_bang_intensities",
        "output.dir",
    };
    return keys;
}

ModelParams parse_model(const Parser& in) {
    const double r = in.required("model.r");
    const double gamma = in.required("model.gamma");
    const double b = in.required("model.b");
    const double K = in.required("model.K");
    const double beta = in.required("model.beta");
    const double T = in.required("model.T");
    if (!(gamma > 0.0 && gamma < 1.0)) in.fail_key("model.gamma", "requires 0 < gamma < 1");
    if (!(K > 0.0)) in.fail_key("model.K", "requires K > 0");
    if (!(b >= 0.0)) in.fail_key("model.b", "requires b >= 0");
    if (!(T > 0.0)) in.fail_key("model.T", "requires T > 0");
    if (!(beta >= 0.0)) in.fail_key("model.beta", "requires beta >= 0");
    if (!(r >= 0.0)) in.fail_key("model.r", "requires r >= 0");

    if (!in.has("model.mu")) in.fail(0, "missing required key model.mu");
    if (!in.has("model.sigma")) in.fail(0, "missing required key model.sigma");
    const std::vector<double> mu = in.list("model.mu", in.text("model.mu", ""), ',');
    const std::vector<std::string> rows = split(in.text("model.sigma", ""), ';');
    const auto n = static_cast<Eigen::Index>(mu.size());
    if (static_cast<Eigen::Index>(rows.size()) != n) {
        in.fail_key("model.sigma", "needs " + std::to_string(n) + " rows separated by ';'");
    }
    Eigen::MatrixXd sigma(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const std::vector<double> row = in.list("model.sigma", rows[static_cast<std::size_t>(i)], ',');
        if (static_cast<Eigen::Index>(row.size()) != n) {
            in.fail_key("model.sigma", "row " + std::to_string(i + 1) + " needs " + std::to_string(n) + " entries");
        }
        for (Eigen::Index c = 0; c < n; ++c) sigma(i, c) = row[static_cast<std::size_t>(c)];
    }
    Eigen::VectorXd mu_vec = Eigen::Map<const Eigen::VectorXd>(mu.data(), n);
    try {
        return make_model(r, std::move(mu_vec), std::move(sigma), gamma, b, K, beta, T);
    } catch (const InvalidParameters& e) {
        in.fail_key("model.sigma", e.what());
    }
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source) {
    std::map<std::string, Entry> entries;
    const auto& keys = known_keys();
    std::istringstream is(text);
    std::string raw;
    int line_no = 0;
    auto fail = [&](const std::string& msg) {
        std::ostringstream os;
        os << source << ":" << line_no << ": " << msg;
        throw ConfigError(os.str());
    };
    while (std::getline(is, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail("expected 'section.key = value', got '" + line + "'");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        std::string value = trim(std::string_view(line).substr(eq + 1));
        if (const std::size_t hash = value.find(" #"); hash != std::string::npos) value = trim(value.substr(0, hash));
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) fail("unknown key '" + key + "'");
        if (entries.count(key)) {
            fail("duplicate key '" + key + "' (first set on line " + std::to_string(entries[key].line) + ")");
        }
        entries[key] = {value, line_no};
    }

    const Parser in(source, std::move(entries));
    RunConfig cfg;
    cfg.source = source;
    cfg.model = parse_model(in);

    cfg.n_space = in.count("grid.n_space", cfg.n_space);
    cfg.n_time = in.count("grid.n_time", cfg.n_time);
    cfg.n_x = in.count("grid.n_x", cfg.n_x);
    if (cfg.n_space < 50) in.fail_key("grid.n_space", "requires n_space >= 50");
    if (cfg.n_time < 50) in.fail_key("grid.n_time", "requires n_time >= 50");
    if (cfg.n_x < 10) in.fail_key("grid.n_x", "requires n_x >= 10");
    if (in.has("grid.y_min")) {
        cfg.overrides.y_min = in.real("grid.y_min", 0.0);
        if (!(*cfg.overrides.y_min > 0.0)) in.fail_key("grid.y_min", "requires y_min > 0");
    }
    if (in.has("grid.y_max")) cfg.overrides.y_max = in.real("grid.y_max", 0.0);

    SolverConfig& s = cfg.solver;
    s.theta = in.real("solver.theta", s.theta);
    s.psor_omega = in.real("solver.omega", s.psor_omega);
    s.psor_tol = in.real("solver.tol", s.psor_tol);
    s.psor_max_iter = in.count("solver.max_iter", s.psor_max_iter);
    s.exercise_tol = in.real("solver.exercise_tol", s.exercise_tol);
    s.active_set_polish = in.flag("solver.polish", s.active_set_polish);
    const std::string stencil = in.text("solver.stencil", "fitted");
    if (stencil == "fitted") {
        s.stencil = StencilKind::Fitted;
    } else if (stencil == "centered") {
        s.stencil = StencilKind::Centered;
    } else {
        in.fail_key("solver.stencil", "expected fitted or centered, got '" + stencil + "'");
    }
    try {
        validate(s);
    } catch (const InvalidParameters& e) {
        in.fail(0, std::string("solver: ") + e.what());
    }

    McSettings& mc = cfg.mc;
    mc.sim.n_paths = in.count("mc.n_paths", mc.sim.n_paths);
    mc.sim.dt_sim = in.real("mc.dt_sim", mc.sim.dt_sim);
    mc.sim.seed = in.u64("mc.seed", mc.sim.seed);
    mc.sim.antithetic = in.flag("mc.antithetic", mc.sim.antithetic);
    mc.sim.threads = in.count("mc.threads", mc.sim.threads);
    if (in.has("mc.x0")) {
        mc.x0 = in.real("mc.x0", 0.0);
        if (!(*mc.x0 > 0.0)) in.fail_key("mc.x0", "requires x0 > 0");
    }
    mc.pi_cap = in.real("mc.pi_cap", mc.pi_cap);
    if (!(mc.pi_cap >= 0.0)) in.fail_key("mc.pi_cap", "requires pi_cap >= 0");
    mc.bang_bang_horizon = in.real("mc.bang_bang_horizon", mc.bang_bang_horizon);
    mc.bang_bang_dt = in.real("mc.bang_bang_dt", mc.bang_bang_dt);
    if (in.has("mc.bang_bang_intensities")) {
        mc.bang_bang_intensities = in.list("mc.bang_bang_intensities", in.text("mc.bang_bang_intensities", ""), ',');
        for (double n : mc.bang_bang_intensities) {
            if (!(n > 0.0)) in.fail_key("mc.bang_bang_intensities", "intensities must be positive");
        }
    }
    try {
        validate(mc.sim, cfg.model.T);
    } catch (const InvalidParameters& e) {
        in.fail(in.line("mc.dt_sim"), std::string("mc: ") + e.what());
    }
    if (!(mc.bang_bang_horizon > 0.0 && mc.bang_bang_horizon <= cfg.model.T)) {
        in.fail_key("mc.bang_bang_horizon", "requires 0 < horizon <= T");
    }
    try {
        SimConfig bb = mc.sim;
        bb.dt_sim = mc.bang_bang_dt;
        validate(bb, mc.bang_bang_horizon);
    } catch (const InvalidParameters& e) {
        in.fail_key("mc.bang_bang_dt", e.what());
    }

    cfg.out_dir = in.text("output.dir", cfg.out_dir);
    if (cfg.out_dir.empty()) in.fail_key("output.dir", "must not be empty");
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::ostringstream os;
    os << in.rdbuf();
    return parse_config(os.str(), path);
}

RunConfig refined(const RunConfig& cfg, unsigned times) {
    RunConfig out = cfg;
    const std::size_t factor = std::size_t{1} << times;
    out.n_space *= factor;
    out.n_time *= factor;
    out.n_x *= factor;
    return out;
}

}  // namespace dualfb
