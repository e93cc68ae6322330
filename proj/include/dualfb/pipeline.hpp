#pragma once

#include "dualfb/config.hpp"
#include "dualfb/monte_carlo.hpp"
#include "dualfb/primal.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dualfb {

/// Dual and primal solution of one config on one grid.
struct Solved {
    ModelParams model;
    HullData hull;
    DualSolution dual;
    PrimalSolution primal;
};

/// Solves the dual problem and recovers the primal side on the grid of cfg.
Solved solve(const RunConfig& cfg);

enum class CheckStatus { Pass, Fail, Skipped };

std::string_view to_string(CheckStatus s);

/// One acceptance criterion evaluated on one config.
struct CheckResult {
    int id = 0;
    std::string name;
    CheckStatus status = CheckStatus::Skipped;
    double measured = 0.0;  ///< headline measurement compared against `limit`
    double limit = 0.0;
    std::map<std::string, double> values;  ///< supporting measurements
    std::string note;
};

struct PipelineOptions {
    bool run_mc = true;
    /// Re-runs the whole pipeline single-threaded and compares rendered outputs byte for byte.
    bool check_determinism = false;
    /// Negative control: the solver sees −β while every check keeps the configured model.
    bool sabotage_beta = false;
};

struct RunResult {
    RunConfig config;
    Solved reference;
    Solved refined;  ///< one halving of every step
    BoundsReport bounds;
    PrimalViReport primal_vi;
    PrimalViReport primal_vi_refined;
    std::vector<CheckResult> checks;  ///< criteria 1..11 in order
    std::vector<std::pair<std::string, double>> timings;  ///< stage name, seconds

    bool all_passed() const;
};

RunResult run_pipeline(const RunConfig& cfg, const PipelineOptions& opts = {});

/// Feedback policy built from a primal solution: π* = (σσ')⁻¹μ·exposure with the exposure
/// interpolated linearly in x on the level at or before t, stopping when G(t) ≤ x ≤ H(t)
/// with both boundaries interpolated linearly in t.
Policy solver_policy(const PrimalSolution& ps, const ModelParams& p, double pi_cap);

/// V̂(x, t_level) evaluated off the wealth grid through the dual slice.
double primal_value(double x, const Solved& s, std::size_t level);

/// Rendered output files, name → content, in a fixed order.
using OutputBundle = std::vector<std::pair<std::string, std::string>>;

/// v_surface.csv, dual_boundaries.csv, primal_surface.csv, primal_boundaries.csv, report.json.
OutputBundle render_outputs(const RunResult& r);
std::string render_timings(const RunResult& r);
/// JSON summary of the case classification.
std::string classify_json(const RunConfig& cfg);

/// Writes every file into dir (created if needed).  On failure removes what it wrote and
/// throws std::runtime_error.
void write_outputs(const OutputBundle& files, const std::string& dir);

}  // namespace dualfb
