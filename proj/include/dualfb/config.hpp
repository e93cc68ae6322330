#pragma once

#include "dualfb/dual_solver.hpp"
#include "dualfb/model.hpp"
#include "dualfb/monte_carlo.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace dualfb {

/// Monte Carlo part of a run.  MC checks are skipped when x0 is absent.
struct McSettings {
    SimConfig sim;
    std::optional<double> x0;
    double pi_cap = 50.0;
    double bang_bang_horizon = 0.1;
    double bang_bang_dt = 5e-5;
    std::vector<double> bang_bang_intensities{5.0, 20.0, 100.0};
};

struct RunConfig {
    std::string source;  ///< file name the config came from, for diagnostics
    ModelParams model;
    std::size_t n_space = 400;
    std::size_t n_time = 400;
    std::size_t n_x = 400;
    GridOverrides overrides;
    SolverConfig solver;
    McSettings mc;
    std::string out_dir = "out";
};

/// Parses flat `section.key = value` text.  Lines starting with '#' are comments.
/// Unknown or repeated keys, malformed values and violated invariants throw ConfigError
/// with the source name and line number.
RunConfig parse_config(const std::string& text, const std::string& source = "<string>");

/// Reads and parses a config file.  Throws ConfigError when the file cannot be read.
RunConfig load_config(const std::string& path);

/// Multiplies n_space, n_time and n_x by 2^times.
RunConfig refined(const RunConfig& cfg, unsigned times);

}  // namespace dualfb
