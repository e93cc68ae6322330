// dualfb: solve, verify and simulate the dual free-boundary stopping problem.
//
//   dualfb classify --config configs/case_I.cfg
//   dualfb solve    --config configs/case_I.cfg --out out/case_I
//   dualfb verify   --config configs/case_I.cfg
//   dualfb simulate --config configs/case_I.cfg --seed 7
//
// Exit codes: 0 success, 1 a check failed, 2 configuration or I/O error.

#include "dualfb/errors.hpp"
#include "dualfb/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kInfraError = 2;

struct Args {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    unsigned refine = 0;
    std::optional<double> x0;
    bool sabotage_beta = false;
};

dualfb::RunConfig load(const Args& a) {
    dualfb::RunConfig cfg = dualfb::load_config(a.config);
    if (a.seed) cfg.mc.sim.seed = *a.seed;
    if (a.refine > 0) cfg = dualfb::refined(cfg, a.refine);
    if (a.x0) cfg.mc.x0 = *a.x0;
    if (!a.out.empty()) cfg.out_dir = a.out;
    return cfg;
}

void print_checks(const dualfb::RunResult& r) {
    for (const dualfb::CheckResult& c : r.checks) {
        std::printf("[%2d] %-8s %-30s measured=%-12.6g limit=%-12.6g %s\n", c.id,
                    std::string(dualfb::to_string(c.status)).c_str(), c.name.c_str(), c.measured, c.limit,
                    c.note.c_str());
    }
}

void write_all(const dualfb::RunResult& r, const std::string& dir) {
    dualfb::OutputBundle files = dualfb::render_outputs(r);
    files.emplace_back("timings.json", dualfb::render_timings(r));
    dualfb::write_outputs(files, dir);
}

int run_classify(const Args& a) {
    std::cout << dualfb::classify_json(load(a));
    return kOk;
}

int run_solve(const Args& a) {
    const dualfb::RunConfig cfg = load(a);
    dualfb::PipelineOptions opts;
    opts.sabotage_beta = a.sabotage_beta;
    const dualfb::RunResult r = dualfb::run_pipeline(cfg, opts);
    write_all(r, cfg.out_dir);
    print_checks(r);
    std::printf("outputs written to %s\n", cfg.out_dir.c_str());
    return kOk;
}

int run_verify(const Args& a) {
    const dualfb::RunConfig cfg = load(a);
    dualfb::PipelineOptions opts;
    opts.check_determinism = true;
    opts.sabotage_beta = a.sabotage_beta;
    const dualfb::RunResult r = dualfb::run_pipeline(cfg, opts);
    if (!a.out.empty()) write_all(r, cfg.out_dir);
    print_checks(r);
    const bool ok = r.all_passed();
    std::printf("%s\n", ok ? "ALL CHECKS PASSED" : "SOME CHECKS FAILED");
    return ok ? kOk : kCheckFailed;
}

int run_simulate(const Args& a) {
    const dualfb::RunConfig cfg = load(a);
    if (!cfg.mc.x0) throw dualfb::ConfigError(a.config + ": simulate needs mc.x0 or --x0");
    const dualfb::RunResult r = dualfb::run_pipeline(cfg, {});
    nlohmann::json out = nlohmann::json::array();
    bool ok = true;
    for (const dualfb::CheckResult& c : r.checks) {
        if (c.id < 8 || c.id > 10) continue;
        nlohmann::json values = nlohmann::json::object();
        for (const auto& [k, v] : c.values) values[k] = v;
        out.push_back({{"id", c.id}, {"name", c.name}, {"status", std::string(dualfb::to_string(c.status))},
                       {"measured", c.measured}, {"limit", c.limit}, {"values", values}});
        ok = ok && c.status != dualfb::CheckStatus::Fail;
    }
    std::cout << out.dump(2) << "\n";
    return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual free-boundary solver for optimal stopping with portfolio control"};
    app.require_subcommand(1);
    Args args;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config, "config file (section.key = value)")->required();
        sub->add_option("--out", args.out, "output directory");
        sub->add_option("--seed", args.seed, "Monte Carlo seed");
        sub->add_option("--refine", args.refine, "halve every grid step N times")->check(CLI::Range(0u, 4u));
        sub->add_flag("--sabotage-beta", args.sabotage_beta, "")->group("");
    };
    CLI::App* classify = app.add_subcommand("classify", "print the case classification as JSON");
    classify->add_option("--config", args.config, "config file")->required();
    CLI::App* solve = app.add_subcommand("solve", "solve, recover, check and write CSV/JSON outputs");
    add_common(solve);
    CLI::App* verify = app.add_subcommand("verify", "run every acceptance check; exit 1 on failure");
    add_common(verify);
    CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo checks against the solved policy");
    add_common(simulate);
    simulate->add_option("--x0", args.x0, "initial wealth (overrides mc.x0)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInfraError;
    }

    try {
        if (*classify) return run_classify(args);
        if (*solve) return run_solve(args);
        if (*verify) return run_verify(args);
        if (*simulate) return run_simulate(args);
    } catch (const dualfb::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kInfraError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInfraError;
    }
    return kInfraError;
}
