// Runs every reference config through the full pipeline and prints one PASS/FAIL line per
// acceptance criterion.  A criterion passes when it was evaluated on at least one config and
// failed on none.  Exit status 1 when any criterion fails.

#include "dualfb/config.hpp"
#include "dualfb/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

namespace {

struct Tally {
    std::string name;
    std::vector<std::string> passed, failed, skipped;
    std::string detail;
};

}  // namespace

int main() {
    const std::vector<std::string> configs{"case_I", "case_II_strict", "case_II_equal", "case_III", "case_IV"};
    std::map<int, Tally> tally;
    for (const std::string& name : configs) {
        const dualfb::RunConfig cfg = dualfb::load_config(std::string(DUALFB_CONFIG_DIR) + "/" + name + ".cfg");
        dualfb::PipelineOptions opts;
        opts.check_determinism = true;
        const auto start = std::chrono::steady_clock::now();
        const dualfb::RunResult r = dualfb::run_pipeline(cfg, opts);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%-15s %6.1f s (pipeline run twice for determinism)\n", name.c_str(), secs);
        for (const auto& [stage, s] : r.timings) std::printf("    %-28s %8.2f s\n", stage.c_str(), s);
        for (const dualfb::CheckResult& c : r.checks) {
            Tally& t = tally[c.id];
            t.name = c.name;
            const std::string line = name + " measured=" + std::to_string(c.measured) + " limit=" +
                                     std::to_string(c.limit) + (c.note.empty() ? "" : " (" + c.note + ")");
            switch (c.status) {
                case dualfb::CheckStatus::Pass: t.passed.push_back(line); break;
                case dualfb::CheckStatus::Fail: t.failed.push_back(line); break;
                case dualfb::CheckStatus::Skipped: t.skipped.push_back(name); break;
            }
        }
    }

    bool all = true;
    std::printf("\n");
    for (int id = 1; id <= 11; ++id) {
        const Tally& t = tally[id];
        const bool pass = !t.passed.empty() && t.failed.empty();
        all = all && pass;
        std::printf("%s criterion %2d: %s  [%zu pass, %zu fail, %zu skipped]\n", pass ? "PASS" : "FAIL", id,
                    t.name.c_str(), t.passed.size(), t.failed.size(), t.skipped.size());
        for (const std::string& f : t.failed) std::printf("        fail: %s\n", f.c_str());
        for (const std::string& p : t.passed) std::printf("        pass: %s\n", p.c_str());
    }
    return all ? 0 : 1;
}
