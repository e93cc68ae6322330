#include "doctest.h"
#include "test_support.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using dualfb::testing::config_path;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(DUALFB_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string small_config(const std::string& extra) {
    const auto path = std::filesystem::temp_directory_path() / "dualfb_cli_test.cfg";
    std::ifstream in(config_path("case_III"));
    std::ofstream out(path);
    out << in.rdbuf() << "\n" << extra;
    return path.string();
}

}  // namespace

TEST_CASE("help and usage errors") {
    CHECK(run("--help") == 0);
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("solve") == 2);
    CHECK(run("solve --config " + config_path("case_I") + " --refine 9") == 2);
}

TEST_CASE("configuration errors exit with 2") {
    CHECK(run("classify --config /nonexistent.cfg") == 2);
    const std::string bad = small_config("");
    {
        std::ifstream in(bad);
        std::string text((std::istreambuf_iterator<char>(in)), {});
        text.replace(text.find("model.gamma = 0.5"), 17, "model.gamma = 1.5");
        std::ofstream(bad) << text;
    }
    CHECK(run("classify --config " + bad) == 2);
}

TEST_CASE("classify and solve succeed") {
    CHECK(run("classify --config " + config_path("case_I")) == 0);
    const auto dir = std::filesystem::temp_directory_path() / "dualfb_cli_out";
    std::filesystem::remove_all(dir);
    const std::string cfg = small_config("");
    CHECK(run("solve --config " + cfg + " --out " + dir.string()) == 0);
    for (const char* f : {"v_surface.csv", "dual_boundaries.csv", "primal_surface.csv", "primal_boundaries.csv",
                          "report.json", "timings.json"}) {
        CHECK(std::filesystem::exists(dir / f));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("unwritable output directory exits with 2") {
    const auto blocker = std::filesystem::temp_directory_path() / "dualfb_cli_blocker";
    std::filesystem::remove_all(blocker);
    std::ofstream(blocker.string()).put('x');
    CHECK(run("solve --config " + small_config("") + " --out " + (blocker / "sub").string()) == 2);
    std::filesystem::remove_all(blocker);
}

TEST_CASE("verify exits with 1 when a check fails") {
    CHECK(run("verify --config " + small_config("") + " --sabotage-beta") == 1);
}

TEST_CASE("simulate needs an initial wealth") {
    CHECK(run("simulate --config " + small_config("")) == 2);
}
