#include "doctest.h"
#include "test_support.hpp"

#include "dualfb/config.hpp"
#include "dualfb/errors.hpp"

#include <string>

using namespace dualfb;
using dualfb::testing::config_path;

namespace {

const std::string kModel = R"(model.r = 0.02
model.mu = 0.06
model.sigma = 0.3
model.gamma = 0.5
model.b = 1
model.K = 0.5
model.beta = 0.1
model.T = 1
)";

std::string error_of(const std::string& text) {
    try {
        parse_config(text, "t.cfg");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("minimal config takes the defaults") {
    const RunConfig c = parse_config(kModel, "t.cfg");
    CHECK(c.source == "t.cfg");
    CHECK(c.model.r == 0.02);
    CHECK(c.model.a_sq == doctest::Approx(0.04).epsilon(1e-14));
    CHECK(c.n_space == 400);
    CHECK(c.n_time == 400);
    CHECK(c.n_x == 400);
    CHECK_FALSE(c.mc.x0);
    CHECK(c.solver.stencil == StencilKind::Fitted);
}

TEST_CASE("every section parses") {
    const RunConfig c = parse_config(kModel + R"(
# comment line
grid.n_space = 120   # inline comment
grid.n_time = 80
grid.n_x = 60
grid.y_min = 1e-3
solver.theta = 0.5
solver.stencil = centered
solver.polish = false
mc.n_paths = 2000
mc.dt_sim = 0.005
mc.seed = 42
mc.antithetic = true
mc.threads = 2
mc.x0 = 1.5
mc.bang_bang_intensities = 1, 2, 3
output.dir = somewhere
)",
                                      "t.cfg");
    CHECK(c.n_space == 120);
    CHECK(c.n_time == 80);
    CHECK(c.n_x == 60);
    REQUIRE(c.overrides.y_min);
    CHECK(*c.overrides.y_min == 1e-3);
    CHECK(c.solver.theta == 0.5);
    CHECK(c.solver.stencil == StencilKind::Centered);
    CHECK_FALSE(c.solver.active_set_polish);
    CHECK(c.mc.sim.n_paths == 2000);
    CHECK(c.mc.sim.seed == 42);
    CHECK(c.mc.sim.antithetic);
    CHECK(c.mc.sim.threads == 2);
    CHECK(*c.mc.x0 == 1.5);
    CHECK(c.mc.bang_bang_intensities == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(c.out_dir == "somewhere");
}

TEST_CASE("errors name the file and line") {
    CHECK(error_of(kModel + "model.gamma = 0.4\n").find("t.cfg:9: duplicate key 'model.gamma'") == 0);
    CHECK(error_of(kModel + "grid.bogus = 1\n").find("t.cfg:9: unknown key") == 0);
    CHECK(error_of(kModel + "no equals sign\n").find("t.cfg:9:") == 0);
    std::string bad_gamma = kModel;
    bad_gamma.replace(bad_gamma.find("gamma = 0.5"), 11, "gamma = 1.5");
    CHECK(error_of(bad_gamma).find("t.cfg:4:") == 0);
    CHECK(error_of("model.r = 0.02\n").find("t.cfg:") == 0);
    CHECK(error_of(kModel + "grid.n_space = 10\n").find("t.cfg:9:") == 0);
    CHECK(error_of(kModel + "grid.n_space = abc\n").find("t.cfg:9:") == 0);
    CHECK(error_of(kModel + "mc.dt_sim = 0.5\n") != "");
    CHECK_THROWS_AS(load_config("/nonexistent/x.cfg"), ConfigError);
}

TEST_CASE("refined grids double every count") {
    const RunConfig c = refined(parse_config(kModel, "t.cfg"), 2);
    CHECK(c.n_space == 1600);
    CHECK(c.n_time == 1600);
    CHECK(c.n_x == 1600);
}

TEST_CASE("reference configs load and classify as named") {
    const std::pair<const char*, CaseId> cases[] = {{"case_I", CaseId::I},
                                                    {"case_II_strict", CaseId::II_strict},
                                                    {"case_II_equal", CaseId::II_equal},
                                                    {"case_III", CaseId::III},
                                                    {"case_IV", CaseId::IV}};
    for (const auto& [name, id] : cases) {
        const RunConfig c = load_config(config_path(name));
        CAPTURE(name);
        CHECK(classify_case(c.model, compute_hull(c.model)).case_id == id);
    }
    const RunConfig c3 = load_config(config_path("case_III"));
    CHECK(c3.model.n_assets() == 2);
    CHECK(c3.model.a_sq == doctest::Approx(0.04).epsilon(1e-12));
    const HullData h3 = compute_hull(c3.model);
    CHECK(h3.x_hat == doctest::Approx(1.0 + std::sqrt(2.0)).epsilon(1e-12));
    CHECK(*classify_case(c3.model, h3).y_T == doctest::Approx(0.4).epsilon(1e-12));
}
