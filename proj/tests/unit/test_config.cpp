#include "doctest.h"
#include "test_support.hpp"

#include "shapeopt/config.hpp"
#include "shapeopt/error.hpp"
#include "shapeopt/mesh_io.hpp"

#include <fstream>

using namespace shapeopt;

namespace {

const std::string minimal = R"(schema = 1
[mesh]
demo = true
[modal]
drive_sector = AS
drive_index = 0
detection_sector = SS
detection_index = 0
)";

std::string error_of(const std::string& text) {
    try {
        parse_config_string(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST_CASE("a minimal file takes the documented defaults") {
    const RunConfig c = parse_config_string(minimal);
    CHECK(c.mesh_path.empty());
    CHECK(c.material.poisson_ratio == 0.2261);
    CHECK(c.material.young_modulus == 161e9);
    CHECK(c.material.density == 2330.0);
    CHECK(c.optimizer.problem.split_min == 1900.0);
    CHECK(c.optimizer.problem.split_max == 2100.0);
    CHECK(c.optimizer.problem.drive_window == 0.01);
    CHECK(c.optimizer.problem.band_fraction == 0.1);
    CHECK(c.optimizer.problem.band_multiples == 3);
    CHECK(c.optimizer.problem.d_min == 2.0);
    CHECK(c.optimizer.problem.w_min == 1.5);
    CHECK(c.optimizer.mma.move_limit == 0.5);
    CHECK(c.design_set == sets::springs);
    CHECK(c.optimizer.drive_sector == Sector::AS);
    CHECK(c.optimizer.detection_sector == Sector::SS);
    CHECK(c.optimizer.output_dir == "out");
}

TEST_CASE("values and comments are read") {
    const RunConfig c = parse_config_string(minimal + R"(
[problem]
split_min = 1500   ; lower edge
split_max = 2500
[mma]
move_limit = 0.1
[material]
poisson_ratio = 0.28
[run]
max_iterations = 12
snapshot_every = 3
)",
                                            "/tmp/cfg");
    CHECK(c.optimizer.problem.split_min == 1500.0);
    CHECK(c.optimizer.problem.split_max == 2500.0);
    CHECK(c.optimizer.mma.move_limit == 0.1);
    CHECK(c.material.poisson_ratio == 0.28);
    CHECK(c.demo.material.poisson_ratio == 0.28);
    CHECK(c.optimizer.max_iterations == 12);
    CHECK(c.optimizer.snapshot_every == 3);
    CHECK(c.optimizer.output_dir == std::filesystem::path("/tmp/cfg/out"));
}

TEST_CASE("malformed input names the key") {
    CHECK(contains(error_of(minimal + "[problem]\nsplit_mni = 3\n"), "problem.split_mni"));
    CHECK(contains(error_of(minimal + "[problem]\nsplit_min = fast\n"), "problem.split_min"));
    CHECK(contains(error_of(minimal + "[problem]\nband_multiples = 2.5\n"), "problem.band_multiples"));
    CHECK(contains(error_of(minimal + "[material]\npoisson_ratio = 0.7\n"), "material.poisson_ratio"));
    CHECK(contains(error_of(minimal + "[meshupdate]\nsmooth = maybe\n"), "meshupdate.smooth"));
    CHECK(contains(error_of(minimal + "[problem]\nsplit_min = 3000\n"), "split"));

    std::string no_drive = minimal;
    no_drive.erase(no_drive.find("drive_index"), std::string("drive_index = 0\n").size());
    CHECK(contains(error_of(no_drive), "modal.drive_index"));

    std::string bad_sector = minimal;
    bad_sector.replace(bad_sector.find("= AS"), 4, "= XY");
    CHECK(contains(error_of(bad_sector), "modal.drive_sector"));
}

TEST_CASE("schema and mesh source are checked") {
    std::string v2 = minimal;
    v2.replace(0, 10, "schema = 2");
    CHECK(contains(error_of(v2), "schema"));
    CHECK(contains(error_of(minimal.substr(minimal.find('\n') + 1)), "schema"));

    std::string both = minimal;
    both.replace(both.find("demo = true"), 11, "demo = true\npath = x.mesh");
    CHECK(contains(error_of(both), "mesh"));

    std::string neither = minimal;
    neither.replace(neither.find("demo = true"), 11, "demo = false");
    CHECK(contains(error_of(neither), "mesh"));

    CHECK(contains(error_of(neither + "[demo]\nlayers = 2\n"), "demo"));
}

TEST_CASE("mesh paths resolve against the config directory") {
    testing::TempDir dir;
    save_mesh(testing::cantilever(100, 10, 10, 4, 1, 1), dir / "beam.mesh");
    std::string text = minimal;
    text.replace(text.find("demo = true"), 11, "path = beam.mesh");
    std::ofstream(dir / "run.ini") << text << "[design]\nset =\n";
    const RunConfig c = parse_config(dir / "run.ini");
    CHECK(c.mesh_path == dir / "beam.mesh");
    CHECK(c.build_mesh().node_count() > 0);
}

TEST_CASE("the reference configuration parses to the defaults") {
    const RunConfig c = parse_config_string(default_config_text());
    const RunConfig d;
    CHECK(c.optimizer.problem.split_min == d.optimizer.problem.split_min);
    CHECK(c.optimizer.mma.move_limit == d.optimizer.mma.move_limit);
    CHECK(c.demo.spring_length == d.demo.spring_length);
    CHECK(c.material.poisson_ratio == d.material.poisson_ratio);
}
