#pragma once

#include "shapeopt/mesh.hpp"
#include "shapeopt/optimizer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace shapeopt {

/// Contents of a run configuration file. Lengths in um, frequencies in Hz,
/// material constants in SI units.
struct RunConfig {
    std::filesystem::path mesh_path;  // empty: generate the demo resonator
    DemoSpec demo;
    Material material;
    std::string design_set = sets::springs;
    double d_max = 15.0;
    double p_min = -9.0;
    double p_max = 9.0;
    OptimizerOptions optimizer;
    std::uint64_t seed = 0;  // test scaffolding only

    /// Load or generate the mesh and apply the configured material.
    Mesh build_mesh() const;
    DesignModel build_model() const;
};

/// INI-style file: `schema = 1` at the top, then sections. Unknown keys,
/// malformed values and missing required keys raise ConfigError naming
/// the key. Relative paths are resolved against the file's directory.
RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_string(const std::string& text, const std::filesystem::path& base_dir = {});

/// Commented reference configuration listing every key with its default.
std::string default_config_text();

}  // namespace shapeopt
