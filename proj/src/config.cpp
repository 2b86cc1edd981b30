#include "shapeopt/config.hpp"

#include "shapeopt/error.hpp"
#include "shapeopt/mesh_io.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace shapeopt {

namespace {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

using Setter = std::function<void(const std::string&, RunConfig&)>;

struct Key {
    Setter set;
    bool required = false;
};

std::string trim(std::string s) {
    for (const char* mark : {" ;", " #", "\t;", "\t#"})
        if (auto pos = s.find(mark); pos != std::string::npos) s.erase(pos);
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double to_double(const std::string& v) {
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) throw ConfigError("expected a number, got '" + v + "'");
    return x;
}

long to_long(const std::string& v) {
    long x = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) throw ConfigError("expected an integer, got '" + v + "'");
    return x;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    throw ConfigError("expected true or false, got '" + v + "'");
}

// Setters for a field reached through `field(config)`.
template <class F>
Setter number(F field, double lo = -1e300, double hi = 1e300) {
    return [=](const std::string& v, RunConfig& c) {
        const double x = to_double(v);
        if (!(x >= lo && x <= hi)) {
            std::ostringstream msg;
            msg << "value " << x << " outside [" << lo << ", " << hi << "]";
            throw ConfigError(msg.str());
        }
        field(c) = x;
    };
}

template <class F>
Setter integer(F field, long lo, long hi) {
    return [=](const std::string& v, RunConfig& c) {
        const long x = to_long(v);
        if (x < lo || x > hi)
            throw ConfigError("value " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                              std::to_string(hi) + "]");
        field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(x);
    };
}

template <class F>
Setter boolean(F field) {
    return [=](const std::string& v, RunConfig& c) { field(c) = to_bool(v); };
}

template <class F>
Setter sector(F field) {
    return [=](const std::string& v, RunConfig& c) {
        try {
            field(c) = parse_sector(v);
        } catch (const Error&) {
            throw ConfigError("expected one of SS, SA, AS, AA, got '" + v + "'");
        }
    };
}

#define FIELD(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::map<std::string, Key>& schema() {
    static const std::map<std::string, Key> keys = [] {
        std::map<std::string, Key> k;
        k["schema"] = {[](const std::string& v, RunConfig&) {
                           if (v != "1") throw ConfigError("unsupported schema version '" + v + "'");
                       },
                       true};
        k["mesh.path"] = {[](const std::string& v, RunConfig& c) { c.mesh_path = v; }};
        k["mesh.demo"] = {[](const std::string&, RunConfig&) {}};  // read in parse_tree

        k["demo.mass_half_x"] = {number(FIELD(demo.mass_half_x), 1e-3)};
        k["demo.mass_half_y"] = {number(FIELD(demo.mass_half_y), 1e-3)};
        k["demo.spring_count"] = {integer(FIELD(demo.spring_count), 1, 64)};
        k["demo.spring_width"] = {number(FIELD(demo.spring_width), 1e-3)};
        k["demo.spring_length"] = {number(FIELD(demo.spring_length), 1e-3)};
        k["demo.spring_pitch"] = {number(FIELD(demo.spring_pitch), 1e-3)};
        k["demo.spring_offset"] = {number(FIELD(demo.spring_offset), 0.0)};
        k["demo.anchor_length"] = {number(FIELD(demo.anchor_length), 1e-3)};
        k["demo.anchor_margin"] = {number(FIELD(demo.anchor_margin), 0.0)};
        k["demo.element_size"] = {number(FIELD(demo.element_size), 1e-3)};
        k["demo.length_element_size"] = {number(FIELD(demo.length_element_size), 0.0)};
        k["demo.mass_element_size"] = {number(FIELD(demo.mass_element_size), 0.0)};
        k["demo.thickness"] = {number(FIELD(demo.thickness), 1e-3)};
        k["demo.layers"] = {integer(FIELD(demo.n_layers), 1, 64)};

        k["material.young_modulus"] = {number(FIELD(material.young_modulus), 1.0)};
        k["material.poisson_ratio"] = {number(FIELD(material.poisson_ratio), -0.99, 0.49)};
        k["material.density"] = {number(FIELD(material.density), 1e-6)};

        k["design.set"] = {[](const std::string& v, RunConfig& c) { c.design_set = v; }};
        k["design.d_max"] = {number(FIELD(d_max), 1e-6)};
        k["design.p_min"] = {number(FIELD(p_min), -1e6, 0.0)};
        k["design.p_max"] = {number(FIELD(p_max), 0.0, 1e6)};

        k["modal.n_modes"] = {integer(FIELD(optimizer.modal.n_modes), 3, 1000)};
        k["modal.shift"] = {number(FIELD(optimizer.modal.eigen.shift))};
        k["modal.tolerance"] = {number(FIELD(optimizer.modal.eigen.tolerance), 1e-16, 1e-2)};
        k["modal.accept"] = {number(FIELD(optimizer.modal.eigen.accept), 1e-16, 1e-2)};
        k["modal.block_size"] = {integer(FIELD(optimizer.modal.eigen.block_size), 1, 64)};
        k["modal.drive_sector"] = {sector(FIELD(optimizer.drive_sector)), true};
        k["modal.drive_index"] = {integer(FIELD(optimizer.drive_index), 0, 1000), true};
        k["modal.detection_sector"] = {sector(FIELD(optimizer.detection_sector)), true};
        k["modal.detection_index"] = {integer(FIELD(optimizer.detection_index), 0, 1000), true};
        k["modal.track_threshold"] = {number(FIELD(optimizer.track_threshold), 0.0, 1.0)};

        k["problem.drive_window"] = {number(FIELD(optimizer.problem.drive_window), 1e-9, 1.0)};
        k["problem.split_min"] = {number(FIELD(optimizer.problem.split_min))};
        k["problem.split_max"] = {number(FIELD(optimizer.problem.split_max))};
        k["problem.band_fraction"] = {number(FIELD(optimizer.problem.band_fraction), 1e-6, 0.999)};
        k["problem.band_multiples"] = {integer(FIELD(optimizer.problem.band_multiples), 1, 20)};
        k["problem.d_min"] = {number(FIELD(optimizer.problem.d_min), 1e-9)};
        k["problem.w_min"] = {number(FIELD(optimizer.problem.w_min), 1e-9)};
        k["problem.alpha_frequency"] = {number(FIELD(optimizer.problem.alpha_frequency), 1e-12)};
        k["problem.alpha_spurious"] = {number(FIELD(optimizer.problem.alpha_spurious), 1e-12)};
        k["problem.alpha_manufacturing"] = {number(FIELD(optimizer.problem.alpha_manufacturing), 1e-12)};
        k["problem.alpha_objective"] = {number(FIELD(optimizer.problem.alpha_objective), 0.0)};

        k["mma.asymptote_init"] = {number(FIELD(optimizer.mma.asymptote_init), 1e-6, 10.0)};
        k["mma.asymptote_increase"] = {number(FIELD(optimizer.mma.asymptote_increase), 1.0, 10.0)};
        k["mma.asymptote_decrease"] = {number(FIELD(optimizer.mma.asymptote_decrease), 1e-3, 1.0)};
        k["mma.move_limit"] = {number(FIELD(optimizer.mma.move_limit), 1e-6, 1.0)};
        k["mma.c"] = {number(FIELD(optimizer.mma.c), 1e-6)};
        k["mma.kkt_tolerance"] = {number(FIELD(optimizer.mma.kkt_tolerance), 1e-16, 1e-3)};

        k["meshupdate.quality_floor"] = {number(FIELD(optimizer.mesh_update.quality_floor), 0.0, 1.0)};
        k["meshupdate.smooth"] = {boolean(FIELD(optimizer.mesh_update.smooth))};
        k["meshupdate.max_iterations"] = {integer(FIELD(optimizer.mesh_update.max_iterations), 0, 100000)};

        k["run.max_iterations"] = {integer(FIELD(optimizer.max_iterations), 0, 1000000)};
        k["run.output_dir"] = {[](const std::string& v, RunConfig& c) { c.optimizer.output_dir = v; }};
        k["run.snapshot_every"] = {integer(FIELD(optimizer.snapshot_every), 0, 1000000)};
        k["run.seed"] = {integer(FIELD(seed), 0, std::numeric_limits<long>::max())};
        return k;
    }();
    return keys;
}

#undef FIELD

RunConfig parse_tree(const pt::ptree& tree, const fs::path& base_dir) {
    RunConfig c;
    c.optimizer.output_dir = "out";
    std::set<std::string> seen;
    bool demo = false;
    const auto& keys = schema();
    auto apply = [&](const std::string& name, const std::string& raw) {
        const auto it = keys.find(name);
        if (it == keys.end()) throw ConfigError("unknown key '" + name + "'");
        if (!seen.insert(name).second) throw ConfigError("duplicate key '" + name + "'");
        const std::string value = trim(raw);
        try {
            if (name == "mesh.demo")
                demo = to_bool(value);
            else
                it->second.set(value, c);
        } catch (const ConfigError& e) {
            throw ConfigError("key '" + name + "': " + e.what());
        }
    };
    for (const auto& [name, node] : tree) {
        if (node.empty()) {
            apply(name, node.data());
            continue;
        }
        for (const auto& [key, leaf] : node) {
            if (!leaf.empty()) throw ConfigError("key '" + name + "." + key + "': nested sections are not supported");
            apply(name + "." + key, leaf.data());
        }
    }
    for (const auto& [name, key] : keys)
        if (key.required && !seen.count(name)) throw ConfigError("missing required key '" + name + "'");

    const bool has_path = seen.count("mesh.path") > 0;
    if (has_path == demo) throw ConfigError("key 'mesh': give exactly one of 'path' or 'demo = true'");
    bool demo_keys = false;
    for (const auto& name : seen) demo_keys |= name.rfind("demo.", 0) == 0;
    if (demo_keys && !demo) throw ConfigError("key 'demo': demo geometry keys need 'mesh.demo = true'");
    if (has_path && c.mesh_path.is_relative() && !base_dir.empty()) c.mesh_path = base_dir / c.mesh_path;
    if (c.optimizer.output_dir.is_relative() && !base_dir.empty()) c.optimizer.output_dir = base_dir / c.optimizer.output_dir;
    if (has_path && !fs::exists(c.mesh_path)) throw ConfigError("key 'mesh.path': file '" + c.mesh_path.string() + "' does not exist");

    c.demo.material = c.material;
    try {
        c.material.validate();
        if (demo) c.demo.validate();
        c.optimizer.problem.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (c.optimizer.drive_sector == c.optimizer.detection_sector &&
        c.optimizer.drive_index == c.optimizer.detection_index)
        throw ConfigError("key 'modal.detection_index': drive and detection seeds coincide");
    return c;
}

}  // namespace

Mesh RunConfig::build_mesh() const {
    Mesh mesh = mesh_path.empty() ? generate_demo_resonator(demo) : load_mesh(mesh_path);
    mesh.material = material;
    return mesh;
}

DesignModel RunConfig::build_model() const {
    return build_design_model(build_mesh(), design_set, d_max, p_min, p_max);
}

RunConfig parse_config_string(const std::string& text, const fs::path& base_dir) {
    std::istringstream in(text);
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
    }
    return parse_tree(tree, base_dir);
}

RunConfig parse_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_string(buf.str(), path.parent_path());
}

std::string default_config_text() {
    const RunConfig d;
    const DemoSpec& s = d.demo;
    const auto& o = d.optimizer;
    std::ostringstream out;
    out << std::setprecision(12);
    out << "schema = 1\n\n"
        << "; lengths in um, frequencies in Hz, material in SI units\n"
        << "[mesh]\n; path = resonator.mesh\ndemo = true\n\n"
        << "[demo]\n"
        << "mass_half_x = " << s.mass_half_x << "\nmass_half_y = " << s.mass_half_y
        << "\nspring_count = " << s.spring_count << "\nspring_width = " << s.spring_width
        << "\nspring_length = " << s.spring_length << "\nspring_pitch = " << s.spring_pitch
        << "\nspring_offset = " << s.spring_offset << "\nanchor_length = " << s.anchor_length
        << "\nanchor_margin = " << s.anchor_margin << "\nelement_size = " << s.element_size
        << "\nlength_element_size = " << s.length_element_size << "\nmass_element_size = " << s.mass_element_size
        << "\nthickness = " << s.thickness << "\nlayers = " << s.n_layers << "\n\n"
        << "[material]\nyoung_modulus = " << d.material.young_modulus << "\npoisson_ratio = " << d.material.poisson_ratio
        << "\ndensity = " << d.material.density << "\n\n"
        << "[design]\nset = " << d.design_set << "\nd_max = " << d.d_max << "\np_min = " << d.p_min
        << "\np_max = " << d.p_max << "\n\n"
        << "[modal]\nn_modes = " << o.modal.n_modes << "\ndrive_sector = " << to_string(o.drive_sector)
        << "\ndrive_index = " << o.drive_index << "\ndetection_sector = " << to_string(o.detection_sector)
        << "\ndetection_index = " << o.detection_index << "\ntrack_threshold = " << o.track_threshold << "\n\n"
        << "[problem]\ndrive_window = " << o.problem.drive_window << "\nsplit_min = " << o.problem.split_min
        << "\nsplit_max = " << o.problem.split_max << "\nband_fraction = " << o.problem.band_fraction
        << "\nband_multiples = " << o.problem.band_multiples << "\nd_min = " << o.problem.d_min
        << "\nw_min = " << o.problem.w_min << "\nalpha_frequency = " << o.problem.alpha_frequency
        << "\nalpha_spurious = " << o.problem.alpha_spurious
        << "\nalpha_manufacturing = " << o.problem.alpha_manufacturing
        << "\n; 0 selects 0.1 / number of parameters\nalpha_objective = " << o.problem.alpha_objective << "\n\n"
        << "[mma]\nmove_limit = " << o.mma.move_limit << "\nasymptote_init = " << o.mma.asymptote_init
        << "\nasymptote_increase = " << o.mma.asymptote_increase
        << "\nasymptote_decrease = " << o.mma.asymptote_decrease << "\n\n"
        << "[meshupdate]\nquality_floor = " << o.mesh_update.quality_floor << "\n\n"
        << "[run]\nmax_iterations = " << o.max_iterations << "\noutput_dir = out\nsnapshot_every = "
        << o.snapshot_every << "\n";
    return out.str();
}

}  // namespace shapeopt
