// Command-line front end: generate | modes | constraints | check-gradients | optimize.

#include "shapeopt/config.hpp"
#include "shapeopt/error.hpp"
#include "shapeopt/mesh_io.hpp"
#include "shapeopt/modal.hpp"
#include "shapeopt/optimizer.hpp"
#include "shapeopt/parallel.hpp"
#include "shapeopt/sensitivity.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

namespace fs = std::filesystem;
using namespace shapeopt;

namespace {

struct Flags {
    std::string config;
    std::string out;
    int threads = 0;
    int snapshot_every = -1;
    int max_iters = -1;
    std::string params;
    bool resume = false;
    int pairs = 20;
    double h = 1e-4;
    double h_constraints = 1e-6;
};

const auto t_start = std::chrono::steady_clock::now();

void log_line(const std::string& stage, const std::string& msg) {
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    std::fprintf(stderr, "[%9.2fs] %-12s %s\n", t, stage.c_str(), msg.c_str());
}

RunConfig load(const Flags& f) {
    RunConfig c = parse_config(f.config);
    if (!f.out.empty()) c.optimizer.output_dir = f.out;
    if (f.snapshot_every >= 0) c.optimizer.snapshot_every = f.snapshot_every;
    if (f.max_iters >= 0) c.optimizer.max_iterations = f.max_iters;
    fs::create_directories(c.optimizer.output_dir);
    return c;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    return out;
}

// Mesh for a given parameter vector, interior nodes updated.
Mesh design_mesh(const RunConfig& c, const DesignModel& model, const std::string& params) {
    if (params.empty()) return model.initial;
    const Eigen::VectorXd p = load_parameters(params);
    if (p.size() != model.param.size()) throw Error("parameter file does not match the design");
    check_bounds(model.param, p);
    Mesh mesh = model.initial;
    MeshUpdater updater(model.surface, model.loops, c.optimizer.mesh_update);
    updater.update(mesh, apply_parameters(model.initial.x0, model.param, p));
    return mesh;
}

int cmd_generate(const Flags& f) {
    const RunConfig c = load(f);
    if (!c.mesh_path.empty()) throw ConfigError("generate needs 'mesh.demo = true'");
    const Mesh mesh = c.build_mesh();
    const fs::path out = c.optimizer.output_dir;
    save_mesh(mesh, out / "demo.mesh");
    export_vtk(mesh, {}, out / "demo.vtk");
    log_line("generate", std::to_string(mesh.node_count()) + " nodes, " + std::to_string(mesh.element_count()) +
                             " elements -> " + (out / "demo.mesh").string());
    return 0;
}

int cmd_modes(const Flags& f) {
    const RunConfig c = load(f);
    const DesignModel model = c.build_model();
    const Mesh mesh = design_mesh(c, model, f.params);
    ModalResult modal = solve_sectors(mesh, c.optimizer.modal);
    for (const auto& w : modal.warnings) log_line("modal", w);
    ModeTracker tracker;
    tracker.initialize(modal, c.optimizer.drive_sector, c.optimizer.drive_index, c.optimizer.detection_sector,
                       c.optimizer.detection_index);
    const fs::path out = c.optimizer.output_dir;
    auto csv = open_out(out / "spectrum.csv");
    write_spectrum_header(csv);
    write_spectrum_rows(csv, 0, modal, c.optimizer.problem.band_fraction, c.optimizer.problem.band_multiples);

    std::vector<VtkField> fields;
    for (std::size_t i = 0; i < modal.modes.size(); ++i) {
        const Eigen::VectorXd u = modal.full_vector(static_cast<int>(i));
        char name[32];
        std::snprintf(name, sizeof name, "mode_%02zu", i);
        fields.push_back({name, 3, std::vector<double>(u.data(), u.data() + u.size())});
    }
    export_vtk(mesh, fields, out / "modes.vtk");
    char msg[160];
    std::snprintf(msg, sizeof msg, "%zu modes, drive %.6g Hz, detection %.6g Hz", modal.modes.size(),
                  modal.modes[modal.drive].frequency, modal.modes[modal.detection].frequency);
    log_line("modes", msg);
    return 0;
}

int cmd_constraints(const Flags& f) {
    const RunConfig c = load(f);
    const DesignModel model = c.build_model();
    const Mesh mesh = design_mesh(c, model, f.params);
    std::vector<Vec2> xy(model.surface.size());
    for (std::size_t i = 0; i < xy.size(); ++i)
        xy[i] = mesh.nodes[model.surface.column_nodes[i].back()].x.head<2>();
    const ConstraintReport report = evaluate_constraints(model.loops, xy, model.param);
    auto csv = open_out(fs::path(c.optimizer.output_dir) / "constraints.csv");
    write_constraints_header(csv);
    write_constraints_rows(csv, 0, report, {c.optimizer.problem.d_min, c.optimizer.problem.w_min, 0.5});
    log_line("constraints", std::to_string(report.size()) + " centers traced");
    return 0;
}

int cmd_check_gradients(const Flags& f) {
    const RunConfig c = load(f);
    const DesignModel model = c.build_model();
    Eigen::VectorXd p = Eigen::VectorXd::Zero(model.param.size());
    if (!f.params.empty()) p = load_parameters(f.params);
    if (p.size() != model.param.size()) throw Error("parameter file does not match the design");

    std::mt19937_64 rng(c.seed);
    std::uniform_int_distribution<int> mode(0, c.optimizer.modal.n_modes - 1), param(0, model.param.size() - 1);
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < f.pairs; ++i) pairs.emplace_back(mode(rng), param(rng));
    const FdReport freq = check_frequency_gradients(model.initial, model.param, p, pairs, f.h, c.optimizer.modal);
    std::vector<int> columns(model.param.size());
    std::iota(columns.begin(), columns.end(), 0);
    const FdReport geo = check_constraint_gradients(model.surface, model.loops, model.param, p, columns,
                                                    f.h_constraints);

    auto csv = open_out(fs::path(c.optimizer.output_dir) / "gradcheck.csv");
    freq.write_csv(csv);
    geo.write_csv(csv, false);
    char msg[160];
    std::snprintf(msg, sizeof msg, "frequency: %zu samples, max rel error %.3g; constraints: %zu samples, max %.3g",
                  freq.samples.size(), freq.max_rel_error(), geo.samples.size(), geo.max_rel_error());
    log_line("gradients", msg);
    return 0;
}

int cmd_optimize(const Flags& f) {
    RunConfig c = load(f);
    c.optimizer.resume = f.resume;
    Optimizer opt(c.build_model(), c.optimizer);
    opt.log = [](const std::string& line) { log_line("optimize", line); };
    const RunReport report = opt.run();
    const bool ok = report.status == RunStatus::converged;
    log_line("optimize", std::string(ok ? "converged" : "not converged") + " after " +
                             std::to_string(report.iterations) + " iterations");
    return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Eigenfrequency shape optimization of extruded resonators"};
    app.require_subcommand(1);
    app.fallthrough();
    Flags f;
    app.add_option("--config", f.config, "Run configuration file")->required()->check(CLI::ExistingFile);
    app.add_option("--out", f.out, "Output directory (overrides run.output_dir)");
    app.add_option("--threads", f.threads, "Worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
    app.add_option("--snapshot-every", f.snapshot_every, "VTK snapshot cadence in iterations");
    app.add_option("--max-iters", f.max_iters, "Iteration cap (overrides run.max_iterations)");

    auto* gen = app.add_subcommand("generate", "Write the demo resonator mesh");
    auto* modes = app.add_subcommand("modes", "Modal analysis: spectrum.csv and modes.vtk");
    modes->add_option("--params", f.params, "Parameter file to morph the design first");
    auto* cons = app.add_subcommand("constraints", "Width and gap constraints: constraints.csv");
    cons->add_option("--params", f.params, "Parameter file to morph the design first");
    auto* grad = app.add_subcommand("check-gradients", "Analytic gradients against central differences");
    grad->add_option("--params", f.params, "Parameter file for the evaluation point");
    grad->add_option("--pairs", f.pairs, "Random (mode, parameter) pairs")->check(CLI::PositiveNumber);
    grad->add_option("--step", f.h, "Frequency finite-difference step");
    grad->add_option("--step-constraints", f.h_constraints, "Constraint finite-difference step");
    auto* opt = app.add_subcommand("optimize", "Run the optimization loop");
    opt->add_flag("--resume", f.resume, "Continue from the checkpoint in the output directory");

    CLI11_PARSE(app, argc, argv);
    try {
        if (f.threads > 0) set_thread_count(f.threads);
        if (gen->parsed()) return cmd_generate(f);
        if (modes->parsed()) return cmd_modes(f);
        if (cons->parsed()) return cmd_constraints(f);
        if (grad->parsed()) return cmd_check_gradients(f);
        if (opt->parsed()) return cmd_optimize(f);
    } catch (const std::exception& e) {
        log_line("error", e.what());
        return 1;
    }
    return 1;
}
