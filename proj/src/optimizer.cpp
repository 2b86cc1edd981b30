#include "shapeopt/optimizer.hpp"

#include "shapeopt/error.hpp"
#include "shapeopt/mesh_io.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>

namespace shapeopt {

namespace fs = std::filesystem;

DesignModel build_design_model(Mesh mesh, const std::string& design_set, double d_max, double p_min, double p_max) {
    DesignModel m;
    m.surface = project_top_layer(mesh);
    m.loops = extract_boundary_loops(m.surface, {});
    mark_symmetry(m.loops, m.surface, mesh);
    compute_normals(m.loops, m.surface.mesh.xy);
    std::vector<int> region;
    if (design_set.empty()) {
        region.resize(mesh.node_count());
        std::iota(region.begin(), region.end(), 0);
    } else {
        if (!mesh.has_set(design_set)) throw ConfigError("mesh has no node set '" + design_set + "'");
        region = mesh.set(design_set);
    }
    m.param = build_parametrization(m.surface, m.loops, region, d_max);
    if (!(p_min < 0.0 && p_max > 0.0)) throw ConfigError("parameter bounds must bracket zero");
    m.param.p_min = p_min;
    m.param.p_max = p_max;
    m.initial = std::move(mesh);
    return m;
}

namespace {

std::vector<Vec2> current_xy(const Mesh& mesh, const Surface2D& surface) {
    std::vector<Vec2> xy(surface.size());
    for (std::size_t i = 0; i < xy.size(); ++i) xy[i] = mesh.nodes[surface.column_nodes[i].back()].x.head<2>();
    return xy;
}

// Keep only the header and rows of iterations before `k`.
void truncate_csv(const fs::path& path, int k) {
    std::ifstream in(path);
    if (!in) return;
    std::string line, kept;
    bool header = true;
    while (std::getline(in, line)) {
        if (header || std::stoi(line.substr(0, line.find(','))) < k) kept += line + '\n';
        header = false;
    }
    in.close();
    std::ofstream(path, std::ios::trunc) << kept;
}

std::ofstream open_csv(const fs::path& path, bool append, void (*header)(std::ostream&)) {
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    if (!append) header(out);
    return out;
}

void convergence_header(std::ostream& out) {
    out << "iteration,L,objective,max_violation,n_violated,drive_hz,split_hz\n";
}

void write_snapshot(const Mesh& mesh, const fs::path& path) {
    VtkField disp{"displacement", 3, {}};
    disp.data.reserve(3 * mesh.node_count());
    for (std::size_t i = 0; i < mesh.node_count(); ++i)
        for (int d = 0; d < 3; ++d) disp.data.push_back(mesh.nodes[i].x[d] - mesh.x0[i][d]);
    export_vtk(mesh, {disp}, path);
}

std::string iteration_name(const char* prefix, int k, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%04d%s", prefix, k, ext);
    return buf;
}

}  // namespace

struct Optimizer::Evaluation {
    ModalResult modal;
    ConstraintReport constraints;
    EvaluatedProblem problem;
};

Optimizer::Optimizer(DesignModel model, OptimizerOptions options)
    : model_(std::move(model)), options_(std::move(options)), mesh_(model_.initial) {
    options_.problem.validate();
    if (options_.max_iterations < 0) throw ConfigError("max_iterations must not be negative");
    if (options_.snapshot_every < 0) throw ConfigError("snapshot_every must not be negative");
    if (model_.param.size() == 0) throw ConfigError("design region carries no parameters");
    options_.modal.weighted = true;
    updater_ = std::make_unique<MeshUpdater>(model_.surface, model_.loops, options_.mesh_update);
    adjacency_ = ParameterAdjacency(mesh_, model_.param);
}

void Optimizer::note(int k, const std::string& stage, const std::string& detail) const {
    if (log) log("iteration " + std::to_string(k) + " " + stage + ": " + detail);
}

ModalResult Optimizer::solve_modal(int k) const {
    ModalResult modal = solve_sectors(mesh_, options_.modal);
    for (const auto& w : modal.warnings) note(k, "modal", w);
    return modal;
}

Optimizer::Evaluation Optimizer::evaluate(int k, const Eigen::VectorXd& p, bool gradients, ModalResult modal,
                                          double f_drive0) const {
    Evaluation ev;
    const auto xy = current_xy(mesh_, model_.surface);
    ev.constraints = evaluate_constraints(model_.loops, xy, model_.param);
    const double unbounded = bounding_diagonal(model_.surface.mesh.xy);
    Eigen::MatrixXd grad;
    if (gradients) {
        std::vector<int> all(modal.modes.size());
        std::iota(all.begin(), all.end(), 0);
        grad = frequency_sensitivities(mesh_, adjacency_, modal, all);
        note(k, "sensitivities", std::to_string(all.size()) + " modes x " + std::to_string(p.size()) + " parameters");
    }
    ev.problem = evaluate_problem(options_.problem, f_drive0, p, modal, ev.constraints, unbounded, grad);
    ev.modal = std::move(modal);
    return ev;
}

void Optimizer::apply(const Eigen::VectorXd& p, MeshQualityReport* report) {
    const auto morphed = apply_parameters(model_.initial.x0, model_.param, p);
    Mesh next = mesh_;
    SmoothingStats stats;
    *report = updater_->update(next, morphed, &stats);
    mesh_ = std::move(next);
}

RunReport Optimizer::run() {
    const fs::path out = options_.output_dir;
    const bool files = !out.empty();
    const int n_p = model_.param.size();
    if (files) fs::create_directories(out / "params");

    ModeTracker tracker;
    Mma mma(Eigen::VectorXd::Constant(n_p, model_.param.p_min), Eigen::VectorXd::Constant(n_p, model_.param.p_max),
            options_.mma);
    RunReport report;
    Eigen::VectorXd p = Eigen::VectorXd::Zero(n_p);
    int k = 0;
    std::optional<Checkpoint> resume;
    mesh_ = model_.initial;
    MeshQualityReport quality = mesh_quality(model_.surface.mesh, model_.surface.mesh.xy);

    if (options_.resume) {
        if (!files) throw ConfigError("resume needs an output directory");
        resume = load_checkpoint(out / "checkpoint.txt");
        if (resume->p.size() != n_p) throw Error("checkpoint parameter count does not match the design");
        k = resume->iteration;
        p = resume->p;
        report.f_drive0 = resume->f_drive0;
        mma.restore(resume->mma);
        if (k > 0) apply(p, &quality);
        for (const char* name : {"convergence.csv", "spectrum.csv", "constraints.csv"}) truncate_csv(out / name, k);
        note(k, "restart", "resuming from checkpoint");
    }

    std::ofstream conv, spectrum, constraints;
    if (files) {
        const bool append = resume.has_value();
        conv = open_csv(out / "convergence.csv", append, convergence_header);
        spectrum = open_csv(out / "spectrum.csv", append, write_spectrum_header);
        constraints = open_csv(out / "constraints.csv", append, write_constraints_header);
        conv << std::setprecision(12);
    }
    const ManufacturabilityOptions manuf{options_.problem.d_min, options_.problem.w_min, 0.5};
    const auto objective = [&](const Eigen::VectorXd& x) {
        return options_.problem.objective_weight(n_p) * x.squaredNorm();
    };

    for (;; ++k) {
        IterationRecord rec;
        rec.iteration = k;
        rec.min_quality = quality.min_quality;

        ModalResult modal = solve_modal(k);
        if (resume && k == resume->iteration) {
            tracker.restore(modal, resume->tracked, resume->next_id, resume->drive_id, resume->detection_id);
        } else if (k == 0) {
            tracker.initialize(modal, options_.drive_sector, options_.drive_index, options_.detection_sector,
                               options_.detection_index);
            report.f_drive0 = modal.modes[modal.drive].frequency;
        } else {
            rec.warnings = tracker.update(modal, options_.track_threshold);
            for (const auto& w : rec.warnings) note(k, "tracking", w);
        }

        if (files) {
            Checkpoint cp;
            cp.iteration = k;
            cp.f_drive0 = report.f_drive0;
            cp.p = p;
            for (const auto& sec : modal.sectors) cp.tracked.push_back(sec.tracked);
            cp.next_id = tracker.next_id();
            cp.drive_id = tracker.drive_id();
            cp.detection_id = tracker.detection_id();
            cp.mma = mma.state();
            save_checkpoint(cp, out / "checkpoint.txt");
            save_parameters(p, out / "params" / iteration_name("iter_", k, ".txt"));
        }

        const bool capped = k >= options_.max_iterations;
        // Gradients are only needed when a step follows, and feasibility needs values alone.
        Evaluation ev = evaluate(k, p, false, std::move(modal), report.f_drive0);
        const bool feasible = ev.problem.feasible();
        if (!feasible && !capped) ev = evaluate(k, p, true, std::move(ev.modal), report.f_drive0);

        rec.L = aggregate_L(ev.problem);
        rec.objective = ev.problem.objective;
        rec.max_violation = ev.problem.max_violation();
        rec.violated = ev.problem.violated();
        rec.drive_hz = ev.problem.drive_hz;
        rec.split_hz = ev.problem.split_hz;
        {
            std::ostringstream msg;
            msg << std::setprecision(8) << "L " << rec.L << ", drive " << rec.drive_hz << " Hz, split " << rec.split_hz
                << " Hz, " << rec.violated << " violated, max violation " << rec.max_violation;
            note(k, "constraints", msg.str());
        }
        if (files) {
            conv << k << ',' << rec.L << ',' << rec.objective << ',' << rec.max_violation << ',' << rec.violated
                 << ',' << rec.drive_hz << ',' << rec.split_hz << '\n'
                 << std::flush;
            write_spectrum_rows(spectrum, k, ev.modal, options_.problem.band_fraction,
                                options_.problem.band_multiples);
            spectrum.flush();
            write_constraints_rows(constraints, k, ev.constraints, manuf);
            constraints.flush();
            if (options_.snapshot_every > 0 && k % options_.snapshot_every == 0)
                write_snapshot(mesh_, out / iteration_name("snapshot_", k, ".vtk"));
        }
        report.history.push_back(rec);
        report.iterations = k;
        report.p = p;
        report.problem = ev.problem;
        report.modal = std::move(ev.modal);
        report.constraints = std::move(ev.constraints);

        if (feasible) {
            report.status = RunStatus::converged;
            note(k, "done", "all constraints satisfied");
            break;
        }
        if (capped) {
            report.status = RunStatus::iteration_limit;
            note(k, "done", "iteration limit reached");
            break;
        }

        p = mma.step(p, report.problem.weighted_objective(), report.problem.weighted_objective_grad(),
                     report.problem.values(), report.problem.gradients(), objective);
        {
            std::ostringstream msg;
            msg << std::setprecision(4) << "|dp| " << (p - report.p).norm() << ", subproblem residual "
                << mma.last_residual();
            note(k, "mma", msg.str());
        }
        try {
            apply(p, &quality);
        } catch (const MeshQualityError&) {
            if (files) {
                write_snapshot(mesh_, out / "abort.vtk");
                save_mesh(mesh_, out / "abort.mesh");
                save_parameters(p, out / "params" / "rejected.txt");
            }
            note(k, "meshupdate", "mesh quality could not be restored; last valid mesh saved");
            throw;
        }
        {
            std::ostringstream msg;
            msg << std::setprecision(4) << "min scaled Jacobian " << quality.min_quality;
            note(k + 1, "meshupdate", msg.str());
        }
        if (on_update) on_update(k + 1, mesh_, quality);
    }

    if (files) {
        save_mesh(mesh_, out / "final.mesh");
        write_snapshot(mesh_, out / "final.vtk");
        save_parameters(report.p, out / "params" / "final.txt");
    }
    return report;
}

void save_checkpoint(const Checkpoint& cp, const fs::path& path) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
        out << "SHAPEOPT-CHECKPOINT v1\n" << std::setprecision(17);
        out << "iteration " << cp.iteration << "\nf_drive0 " << cp.f_drive0 << '\n';
        out << "tracker " << cp.next_id << ' ' << cp.drive_id << ' ' << cp.detection_id << '\n';
        for (const auto& ids : cp.tracked) {
            out << "sector " << ids.size();
            for (int id : ids) out << ' ' << id;
            out << '\n';
        }
        out << "params " << cp.p.size();
        for (double v : cp.p) out << ' ' << v;
        out << '\n';
        save_mma_state(out, cp.mma);
        if (!out) throw Error("failed writing '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
    Checkpoint cp;
    std::string magic, version, tag;
    auto expect = [&](const char* want) {
        if (!(in >> tag) || tag != want) throw ParseError(std::string("checkpoint: expected '") + want + "'");
    };
    if (!(in >> magic >> version) || magic != "SHAPEOPT-CHECKPOINT" || version != "v1")
        throw ParseError("not a checkpoint file", 1);
    expect("iteration");
    in >> cp.iteration;
    expect("f_drive0");
    in >> cp.f_drive0;
    expect("tracker");
    in >> cp.next_id >> cp.drive_id >> cp.detection_id;
    for (int s = 0; s < 4; ++s) {
        expect("sector");
        std::size_t n = 0;
        in >> n;
        std::vector<int> ids(n);
        for (auto& id : ids) in >> id;
        cp.tracked.push_back(std::move(ids));
    }
    expect("params");
    long n = 0;
    in >> n;
    if (!in || n < 0) throw ParseError("checkpoint: bad parameter count");
    cp.p.resize(n);
    for (long i = 0; i < n; ++i) in >> cp.p[i];
    if (!in) throw ParseError("checkpoint: truncated");
    cp.mma = load_mma_state(in);
    return cp;
}

}  // namespace shapeopt
