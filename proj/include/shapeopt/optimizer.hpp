#pragma once

#include "shapeopt/manufacturability.hpp"
#include "shapeopt/meshupdate.hpp"
#include "shapeopt/mma.hpp"
#include "shapeopt/modal.hpp"
#include "shapeopt/problem.hpp"
#include "shapeopt/sensitivity.hpp"
#include "shapeopt/shapeparam.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace shapeopt {

/// Everything derived once from the initial mesh.
struct DesignModel {
    Mesh initial;
    Surface2D surface;
    BoundaryLoops loops;  // every exterior loop, symmetry segments marked
    DesignParametrization param;
};

/// Parameters go on the exterior corners inside `design_set` (all nodes when empty).
DesignModel build_design_model(Mesh mesh, const std::string& design_set, double d_max, double p_min = -9.0,
                               double p_max = 9.0);

struct OptimizerOptions {
    ProblemSpec problem;
    ModalOptions modal;
    MeshUpdateOptions mesh_update;
    MmaOptions mma;
    Sector drive_sector = Sector::AS;
    int drive_index = 0;
    Sector detection_sector = Sector::SS;
    int detection_index = 0;
    double track_threshold = 0.5;
    int max_iterations = 500;  // MMA steps before giving up
    std::filesystem::path output_dir;  // empty: no files
    int snapshot_every = 0;            // VTK snapshot cadence, 0 = final only
    bool resume = false;               // continue from output_dir/checkpoint.txt
};

enum class RunStatus { converged, iteration_limit };

struct IterationRecord {
    int iteration = 0;
    double L = 0.0;
    double objective = 0.0;
    double max_violation = 0.0;
    int violated = 0;
    double drive_hz = 0.0;
    double split_hz = 0.0;
    double min_quality = 1.0;  // 2D scaled Jacobian of the evaluated mesh
    std::vector<std::string> warnings;
};

struct RunReport {
    RunStatus status = RunStatus::iteration_limit;
    int iterations = 0;  // index of the last evaluated design
    double f_drive0 = 0.0;
    Eigen::VectorXd p;
    std::vector<IterationRecord> history;  // evaluated in this call
    EvaluatedProblem problem;              // at the last design
    ModalResult modal;
    ConstraintReport constraints;
};

/// Modal analysis, tracking, constraint evaluation and MMA updates until
/// every constraint holds or the iteration cap is hit.
class Optimizer {
public:
    Optimizer(DesignModel model, OptimizerOptions options);
    Optimizer(const Optimizer&) = delete;
    Optimizer& operator=(const Optimizer&) = delete;

    RunReport run();

    const Mesh& mesh() const { return mesh_; }
    const DesignModel& model() const { return model_; }

    /// One line per pipeline stage.
    std::function<void(const std::string&)> log;
    /// Called after every accepted mesh update with the new iteration index.
    std::function<void(int, const Mesh&, const MeshQualityReport&)> on_update;

private:
    struct Evaluation;
    Evaluation evaluate(int k, const Eigen::VectorXd& p, bool gradients, ModalResult modal, double f_drive0) const;
    ModalResult solve_modal(int k) const;
    void apply(const Eigen::VectorXd& p, MeshQualityReport* report);
    void note(int k, const std::string& stage, const std::string& detail) const;

    DesignModel model_;
    OptimizerOptions options_;
    Mesh mesh_;
    std::unique_ptr<MeshUpdater> updater_;
    ParameterAdjacency adjacency_;
};

/// Restart state written after each evaluation.
struct Checkpoint {
    int iteration = 0;
    double f_drive0 = 0.0;
    Eigen::VectorXd p;
    std::vector<std::vector<int>> tracked;  // per sector
    int next_id = 0;
    int drive_id = -1;
    int detection_id = -1;
    MmaState mma;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace shapeopt
