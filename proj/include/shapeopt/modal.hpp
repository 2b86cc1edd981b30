#pragma once

#include "shapeopt/fem.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace shapeopt {

struct EigenOptions {
    double shift = 0.0;        // sigma; a negative fallback is tried if K - sigma M is not positive definite
    double tolerance = 1e-10;  // target ||K phi - lambda M phi|| / ||K phi||
    double accept = 1e-8;      // looser bound accepted once the Krylov space has converged
    int block_size = 3;
    int dense_threshold = 200;  // systems up to this size use a dense solver
    std::uint64_t seed = 0x5eedULL;
};

struct EigenSolution {
    Eigen::VectorXd eigenvalues;  // lambda = omega^2, ascending
    Eigen::MatrixXd vectors;      // mass-normalized columns
    std::vector<double> residuals;
    double shift = 0.0;
    int basis_size = 0;
};

/// Lowest `m` eigenpairs of K phi = lambda M phi. Vectors are normalized so
/// phi^T M phi = 1 and the entry of largest magnitude is positive.
EigenSolution solve_modes(const SparseMatrix& K, const SparseMatrix& M, int m, const EigenOptions& options = {});

/// Dense generalized solver; reference for small systems.
EigenSolution solve_modes_dense(const SparseMatrix& K, const SparseMatrix& M, int m);

/// ||K phi - lambda M phi|| relative to max(||K phi||, |lambda_floor| ||M phi||).
/// The floor (the solver shift) resolves rigid modes, where K phi vanishes.
double eigen_residual(const SparseMatrix& K, const SparseMatrix& M, const Eigen::VectorXd& phi, double lambda,
                      double lambda_floor = 0.0);

double frequency_hz(double eigenvalue);

/// All modes computed in one symmetry sector.
struct SectorSolution {
    Sector sector = Sector::SS;
    DofMap dofs;
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd vectors;   // free dofs x modes
    Eigen::MatrixXd weighted;  // R * vectors with M = R^T R; empty when not requested
    std::vector<double> residuals;
    std::vector<int> tracked;  // identity per sector mode, filled by ModeTracker
};

struct Mode {
    double frequency = 0.0;  // Hz
    double omega = 0.0;      // rad/s
    double eigenvalue = 0.0;
    Sector sector = Sector::SS;
    int sector_index = 0;  // column within its sector solution
    int tracked_id = -1;
};

struct ModalResult {
    std::vector<Mode> modes;                // merged, ascending
    std::vector<SectorSolution> sectors;    // indexed by static_cast<int>(Sector)
    int drive = -1;                         // merged index
    int detection = -1;
    std::vector<std::string> warnings;

    const SectorSolution& sector_of(int mode) const { return sectors[static_cast<int>(modes[mode].sector)]; }
    Eigen::VectorXd free_vector(int mode) const;
    /// Eigenvector over all 3 * nodes dofs, zeros at constrained dofs.
    Eigen::VectorXd full_vector(int mode) const;
    int find(Sector sector, int sector_index) const;  // merged index or -1
    int find_tracked(int id) const;                   // merged index or -1
};

/// Merge four sector solutions into the `n_modes` lowest modes, sorted by
/// (frequency, sector label). Supplied order does not matter.
ModalResult merge_sectors(std::vector<SectorSolution> sectors, int n_modes);

struct ModalOptions {
    int n_modes = 36;
    EigenOptions eigen;
    bool weighted = true;  // compute R * phi for mode tracking
};

/// Assemble and solve all four sectors, extending any sector whose modes
/// might still reach below the merged cutoff.
ModalResult solve_sectors(const Mesh& mesh, const ModalOptions& options);

/// MAC(i, j) = (R phi_i)^T (R_prev phi_prev_j), rows current, columns previous.
Eigen::MatrixXd mac(const Eigen::MatrixXd& current_weighted, const Eigen::MatrixXd& previous_weighted);

struct Tracking {
    std::vector<int> current_of_previous;  // -1 when unassigned
    std::vector<double> value;             // |MAC| of each assignment
    std::vector<int> ambiguous;            // previous modes assigned below the threshold
};

/// Greedy unique assignment in descending |MAC|.
Tracking track_modes(const Eigen::MatrixXd& mac_matrix, double threshold = 0.5);

/// Keeps mode identities across design iterations, sector by sector.
class ModeTracker {
public:
    /// Assign initial ids (merged order first) and locate drive/detection.
    void initialize(ModalResult& result, Sector drive_sector, int drive_index, Sector detection_sector,
                    int detection_index);

    /// Track against the previous result; returns ambiguity warnings.
    std::vector<std::string> update(ModalResult& result, double threshold = 0.5);

    /// Restore ids saved with a checkpoint for a result recomputed from the same design.
    void restore(ModalResult& result, const std::vector<std::vector<int>>& ids, int next_id, int drive_id,
                 int detection_id);

    int drive_id() const { return drive_id_; }
    int detection_id() const { return detection_id_; }
    int next_id() const { return next_id_; }
    bool initialized() const { return initialized_; }

private:
    void locate(ModalResult& result) const;
    void remember(const ModalResult& result);

    bool initialized_ = false;
    int next_id_ = 0;
    int drive_id_ = -1;
    int detection_id_ = -1;
    std::vector<Eigen::MatrixXd> previous_weighted_;
    std::vector<std::vector<int>> previous_ids_;
};

/// Spectrum CSV: iteration, mode_index, sector, frequency_hz, tracked_id,
/// is_drive, is_detection, in_band_n.
void write_spectrum_header(std::ostream& out);
void write_spectrum_rows(std::ostream& out, int iteration, const ModalResult& result, double band_fraction = 0.1,
                         int band_multiples = 3);

}  // namespace shapeopt
