#pragma once

#include "shapeopt/mesh.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <memory>
#include <span>
#include <vector>

namespace shapeopt {

struct MeshQualityReport {
    std::vector<double> element_quality;  // min scaled Jacobian over the 4 corners
    double min_quality = 1.0;
    int invalid = 0;  // elements with quality <= 0

    /// Indices of the k lowest-quality elements, worst first.
    std::vector<int> worst(int k) const;
};

MeshQualityReport mesh_quality(const Quad8Mesh2D& mesh, std::span<const Vec2> xy);

struct MeshUpdateOptions {
    double quality_floor = 0.2;
    double young_modulus = 1.0;  // pseudo-material of the 2D solve
    double poisson_ratio = 0.3;
    bool smooth = true;
    int max_iterations = 500;
    double untangle_delta = 0.1;  // det regularization while elements are inverted
};

struct SmoothingStats {
    int iterations = 0;
    bool untangled = false;      // a regularized stage was needed
    std::vector<double> objective;  // per accepted iteration of the final stage
};

/// Moves interior nodes after the boundary has been morphed: a 2D static
/// solve from the initial mesh, distortion minimization relative to the
/// initial element shapes, re-centering of mid-side nodes and copying to
/// all layers.
class MeshUpdater {
public:
    /// `surface` must describe the initial mesh.
    MeshUpdater(const Surface2D& surface, const BoundaryLoops& loops, MeshUpdateOptions options = {});

    /// Displacements of all 2D nodes given those of the exterior corners
    /// (entries of other nodes are ignored). Mid-side entries are zero.
    std::vector<Vec2> interior_static_update(std::span<const Vec2> boundary_displacement) const;

    /// Reposition interior corner nodes to minimize distortion; exterior
    /// corners stay fixed. Throws MeshQualityError if validity cannot be restored.
    std::vector<Vec2> untangle_minimize_distortion(std::vector<Vec2> xy, SmoothingStats* stats = nullptr) const;

    /// Mean target-matrix distortion summed over elements; +inf when an
    /// element is inverted and delta = 0.
    double distortion(std::span<const Vec2> xy, double delta, std::vector<Vec2>* gradient = nullptr) const;

    /// Write 2D corner positions into the mesh: mid-sides re-centered,
    /// xy copied to every layer, 3D Jacobians checked.
    void finalize(Mesh& mesh, std::span<const Vec2> xy) const;

    /// Full pipeline for morphed coordinates from apply_parameters. Exterior
    /// corners keep exactly the morphed positions.
    MeshQualityReport update(Mesh& mesh, std::span<const Vec3> morphed, SmoothingStats* stats = nullptr) const;

    const std::vector<Vec2>& initial_xy() const { return xy0_; }
    const std::vector<bool>& fixed() const { return fixed_; }

private:
    const Surface2D& surface_;
    MeshUpdateOptions options_;
    std::vector<Vec2> xy0_;
    std::vector<bool> fixed_;                   // exterior corners
    std::vector<int> free_corners_;             // interior corner 2D nodes
    std::vector<int> dof_of_;                   // 2D node -> first free dof, -1 otherwise
    std::vector<std::array<Eigen::Matrix2d, 4>> target_inv_;  // inverse initial corner Jacobians
    std::vector<std::array<int, 2>> mid_corners_;  // per 2D node, corner pair of a mid-side node
    Eigen::SparseMatrix<double> K_fb_;          // free x boundary coupling
    std::vector<int> boundary_dofs_;            // 2D node of each boundary column pair
    std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> factor_;
};

}  // namespace shapeopt
