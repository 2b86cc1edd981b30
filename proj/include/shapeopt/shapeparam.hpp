#pragma once

#include "shapeopt/mesh.hpp"

#include <Eigen/SparseCore>

#include <filesystem>
#include <span>
#include <vector>

namespace shapeopt {

/// Vertex-morphing parametrization: parameter j shifts the boundary around
/// its center node along the center's frozen normal, weighted by a hat in
/// arc length. dx/dp never changes after construction.
struct DesignParametrization {
    struct Entry {
        int node2d = 0;
        Vec2 coeff = Vec2::Zero();  // um per unit parameter
    };

    std::vector<int> center_node;  // 2D corner node of each parameter
    std::vector<Vec2> direction;   // frozen unit normal of the center
    std::vector<std::vector<Entry>> columns;  // per parameter, sorted by 2D node; corners and boundary mid-sides
    Eigen::SparseMatrix<double> dx_dp;        // (3 * nodes) x n_p, row 3*node+dir
    double d_max = 15.0;
    double p_min = -9.0;
    double p_max = 9.0;

    int size() const { return static_cast<int>(center_node.size()); }
};

/// One parameter per exterior corner node of `loops` lying in `design_region`
/// (3D node ids). Nodes on symmetry planes neither carry parameters nor move.
DesignParametrization build_parametrization(const Surface2D& surface, const BoundaryLoops& loops,
                                            std::span<const int> design_region, double d_max = 15.0);

/// Throws if any |p_j| exceeds the bounds, naming the parameter.
void check_bounds(const DesignParametrization& param, const Eigen::VectorXd& p);

/// x = x0 + (dx/dp) p for every 3D node.
std::vector<Vec3> apply_parameters(std::span<const Vec3> x0, const DesignParametrization& param,
                                   const Eigen::VectorXd& p);

/// 2D displacement of every 2D node (zero off the boundary).
std::vector<Vec2> boundary_displacements(const Surface2D& surface, const DesignParametrization& param,
                                         const Eigen::VectorXd& p);

// Parameter checkpoint: `SHAPEOPT-PARAMS v1`, n_p, then one value per line.
void save_parameters(const Eigen::VectorXd& p, const std::filesystem::path& path);
Eigen::VectorXd load_parameters(const std::filesystem::path& path);

}  // namespace shapeopt
