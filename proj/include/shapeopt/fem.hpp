#pragma once

#include "shapeopt/mesh.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <array>
#include <span>
#include <string>
#include <vector>

namespace shapeopt {

using Mat3 = Eigen::Matrix3d;
using Mat60 = Eigen::Matrix<double, 60, 60>;
using ElementCoords = Eigen::Matrix<double, 3, 20>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

// Element matrices come out in SI units for coordinates given in
// micrometers: K in N/m, M in kg.
inline constexpr double kStiffnessScale = 1e-6;
inline constexpr double kMassScale = 1e-18;

struct ShapeHex20 {
    Eigen::Matrix<double, 20, 1> N;
    Eigen::Matrix<double, 3, 20> dN;  // derivatives with respect to (xi, eta, zeta)
};

/// Serendipity basis in the node ordering documented in mesh.hpp.
ShapeHex20 shape_hex20(const Vec3& xi);

/// Reference coordinates of the 20 element nodes.
const std::array<Vec3, 20>& hex20_reference_nodes();

struct QuadratureRule {
    std::vector<Vec3> points;
    std::vector<double> weights;
    std::vector<ShapeHex20> shapes;  // basis evaluated at each point

    std::size_t size() const { return points.size(); }

    /// 3x3x3 Gauss-Legendre rule.
    static const QuadratureRule& gauss27();
};

/// Isotropic elasticity in Voigt order (xx, yy, zz, xy, yz, xz) with
/// engineering shear strains.
Eigen::Matrix<double, 6, 6> elasticity_matrix(const Material& material);

/// Geometry at one quadrature point. J(i,j) = dx_i/dxi_j, B = J^{-T} dN.
struct PointGeometry {
    Mat3 J;
    double detJ = 0.0;
    Eigen::Matrix<double, 3, 20> B;
};

/// Throws InvalidElementError carrying `element` when det J <= 0.
PointGeometry point_geometry(const ElementCoords& x, const ShapeHex20& shape, int element = -1);

/// 6x60 strain-displacement matrix from physical gradients (dof 3a+i).
Eigen::Matrix<double, 6, 60> strain_matrix(const Eigen::Matrix<double, 3, 20>& B);

struct ElementMatrices {
    Mat60 K;
    Mat60 M;
};

ElementMatrices element_matrices(const ElementCoords& x, const Material& material,
                                 const QuadratureRule& rule = QuadratureRule::gauss27(), int element = -1);

/// Smallest det J over the rule's points (may be negative; never throws).
double min_det_jacobian(const ElementCoords& x, const QuadratureRule& rule = QuadratureRule::gauss27());

/// Throws InvalidElementError for the first element with det J <= 0.
void check_jacobians(const Mesh& mesh);

// Boundary-condition sectors of the quarter model. The first letter is the
// parity about the x = 0 plane, the second about the y = 0 plane.
enum class Sector { SS, SA, AS, AA };
enum class Plane { x, y };
enum class Parity { symmetric, antisymmetric };

inline constexpr std::array<Sector, 4> kSectors = {Sector::SS, Sector::SA, Sector::AS, Sector::AA};

std::string to_string(Sector s);
Sector parse_sector(const std::string& name);
Parity parity(Sector s, Plane plane);

struct DofConstraint {
    int node = 0;
    int dir = 0;  // 0 x, 1 y, 2 z
};

/// Symmetric about a plane fixes the normal displacement on its face;
/// antisymmetric fixes both in-face displacements.
std::vector<DofConstraint> symmetry_bc(const Mesh& mesh, Plane plane, Parity parity);

/// All three displacements of every anchor_base node.
std::vector<DofConstraint> anchor_bc(const Mesh& mesh);

/// Numbering of free degrees of freedom; global dof of (node, dir) is 3*node+dir.
class DofMap {
public:
    DofMap() = default;
    DofMap(int node_count, std::span<const DofConstraint> fixed);

    int node_count() const { return node_count_; }
    int free_count() const { return static_cast<int>(free_to_global_.size()); }
    int fixed_count() const { return 3 * node_count_ - free_count(); }

    /// Free index of (node, dir), or -1 when constrained.
    int free_index(int node, int dir) const { return global_to_free_[3 * node + dir]; }
    int global_index(int free) const { return free_to_global_[free]; }

    /// Scatter free values into a full 3*nodes vector (constrained dofs = 0).
    Eigen::VectorXd expand(const Eigen::VectorXd& free) const;

private:
    int node_count_ = 0;
    std::vector<int> global_to_free_;
    std::vector<int> free_to_global_;
};

/// Anchors plus the two symmetry conditions of the sector.
DofMap sector_dofmap(const Mesh& mesh, Sector sector);

struct SystemMatrices {
    SparseMatrix K;  // both triangles stored
    SparseMatrix M;
};

/// Assembly over free dofs. Element matrices are computed in parallel and
/// scattered in `element_order` (default: ascending), so the result does
/// not depend on the thread count.
SystemMatrices assemble(const Mesh& mesh, const DofMap& dofs, std::span<const int> element_order = {});

/// Sparsity pattern of the free-dof system with zero values.
SparseMatrix sparsity_pattern(const Mesh& mesh, const DofMap& dofs);

}  // namespace shapeopt
