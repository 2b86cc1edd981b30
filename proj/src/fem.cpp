#include "shapeopt/fem.hpp"

#include "shapeopt/error.hpp"
#include "shapeopt/parallel.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace shapeopt {

namespace {

constexpr std::array<std::array<double, 3>, 8> kCornerXi = {{
    {-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1},
    {-1, -1, 1},  {1, -1, 1},  {1, 1, 1},  {-1, 1, 1},
}};

std::array<Vec3, 20> make_reference_nodes() {
    std::array<Vec3, 20> r;
    for (int a = 0; a < 8; ++a) r[a] = Vec3(kCornerXi[a][0], kCornerXi[a][1], kCornerXi[a][2]);
    for (int k = 0; k < 12; ++k) r[8 + k] = 0.5 * (r[kHex20EdgeCorners[k][0]] + r[kHex20EdgeCorners[k][1]]);
    return r;
}

QuadratureRule make_gauss27() {
    const double g = std::sqrt(0.6);
    const std::array<double, 3> pt = {-g, 0.0, g};
    const std::array<double, 3> wt = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    QuadratureRule rule;
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < 3; ++j)
            for (int i = 0; i < 3; ++i) {
                rule.points.emplace_back(pt[i], pt[j], pt[k]);
                rule.weights.push_back(wt[i] * wt[j] * wt[k]);
                rule.shapes.push_back(shape_hex20(rule.points.back()));
            }
    return rule;
}

// Accumulate a 60x60 element block into the preallocated pattern.
void scatter(SparseMatrix& A, const std::array<int, 60>& f, const Mat60& Ae) {
    const int* outer = A.outerIndexPtr();
    const int* inner = A.innerIndexPtr();
    double* values = A.valuePtr();
    for (int j = 0; j < 60; ++j) {
        if (f[j] < 0) continue;
        const int* begin = inner + outer[f[j]];
        const int* end = inner + outer[f[j] + 1];
        for (int i = 0; i < 60; ++i) {
            if (f[i] < 0) continue;
            const int* pos = std::lower_bound(begin, end, f[i]);
            values[pos - inner] += Ae(i, j);
        }
    }
}

std::array<int, 60> local_dofs(const Hex20& el, const DofMap& dofs) {
    std::array<int, 60> f;
    for (int a = 0; a < 20; ++a)
        for (int d = 0; d < 3; ++d) f[3 * a + d] = dofs.free_index(el[a], d);
    return f;
}

}  // namespace

ShapeHex20 shape_hex20(const Vec3& xi) {
    const auto& ref = hex20_reference_nodes();
    ShapeHex20 s;
    for (int a = 0; a < 20; ++a) {
        const double xa = ref[a].x(), ya = ref[a].y(), za = ref[a].z();
        const double x = xi.x(), y = xi.y(), z = xi.z();
        if (a < 8) {
            const double fx = 1 + x * xa, fy = 1 + y * ya, fz = 1 + z * za;
            const double q = x * xa + y * ya + z * za - 2;
            s.N(a) = 0.125 * fx * fy * fz * q;
            s.dN(0, a) = 0.125 * xa * fy * fz * (q + fx);
            s.dN(1, a) = 0.125 * ya * fx * fz * (q + fy);
            s.dN(2, a) = 0.125 * za * fx * fy * (q + fz);
        } else if (xa == 0.0) {
            const double fy = 1 + y * ya, fz = 1 + z * za;
            s.N(a) = 0.25 * (1 - x * x) * fy * fz;
            s.dN(0, a) = -0.5 * x * fy * fz;
            s.dN(1, a) = 0.25 * (1 - x * x) * ya * fz;
            s.dN(2, a) = 0.25 * (1 - x * x) * fy * za;
        } else if (ya == 0.0) {
            const double fx = 1 + x * xa, fz = 1 + z * za;
            s.N(a) = 0.25 * (1 - y * y) * fx * fz;
            s.dN(0, a) = 0.25 * (1 - y * y) * xa * fz;
            s.dN(1, a) = -0.5 * y * fx * fz;
            s.dN(2, a) = 0.25 * (1 - y * y) * fx * za;
        } else {
            const double fx = 1 + x * xa, fy = 1 + y * ya;
            s.N(a) = 0.25 * (1 - z * z) * fx * fy;
            s.dN(0, a) = 0.25 * (1 - z * z) * xa * fy;
            s.dN(1, a) = 0.25 * (1 - z * z) * fx * ya;
            s.dN(2, a) = -0.5 * z * fx * fy;
        }
    }
    return s;
}

const std::array<Vec3, 20>& hex20_reference_nodes() {
    static const std::array<Vec3, 20> nodes = make_reference_nodes();
    return nodes;
}

const QuadratureRule& QuadratureRule::gauss27() {
    static const QuadratureRule rule = make_gauss27();
    return rule;
}

Eigen::Matrix<double, 6, 6> elasticity_matrix(const Material& material) {
    const double E = material.young_modulus, nu = material.poisson_ratio;
    const double lambda = E * nu / ((1 + nu) * (1 - 2 * nu));
    const double mu = E / (2 * (1 + nu));
    Eigen::Matrix<double, 6, 6> D = Eigen::Matrix<double, 6, 6>::Zero();
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) D(i, j) = lambda;
        D(i, i) = lambda + 2 * mu;
        D(3 + i, 3 + i) = mu;
    }
    return D;
}

PointGeometry point_geometry(const ElementCoords& x, const ShapeHex20& shape, int element) {
    PointGeometry g;
    // Shape derivatives sum to zero, so a local origin leaves J unchanged
    // and keeps absolute coordinates out of the rounding.
    g.J.noalias() = (x.colwise() - x.col(0)) * shape.dN.transpose();
    g.detJ = g.J.determinant();
    if (!(g.detJ > 0.0)) throw InvalidElementError(element, "non-positive Jacobian determinant");
    g.B.noalias() = g.J.inverse().transpose() * shape.dN;
    return g;
}

Eigen::Matrix<double, 6, 60> strain_matrix(const Eigen::Matrix<double, 3, 20>& B) {
    Eigen::Matrix<double, 6, 60> Be = Eigen::Matrix<double, 6, 60>::Zero();
    for (int a = 0; a < 20; ++a) {
        const double bx = B(0, a), by = B(1, a), bz = B(2, a);
        const int c = 3 * a;
        Be(0, c) = bx;
        Be(1, c + 1) = by;
        Be(2, c + 2) = bz;
        Be(3, c) = by;
        Be(3, c + 1) = bx;
        Be(4, c + 1) = bz;
        Be(4, c + 2) = by;
        Be(5, c) = bz;
        Be(5, c + 2) = bx;
    }
    return Be;
}

ElementMatrices element_matrices(const ElementCoords& x, const Material& material, const QuadratureRule& rule,
                                 int element) {
    const auto D = elasticity_matrix(material);
    ElementMatrices out;
    out.K.setZero();
    Eigen::Matrix<double, 20, 20> m = Eigen::Matrix<double, 20, 20>::Zero();
    Eigen::Matrix<double, 6, 60> DB;
    for (std::size_t p = 0; p < rule.size(); ++p) {
        const auto g = point_geometry(x, rule.shapes[p], element);
        const double w = rule.weights[p] * g.detJ;
        const auto Be = strain_matrix(g.B);
        DB.noalias() = D * Be;
        out.K.noalias() += w * Be.transpose() * DB;
        m.noalias() += (w * material.density) * rule.shapes[p].N * rule.shapes[p].N.transpose();
    }
    out.K = (0.5 * kStiffnessScale) * (out.K + out.K.transpose()).eval();
    out.M.setZero();
    for (int a = 0; a < 20; ++a)
        for (int b = 0; b < 20; ++b)
            for (int d = 0; d < 3; ++d) out.M(3 * a + d, 3 * b + d) = kMassScale * m(a, b);
    return out;
}

double min_det_jacobian(const ElementCoords& x, const QuadratureRule& rule) {
    double lo = std::numeric_limits<double>::infinity();
    const ElementCoords local = x.colwise() - x.col(0);
    for (const auto& s : rule.shapes) lo = std::min(lo, (local * s.dN.transpose()).determinant());
    return lo;
}

void check_jacobians(const Mesh& mesh) {
    for (std::size_t e = 0; e < mesh.elements.size(); ++e)
        if (!(min_det_jacobian(mesh.element_coords(static_cast<int>(e))) > 0.0))
            throw InvalidElementError(static_cast<int>(e), "non-positive Jacobian determinant");
}

std::string to_string(Sector s) {
    switch (s) {
        case Sector::SS: return "SS";
        case Sector::SA: return "SA";
        case Sector::AS: return "AS";
        case Sector::AA: return "AA";
    }
    return "??";
}

Sector parse_sector(const std::string& name) {
    for (Sector s : kSectors)
        if (to_string(s) == name) return s;
    throw Error("unknown sector '" + name + "' (expected SS, SA, AS or AA)");
}

Parity parity(Sector s, Plane plane) {
    const char c = to_string(s)[plane == Plane::x ? 0 : 1];
    return c == 'S' ? Parity::symmetric : Parity::antisymmetric;
}

std::vector<DofConstraint> symmetry_bc(const Mesh& mesh, Plane plane, Parity parity) {
    const char* name = plane == Plane::x ? sets::sym_x_face : sets::sym_y_face;
    if (!mesh.has_set(name) || mesh.set(name).empty())
        throw Error(std::string("symmetry face set '") + name + "' is missing or empty");
    const int normal = plane == Plane::x ? 0 : 1;
    std::vector<DofConstraint> out;
    for (int node : mesh.set(name)) {
        if (parity == Parity::symmetric) {
            out.push_back({node, normal});
        } else {
            for (int d = 0; d < 3; ++d)
                if (d != normal) out.push_back({node, d});
        }
    }
    return out;
}

std::vector<DofConstraint> anchor_bc(const Mesh& mesh) {
    std::vector<DofConstraint> out;
    if (!mesh.has_set(sets::anchor_base)) return out;
    for (int node : mesh.set(sets::anchor_base))
        for (int d = 0; d < 3; ++d) out.push_back({node, d});
    return out;
}

DofMap::DofMap(int node_count, std::span<const DofConstraint> fixed)
    : node_count_(node_count), global_to_free_(3 * static_cast<std::size_t>(node_count), 0) {
    for (const auto& c : fixed) {
        if (c.node < 0 || c.node >= node_count || c.dir < 0 || c.dir > 2)
            throw Error("dof constraint references node " + std::to_string(c.node) + " outside the mesh");
        global_to_free_[3 * c.node + c.dir] = -1;
    }
    for (int g = 0; g < 3 * node_count; ++g) {
        if (global_to_free_[g] < 0) continue;
        global_to_free_[g] = static_cast<int>(free_to_global_.size());
        free_to_global_.push_back(g);
    }
}

Eigen::VectorXd DofMap::expand(const Eigen::VectorXd& free) const {
    if (free.size() != free_count()) throw Error("free vector length does not match the dof map");
    Eigen::VectorXd full = Eigen::VectorXd::Zero(3 * node_count_);
    for (int i = 0; i < free_count(); ++i) full(free_to_global_[i]) = free(i);
    return full;
}

DofMap sector_dofmap(const Mesh& mesh, Sector sector) {
    auto fixed = anchor_bc(mesh);
    for (Plane plane : {Plane::x, Plane::y}) {
        auto c = symmetry_bc(mesh, plane, parity(sector, plane));
        fixed.insert(fixed.end(), c.begin(), c.end());
    }
    return DofMap(static_cast<int>(mesh.nodes.size()), fixed);
}

SparseMatrix sparsity_pattern(const Mesh& mesh, const DofMap& dofs) {
    const int n_nodes = static_cast<int>(mesh.nodes.size());
    std::vector<std::vector<int>> neighbours(n_nodes);
    for (const auto& el : mesh.elements)
        for (int a : el) neighbours[a].insert(neighbours[a].end(), el.begin(), el.end());
    for (auto& nb : neighbours) {
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }

    const int n = dofs.free_count();
    std::vector<int> outer(n + 1, 0);
    std::vector<int> inner;
    for (int col = 0; col < n; ++col) {
        const int node = dofs.global_index(col) / 3;
        for (int nb : neighbours[node])
            for (int d = 0; d < 3; ++d)
                if (int row = dofs.free_index(nb, d); row >= 0) inner.push_back(row);
        outer[col + 1] = static_cast<int>(inner.size());
    }
    std::vector<double> values(inner.size(), 0.0);
    return Eigen::Map<const SparseMatrix>(n, n, static_cast<int>(inner.size()), outer.data(), inner.data(),
                                          values.data());
}

SystemMatrices assemble(const Mesh& mesh, const DofMap& dofs, std::span<const int> element_order) {
    if (dofs.node_count() != static_cast<int>(mesh.nodes.size()))
        throw Error("dof map does not match the mesh");
    mesh.material.validate();
    std::vector<int> order;
    if (element_order.empty()) {
        order.resize(mesh.elements.size());
        std::iota(order.begin(), order.end(), 0);
    } else {
        order.assign(element_order.begin(), element_order.end());
        if (order.size() != mesh.elements.size()) throw Error("element order must list every element once");
    }

    SystemMatrices sys;
    sys.K = sparsity_pattern(mesh, dofs);
    sys.M = sys.K;

    const int total = static_cast<int>(order.size());
    const int chunk = 64;
    std::vector<ElementMatrices> buffer(chunk);
    for (int start = 0; start < total; start += chunk) {
        const int count = std::min(chunk, total - start);
        LoopErrors errors;
#pragma omp parallel for schedule(dynamic, 4)
        for (int k = 0; k < count; ++k) {
            const int e = order[start + k];
            errors.run(k, [&] {
                buffer[k] = element_matrices(mesh.element_coords(e), mesh.material, QuadratureRule::gauss27(), e);
            });
        }
        errors.rethrow();
        for (int k = 0; k < count; ++k) {
            const auto f = local_dofs(mesh.elements[order[start + k]], dofs);
            scatter(sys.K, f, buffer[k].K);
            scatter(sys.M, f, buffer[k].M);
        }
    }

    for (int i = 0; i < sys.M.outerSize(); ++i)
        if (!(sys.M.coeff(i, i) > 0.0)) throw Error("assembled mass matrix is singular");
    return sys;
}

}  // namespace shapeopt
