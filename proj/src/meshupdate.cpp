#include "shapeopt/meshupdate.hpp"

#include "shapeopt/error.hpp"
#include "shapeopt/fem.hpp"
#include "shapeopt/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

namespace shapeopt {

namespace {

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

Eigen::Matrix2d corner_jacobian(std::span<const Vec2> xy, const Quad8& q, int c) {
    Eigen::Matrix2d J;
    J.col(0) = xy[q[(c + 1) % 4]] - xy[q[c]];
    J.col(1) = xy[q[(c + 3) % 4]] - xy[q[c]];
    return J;
}

// Bilinear plane-stress stiffness of the corner quad, dofs (node, dir).
Eigen::Matrix<double, 8, 8> q4_stiffness(const std::array<Vec2, 4>& p, double E, double nu) {
    Eigen::Matrix3d D;
    D << 1, nu, 0, nu, 1, 0, 0, 0, 0.5 * (1 - nu);
    D *= E / (1 - nu * nu);
    const double g = 1.0 / std::sqrt(3.0);
    const double xs[4] = {-1, 1, 1, -1}, ys[4] = {-1, -1, 1, 1};
    Eigen::Matrix<double, 8, 8> K = Eigen::Matrix<double, 8, 8>::Zero();
    for (double xi : {-g, g})
        for (double eta : {-g, g}) {
            Eigen::Matrix<double, 2, 4> dN;
            for (int a = 0; a < 4; ++a) {
                dN(0, a) = 0.25 * xs[a] * (1 + eta * ys[a]);
                dN(1, a) = 0.25 * ys[a] * (1 + xi * xs[a]);
            }
            Eigen::Matrix2d J = Eigen::Matrix2d::Zero();
            for (int a = 0; a < 4; ++a) J += dN.col(a) * p[a].transpose();  // J(i,j) = dx_j / dxi_i
            const double det = J.determinant();
            if (!(det > 0.0)) throw Error("2D mesh update: inverted initial element");
            const Eigen::Matrix<double, 2, 4> B = J.inverse() * dN;
            Eigen::Matrix<double, 3, 8> Bs = Eigen::Matrix<double, 3, 8>::Zero();
            for (int a = 0; a < 4; ++a) {
                Bs(0, 2 * a) = B(0, a);
                Bs(1, 2 * a + 1) = B(1, a);
                Bs(2, 2 * a) = B(1, a);
                Bs(2, 2 * a + 1) = B(0, a);
            }
            K.noalias() += det * Bs.transpose() * D * Bs;
        }
    return K;
}

}  // namespace

std::vector<int> MeshQualityReport::worst(int k) const {
    std::vector<int> idx(element_quality.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return element_quality[a] < element_quality[b]; });
    if (static_cast<int>(idx.size()) > k) idx.resize(k);
    return idx;
}

MeshQualityReport mesh_quality(const Quad8Mesh2D& mesh, std::span<const Vec2> xy) {
    MeshQualityReport r;
    r.element_quality.resize(mesh.quads.size());
    r.min_quality = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < mesh.quads.size(); ++e) {
        double q = 1.0;
        for (int c = 0; c < 4; ++c) {
            const auto J = corner_jacobian(xy, mesh.quads[e], c);
            const double n = J.col(0).norm() * J.col(1).norm();
            q = std::min(q, n > 0.0 ? cross(J.col(0), J.col(1)) / n : -1.0);
        }
        r.element_quality[e] = q;
        r.min_quality = std::min(r.min_quality, q);
        r.invalid += q <= 0.0;
    }
    return r;
}

MeshUpdater::MeshUpdater(const Surface2D& surface, const BoundaryLoops& loops, MeshUpdateOptions options)
    : surface_(surface), options_(options), xy0_(surface.mesh.xy) {
    const auto& m = surface.mesh;
    const int n2 = static_cast<int>(m.xy.size());
    fixed_.assign(n2, false);
    for (int v : loops.exterior_corners()) fixed_[v] = true;

    dof_of_.assign(n2, -1);
    std::vector<int> bnd_of(n2, -1);
    for (int v = 0; v < n2; ++v) {
        if (!surface.is_corner[v]) continue;
        if (fixed_[v]) {
            bnd_of[v] = static_cast<int>(boundary_dofs_.size());
            boundary_dofs_.push_back(v);
        } else {
            dof_of_[v] = 2 * static_cast<int>(free_corners_.size());
            free_corners_.push_back(v);
        }
    }

    mid_corners_.assign(n2, {-1, -1});
    target_inv_.resize(m.quads.size());
    for (std::size_t e = 0; e < m.quads.size(); ++e) {
        const auto& q = m.quads[e];
        for (int k = 0; k < 4; ++k) mid_corners_[q[4 + k]] = {q[k], q[(k + 1) % 4]};
        for (int c = 0; c < 4; ++c) {
            const auto W = corner_jacobian(xy0_, q, c);
            if (!(W.determinant() > 0.0)) throw Error("2D mesh update: inverted initial element");
            target_inv_[e][c] = W.inverse();
        }
    }

    const int nf = 2 * static_cast<int>(free_corners_.size());
    const int nb = 2 * static_cast<int>(boundary_dofs_.size());
    std::vector<Eigen::Triplet<double>> tff, tfb;
    for (const auto& q : m.quads) {
        const std::array<Vec2, 4> p{xy0_[q[0]], xy0_[q[1]], xy0_[q[2]], xy0_[q[3]]};
        const auto Ke = q4_stiffness(p, options_.young_modulus, options_.poisson_ratio);
        for (int a = 0; a < 4; ++a)
            for (int i = 0; i < 2; ++i) {
                if (dof_of_[q[a]] < 0) continue;
                const int row = dof_of_[q[a]] + i;
                for (int b = 0; b < 4; ++b)
                    for (int j = 0; j < 2; ++j) {
                        const double v = Ke(2 * a + i, 2 * b + j);
                        if (dof_of_[q[b]] >= 0)
                            tff.emplace_back(row, dof_of_[q[b]] + j, v);
                        else
                            tfb.emplace_back(row, 2 * bnd_of[q[b]] + j, v);
                    }
            }
    }
    Eigen::SparseMatrix<double> K_ff(nf, nf);
    K_ff.setFromTriplets(tff.begin(), tff.end());
    K_fb_.resize(nf, nb);
    K_fb_.setFromTriplets(tfb.begin(), tfb.end());
    factor_ = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>();
    if (nf > 0) {
        factor_->compute(K_ff);
        if (factor_->info() != Eigen::Success || !(factor_->vectorD().array() > 0.0).all())
            throw Error("2D mesh update: singular static system (unconstrained component)");
    }
}

std::vector<Vec2> MeshUpdater::interior_static_update(std::span<const Vec2> boundary_displacement) const {
    if (boundary_displacement.size() != xy0_.size())
        throw Error("interior_static_update: displacement count does not match the 2D mesh");
    std::vector<Vec2> u(xy0_.size(), Vec2::Zero());
    Eigen::VectorXd ub(2 * boundary_dofs_.size());
    for (std::size_t k = 0; k < boundary_dofs_.size(); ++k) {
        const int v = boundary_dofs_[k];
        u[v] = boundary_displacement[v];
        ub.segment<2>(2 * k) = boundary_displacement[v];
    }
    if (!free_corners_.empty()) {
        const Eigen::VectorXd rhs = -(K_fb_ * ub);
        const Eigen::VectorXd uf = factor_->solve(rhs);
        for (std::size_t k = 0; k < free_corners_.size(); ++k) u[free_corners_[k]] = uf.segment<2>(2 * k);
    }
    return u;
}

double MeshUpdater::distortion(std::span<const Vec2> xy, double delta, std::vector<Vec2>* gradient) const {
    const auto& quads = surface_.mesh.quads;
    const int ne = static_cast<int>(quads.size());
    std::vector<double> value(ne, 0.0);
    std::vector<std::array<Vec2, 4>> grad(gradient ? ne : 0);
    bool inverted = false;

#pragma omp parallel for schedule(static) reduction(|| : inverted)
    for (int e = 0; e < ne; ++e) {
        const auto& q = quads[e];
        std::array<Vec2, 4> ge{Vec2::Zero(), Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
        double f = 0.0;
        for (int c = 0; c < 4; ++c) {
            const Eigen::Matrix2d& A = target_inv_[e][c];
            const Eigen::Matrix2d T = corner_jacobian(xy, q, c) * A;
            const double d = T.determinant();
            if (delta == 0.0 && !(d > 0.0)) {
                inverted = true;
                break;
            }
            const double root = std::sqrt(d * d + 4 * delta * delta);
            const double h = delta == 0.0 ? d : 0.5 * (d + root);
            const double dh = delta == 0.0 ? 1.0 : 0.5 * (1 + d / root);
            const double t2 = T.squaredNorm();
            f += 0.25 * t2 / (2 * h);
            if (!gradient) continue;
            Eigen::Matrix2d cof;
            cof << T(1, 1), -T(1, 0), -T(0, 1), T(0, 0);
            const Eigen::Matrix2d dT = 0.25 * (T / h - (t2 / (2 * h * h)) * dh * cof);
            const Eigen::Matrix2d G = dT * A.transpose();
            ge[(c + 1) % 4] += G.col(0);
            ge[(c + 3) % 4] += G.col(1);
            ge[c] -= G.col(0) + G.col(1);
        }
        value[e] = f;
        if (gradient) grad[e] = ge;
    }
    if (inverted) return std::numeric_limits<double>::infinity();

    double total = 0.0;
    for (double v : value) total += v;
    if (gradient) {
        gradient->assign(xy.size(), Vec2::Zero());
        for (int e = 0; e < ne; ++e)
            for (int c = 0; c < 4; ++c) (*gradient)[quads[e][c]] += grad[e][c];
    }
    return total;
}

std::vector<Vec2> MeshUpdater::untangle_minimize_distortion(std::vector<Vec2> xy, SmoothingStats* stats) const {
    if (xy.size() != xy0_.size()) throw Error("untangle: coordinate count does not match the 2D mesh");
    SmoothingStats local;
    SmoothingStats& st = stats ? *stats : local;
    st = SmoothingStats{};
    const int n = 2 * static_cast<int>(free_corners_.size());
    if (n == 0) return xy;

    double min_edge = std::numeric_limits<double>::infinity();
    for (const auto& q : surface_.mesh.quads)
        for (int c = 0; c < 4; ++c) min_edge = std::min(min_edge, (xy0_[q[(c + 1) % 4]] - xy0_[q[c]]).norm());
    const double gtol = 1e-9 / min_edge;

    auto gather = [&](const std::vector<Vec2>& g) {
        Eigen::VectorXd v(n);
        for (std::size_t k = 0; k < free_corners_.size(); ++k) v.segment<2>(2 * k) = g[free_corners_[k]];
        return v;
    };
    auto scatter = [&](std::vector<Vec2>& pts, const Eigen::VectorXd& z) {
        for (std::size_t k = 0; k < free_corners_.size(); ++k) pts[free_corners_[k]] = z.segment<2>(2 * k);
    };
    auto valid = [&](const std::vector<Vec2>& pts) {
        for (std::size_t e = 0; e < surface_.mesh.quads.size(); ++e)
            for (int c = 0; c < 4; ++c)
                if (!(corner_jacobian(pts, surface_.mesh.quads[e], c).determinant() > 0.0)) return false;
        return true;
    };

    // L-BFGS with Armijo backtracking. With delta = 0 the objective is
    // infinite for inverted elements, which acts as a barrier.
    auto minimize = [&](double delta, bool stop_when_valid, std::vector<double>* trace) {
        Eigen::VectorXd z = gather(xy);
        std::vector<Vec2> g2;
        double f = distortion(xy, delta, &g2);
        Eigen::VectorXd g = gather(g2);
        std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> hist;
        if (trace) trace->push_back(f);
        for (int it = 0; it < options_.max_iterations; ++it) {
            if (stop_when_valid && valid(xy)) return;
            if (g.lpNorm<Eigen::Infinity>() <= gtol) return;
            Eigen::VectorXd d = -g;
            std::vector<double> alpha(hist.size());
            for (int k = static_cast<int>(hist.size()) - 1; k >= 0; --k) {
                const auto& [s, y] = hist[k];
                alpha[k] = s.dot(d) / y.dot(s);
                d -= alpha[k] * y;
            }
            if (!hist.empty()) d *= hist.back().first.dot(hist.back().second) / hist.back().second.squaredNorm();
            for (std::size_t k = 0; k < hist.size(); ++k) {
                const auto& [s, y] = hist[k];
                d += (alpha[k] - y.dot(d) / y.dot(s)) * s;
            }
            if (!(d.dot(g) < 0.0)) {
                d = -g;
                hist.clear();
            }
            double step = hist.empty() ? std::min(1.0, 0.1 * min_edge / d.lpNorm<Eigen::Infinity>()) : 1.0;
            bool accepted = false;
            Eigen::VectorXd z_new;
            double f_new = f;
            std::vector<Vec2> trial = xy;
            for (int ls = 0; ls < 50; ++ls, step *= 0.5) {
                z_new = z + step * d;
                scatter(trial, z_new);
                f_new = distortion(trial, delta, &g2);
                if (f_new <= f + 1e-4 * step * g.dot(d)) {
                    accepted = true;
                    break;
                }
            }
            if (!accepted) return;
            const Eigen::VectorXd g_new = gather(g2);
            const Eigen::VectorXd s = z_new - z, y = g_new - g;
            if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
                hist.emplace_back(s, y);
                if (hist.size() > 7) hist.pop_front();
            }
            const double decrease = f - f_new;
            z = z_new;
            xy = trial;
            f = f_new;
            g = g_new;
            ++st.iterations;
            if (trace) trace->push_back(f);
            if (decrease <= 1e-15 * std::abs(f)) return;
        }
    };

    if (!valid(xy)) {
        st.untangled = true;
        minimize(options_.untangle_delta, true, nullptr);
        if (!valid(xy)) {
            const auto report = mesh_quality(surface_.mesh, xy);
            throw MeshQualityError("mesh untangling failed: " + std::to_string(report.invalid) + " inverted elements",
                                   report.worst(10));
        }
    }
    minimize(0.0, false, &st.objective);
    return xy;
}

void MeshUpdater::finalize(Mesh& mesh, std::span<const Vec2> xy) const {
    if (xy.size() != xy0_.size()) throw Error("finalize: coordinate count does not match the 2D mesh");
    std::vector<Vec2> pos(xy.begin(), xy.end());
    for (std::size_t v = 0; v < pos.size(); ++v)
        if (!surface_.is_corner[v]) {
            const auto [a, b] = mid_corners_[v];
            pos[v] = 0.5 * (xy[a] + xy[b]);
        }
    for (std::size_t v = 0; v < pos.size(); ++v)
        for (int id : surface_.column_nodes[v]) mesh.nodes[id].x.head<2>() = pos[v];
    check_jacobians(mesh);
}

MeshQualityReport MeshUpdater::update(Mesh& mesh, std::span<const Vec3> morphed, SmoothingStats* stats) const {
    if (morphed.size() != mesh.nodes.size()) throw Error("mesh update: coordinate count does not match the mesh");
    const std::size_t n2 = xy0_.size();
    std::vector<Vec2> boundary(n2, Vec2::Zero()), target(n2, Vec2::Zero());
    for (std::size_t v = 0; v < n2; ++v) {
        if (!fixed_[v]) continue;
        target[v] = morphed[surface_.column_nodes[v].back()].head<2>();
        boundary[v] = target[v] - xy0_[v];
    }
    const auto u = interior_static_update(boundary);
    std::vector<Vec2> xy(n2);
    for (std::size_t v = 0; v < n2; ++v) xy[v] = fixed_[v] ? target[v] : Vec2(xy0_[v] + u[v]);
    if (options_.smooth) xy = untangle_minimize_distortion(std::move(xy), stats);

    auto report = mesh_quality(surface_.mesh, xy);
    if (!(report.min_quality > options_.quality_floor))
        throw MeshQualityError("mesh quality " + std::to_string(report.min_quality) + " below the floor " +
                                   std::to_string(options_.quality_floor),
                               report.worst(10));
    finalize(mesh, xy);
    return report;
}

}  // namespace shapeopt
