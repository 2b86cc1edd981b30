#include "shapeopt/sensitivity.hpp"

#include "shapeopt/error.hpp"
#include "shapeopt/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>

namespace shapeopt {

namespace {

using Voigt = Eigen::Matrix<double, 6, 1>;

Voigt strain_of(const Mat3& G) {
    Voigt e;
    e << G(0, 0), G(1, 1), G(2, 2), G(0, 1) + G(1, 0), G(1, 2) + G(2, 1), G(0, 2) + G(2, 0);
    return e;
}

ElementCoords element_field(const Mesh& mesh, int e, const Eigen::VectorXd& full) {
    ElementCoords u;
    const auto& el = mesh.elements[e];
    for (int a = 0; a < 20; ++a) u.col(a) = full.segment<3>(3 * el[a]);
    return u;
}

void check_modes(const ModalResult& modal, std::span<const int> modes) {
    for (int i : modes) {
        if (i < 0 || i >= static_cast<int>(modal.modes.size()))
            throw Error("frequency sensitivity: mode " + std::to_string(i) + " does not exist");
        if (!(modal.modes[i].eigenvalue > 0.0))
            throw Error("frequency sensitivity undefined for mode " + std::to_string(i) + " with zero frequency");
    }
}

// u^T K u / u^T M u summed element by element in long double. The double
// global matrices carry rounding of order eps |K| / lambda, which drowns the
// change of a low eigenvalue over a 1e-4 um step on stiff meshes.
double element_rayleigh_quotient(const Mesh& mesh, const Eigen::VectorXd& u) {
    using Real = long double;
    using M3 = Eigen::Matrix<Real, 3, 3>;
    const Eigen::Matrix<Real, 6, 6> D = elasticity_matrix(mesh.material).cast<Real>();
    const Real rho = mesh.material.density;
    const QuadratureRule& rule = QuadratureRule::gauss27();
    Real energy = 0.0L, mass = 0.0L;
    for (int e = 0; e < static_cast<int>(mesh.element_count()); ++e) {
        const ElementCoords xd = mesh.element_coords(e);
        const Eigen::Matrix<Real, 3, 20> x = (xd.colwise() - xd.col(0)).cast<Real>();
        const Eigen::Matrix<Real, 3, 20> ue = element_field(mesh, e, u).cast<Real>();
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const Eigen::Matrix<Real, 3, 20> dN = rule.shapes[q].dN.cast<Real>();
            const M3 J = x * dN.transpose();
            const Real w = static_cast<Real>(rule.weights[q]) * J.determinant();
            const M3 G = ue * (J.inverse().transpose() * dN).transpose();
            Eigen::Matrix<Real, 6, 1> eps;
            eps << G(0, 0), G(1, 1), G(2, 2), G(0, 1) + G(1, 0), G(1, 2) + G(2, 1), G(0, 2) + G(2, 0);
            energy += w * eps.dot(D * eps);
            const Eigen::Matrix<Real, 3, 1> v = ue * rule.shapes[q].N.cast<Real>();
            mass += w * rho * v.squaredNorm();
        }
    }
    return static_cast<double>((static_cast<Real>(kStiffnessScale) * energy) / (static_cast<Real>(kMassScale) * mass));
}

}  // namespace

ElementSensitivity element_sensitivities(const ElementCoords& x, const ElementCoords& dx, const Material& material,
                                         const QuadratureRule& rule, int element) {
    const auto D = elasticity_matrix(material);
    Mat60 dK = Mat60::Zero();
    Eigen::Matrix<double, 20, 20> dm = Eigen::Matrix<double, 20, 20>::Zero();
    for (std::size_t p = 0; p < rule.size(); ++p) {
        const auto g = point_geometry(x, rule.shapes[p], element);
        const Eigen::Matrix<double, 3, 20> dB = -g.B * dx.transpose() * g.B;
        const double ddet = g.detJ * (g.B.array() * dx.array()).sum();
        const auto Be = strain_matrix(g.B);
        const auto dBe = strain_matrix(dB);
        const Eigen::Matrix<double, 6, 60> DB = D * Be;
        const Eigen::Matrix<double, 60, 60> cross = dBe.transpose() * DB;
        dK.noalias() += rule.weights[p] * (g.detJ * (cross + cross.transpose()) + ddet * Be.transpose() * DB);
        dm.noalias() += (rule.weights[p] * ddet * material.density) * rule.shapes[p].N * rule.shapes[p].N.transpose();
    }
    ElementSensitivity out;
    out.dK = (0.5 * kStiffnessScale) * (dK + dK.transpose());
    out.dM.setZero();
    for (int a = 0; a < 20; ++a)
        for (int b = 0; b < 20; ++b)
            for (int d = 0; d < 3; ++d) out.dM(3 * a + d, 3 * b + d) = kMassScale * dm(a, b);
    return out;
}

double element_eigen_sensitivity(const ElementCoords& x, const ElementCoords& dx, const ElementCoords& u, double lambda,
                                 const Material& material, const QuadratureRule& rule) {
    const auto D = elasticity_matrix(material);
    double stiff = 0.0, mass = 0.0;
    for (std::size_t p = 0; p < rule.size(); ++p) {
        const auto g = point_geometry(x, rule.shapes[p]);
        const Mat3 H = dx * g.B.transpose();
        const double ddet = g.detJ * H.trace();
        const Mat3 G = u * g.B.transpose();
        const Voigt eps = strain_of(G);
        const Voigt Deps = D * eps;
        const Voigt deps = strain_of(-G * H);
        stiff += rule.weights[p] * (2.0 * g.detJ * deps.dot(Deps) + ddet * eps.dot(Deps));
        mass += rule.weights[p] * ddet * material.density * (u * rule.shapes[p].N).squaredNorm();
    }
    return kStiffnessScale * stiff - lambda * kMassScale * mass;
}

ParameterAdjacency::ParameterAdjacency(const Mesh& mesh, const DesignParametrization& param)
    : parameter_count_(param.size()), elements_of_(param.size()), links_(mesh.element_count()) {
    if (param.dx_dp.rows() != 3 * static_cast<long>(mesh.node_count()))
        throw Error("parameter adjacency: parametrization does not match the mesh");
    std::vector<std::vector<int>> elements_of_node(mesh.node_count());
    for (int e = 0; e < static_cast<int>(mesh.element_count()); ++e)
        for (int n : mesh.elements[e]) elements_of_node[n].push_back(e);

    for (int j = 0; j < param.size(); ++j) {
        std::vector<int> touched;
        for (Eigen::SparseMatrix<double>::InnerIterator it(param.dx_dp, j); it; ++it)
            if (it.value() != 0.0)
                for (int e : elements_of_node[it.row() / 3]) touched.push_back(e);
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        elements_of_[j] = touched;
        for (int e : touched) links_[e].push_back({j, ElementCoords::Zero()});
    }
    // Element-local coordinate derivatives.
    std::vector<double> column(3 * mesh.node_count(), 0.0);
    for (int j = 0; j < param.size(); ++j) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(param.dx_dp, j); it; ++it) column[it.row()] = it.value();
        for (int e : elements_of_[j]) {
            auto& links = links_[e];
            auto link = std::find_if(links.begin(), links.end(), [j](const Link& l) { return l.parameter == j; });
            for (int a = 0; a < 20; ++a)
                for (int d = 0; d < 3; ++d) link->dx(d, a) = column[3 * mesh.elements[e][a] + d];
        }
        for (Eigen::SparseMatrix<double>::InnerIterator it(param.dx_dp, j); it; ++it) column[it.row()] = 0.0;
    }
}

Eigen::MatrixXd frequency_sensitivities(const Mesh& mesh, const ParameterAdjacency& adjacency,
                                        const ModalResult& modal, std::span<const int> modes) {
    check_modes(modal, modes);
    const int nm = static_cast<int>(modes.size());
    const int ne = static_cast<int>(mesh.element_count());
    Eigen::MatrixXd phi(3 * mesh.node_count(), nm);
    Eigen::VectorXd lambda(nm);
    for (int k = 0; k < nm; ++k) {
        phi.col(k) = modal.full_vector(modes[k]);
        lambda(k) = modal.modes[modes[k]].eigenvalue;
    }
    const auto D = elasticity_matrix(mesh.material);
    const auto& rule = QuadratureRule::gauss27();

    // Per element: contributions[link][mode], reduced serially afterwards.
    std::vector<Eigen::MatrixXd> contrib(ne);
    LoopErrors errors;
#pragma omp parallel for schedule(dynamic, 16)
    for (int e = 0; e < ne; ++e) {
        errors.run(e, [&] {
            const auto& links = adjacency.links(e);
            if (links.empty()) return;
            const ElementCoords x = mesh.element_coords(e);
            std::vector<ElementCoords> u(nm);
            for (int k = 0; k < nm; ++k) u[k] = element_field(mesh, e, phi.col(k));
            Eigen::MatrixXd c = Eigen::MatrixXd::Zero(links.size(), nm);
            std::vector<Mat3> G(nm);
            std::vector<Voigt> eps(nm), Deps(nm);
            std::vector<double> u2(nm);
            for (std::size_t p = 0; p < rule.size(); ++p) {
                const auto g = point_geometry(x, rule.shapes[p], e);
                const double w = rule.weights[p];
                for (int k = 0; k < nm; ++k) {
                    G[k] = u[k] * g.B.transpose();
                    eps[k] = strain_of(G[k]);
                    Deps[k] = D * eps[k];
                    u2[k] = (u[k] * rule.shapes[p].N).squaredNorm();
                }
                for (std::size_t l = 0; l < links.size(); ++l) {
                    const Mat3 H = links[l].dx * g.B.transpose();
                    const double ddet = g.detJ * H.trace();
                    for (int k = 0; k < nm; ++k) {
                        const Voigt deps = strain_of(-G[k] * H);
                        const double stiff = 2.0 * g.detJ * deps.dot(Deps[k]) + ddet * eps[k].dot(Deps[k]);
                        const double mass = ddet * mesh.material.density * u2[k];
                        c(l, k) += w * (kStiffnessScale * stiff - lambda(k) * kMassScale * mass);
                    }
                }
            }
            contrib[e] = std::move(c);
        });
    }
    errors.rethrow();

    Eigen::MatrixXd dlambda = Eigen::MatrixXd::Zero(nm, adjacency.parameter_count());
    for (int e = 0; e < ne; ++e) {
        const auto& links = adjacency.links(e);
        for (std::size_t l = 0; l < links.size(); ++l) dlambda.col(links[l].parameter) += contrib[e].row(l).transpose();
    }
    // df = dlambda / (4 pi omega)
    for (int k = 0; k < nm; ++k) dlambda.row(k) /= 4.0 * std::numbers::pi * std::sqrt(lambda(k));
    return dlambda;
}

Eigen::MatrixXd frequency_sensitivities_reference(const Mesh& mesh, const ParameterAdjacency& adjacency,
                                                  const ModalResult& modal, std::span<const int> modes) {
    check_modes(modal, modes);
    const int nm = static_cast<int>(modes.size());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(nm, adjacency.parameter_count());
    std::vector<Eigen::VectorXd> phi(nm);
    for (int k = 0; k < nm; ++k) phi[k] = modal.full_vector(modes[k]);
    for (int j = 0; j < adjacency.parameter_count(); ++j)
        for (int e : adjacency.elements_of(j)) {
            const auto& links = adjacency.links(e);
            const auto link = std::find_if(links.begin(), links.end(), [j](const auto& l) { return l.parameter == j; });
            const auto s = element_sensitivities(mesh.element_coords(e), link->dx, mesh.material);
            for (int k = 0; k < nm; ++k) {
                Eigen::Matrix<double, 60, 1> u;
                for (int a = 0; a < 20; ++a) u.segment<3>(3 * a) = phi[k].segment<3>(3 * mesh.elements[e][a]);
                out(k, j) += u.dot((s.dK - modal.modes[modes[k]].eigenvalue * s.dM) * u);
            }
        }
    for (int k = 0; k < nm; ++k) out.row(k) /= 4.0 * std::numbers::pi * modal.modes[modes[k]].omega;
    return out;
}

double FdReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& s : samples) m = std::max(m, s.rel_error);
    return m;
}

void FdReport::write_csv(std::ostream& out, bool header) const {
    if (header) out << "quantity,row,parameter,h,analytic,numeric,rel_error\n";
    out << std::setprecision(12);
    for (const auto& s : samples)
        out << s.quantity << ',' << s.row << ',' << s.col << ',' << h << ',' << s.analytic << ',' << s.numeric << ','
            << s.rel_error << '\n';
}

double central_difference(const std::function<double(double)>& f, double h) {
    if (!(h > 0.0)) throw Error("finite difference step must be positive");
    return (f(h) - f(-h)) / (2.0 * h);
}

double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max(std::abs(analytic), floor);
}

FdReport check_frequency_gradients(const Mesh& mesh, const DesignParametrization& param, const Eigen::VectorXd& p,
                                   std::span<const std::pair<int, int>> pairs, double h,
                                   const ModalOptions& options) {
    FdReport report;
    report.h = h;
    Mesh work = mesh;
    auto place = [&](const Eigen::VectorXd& q) {
        const auto x = apply_parameters(mesh.x0, param, q);
        for (std::size_t i = 0; i < x.size(); ++i) work.nodes[i].x = x[i];
    };
    place(p);
    ModalOptions base_options = options;
    base_options.weighted = false;
    const ModalResult base = solve_sectors(work, base_options);
    std::vector<int> modes;
    for (const auto& [mode, j] : pairs) modes.push_back(mode);
    const ParameterAdjacency adjacency(mesh, param);
    const Eigen::MatrixXd grad = frequency_sensitivities(work, adjacency, base, modes);

    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto [mode, j] = pairs[k];
        const Mode& m = base.modes[mode];
        const auto& sector = base.sector_of(mode);
        const Eigen::VectorXd phi0 = sector.vectors.col(m.sector_index);
        auto frequency = [&](double step) {
            Eigen::VectorXd q = p;
            q(j) += step;
            place(q);
            const auto sys = assemble(work, sector.dofs);
            EigenOptions eo = options.eigen;
            const auto sol = solve_modes(sys.K, sys.M, m.sector_index + 3, eo);
            // Pick the perturbed mode most similar to the base one.
            const Eigen::VectorXd Mphi = sys.M * phi0;
            int best = 0;
            double best_mac = -1.0;
            for (int c = 0; c < sol.vectors.cols(); ++c) {
                const double v = std::abs(Mphi.dot(sol.vectors.col(c)));
                if (v > best_mac) best_mac = v, best = c;
            }
            return frequency_hz(element_rayleigh_quotient(work, sector.dofs.expand(sol.vectors.col(best))));
        };
        FdSample s;
        s.quantity = "frequency";
        s.row = mode;
        s.col = j;
        s.analytic = grad(k, j);
        s.numeric = central_difference(frequency, h);
        s.rel_error = relative_error(s.analytic, s.numeric);
        report.samples.push_back(s);
    }
    return report;
}

FdReport check_constraint_gradients(const Surface2D& surface, const BoundaryLoops& loops,
                                    const DesignParametrization& param, const Eigen::VectorXd& p,
                                    std::span<const int> columns, double h) {
    if (!(h > 0.0)) throw Error("finite-difference step must be positive");
    auto morphed = [&](const Eigen::VectorXd& q) {
        auto xy = surface.mesh.xy;
        const auto disp = boundary_displacements(surface, param, q);
        for (std::size_t i = 0; i < xy.size(); ++i) xy[i] += disp[i];
        return xy;
    };
    const ConstraintReport base = evaluate_constraints(loops, morphed(p), param);
    FdReport report;
    report.h = h;
    for (int j : columns) {
        if (j < 0 || j >= param.size()) throw Error("parameter index " + std::to_string(j) + " out of range");
        Eigen::VectorXd pp = p, pm = p;
        pp(j) += h;
        pm(j) -= h;
        const ConstraintReport plus = evaluate_constraints(loops, morphed(pp), param);
        const ConstraintReport minus = evaluate_constraints(loops, morphed(pm), param);
        for (int c = 0; c < base.size(); ++c) {
            for (int side = 0; side < 2; ++side) {
                const auto& pick = [&](const ConstraintReport& r) -> const TraceResult& {
                    return side == 0 ? r.width[c] : r.distance[c];
                };
                const TraceResult& b = pick(base);
                if (!b.found() || b.endpoint || pick(plus).segment != b.segment || pick(minus).segment != b.segment ||
                    pick(plus).endpoint || pick(minus).endpoint)
                    continue;
                FdSample s;
                s.quantity = side == 0 ? "width" : "distance";
                s.row = c;
                s.col = j;
                s.analytic = (side == 0 ? base.width_grad : base.distance_grad)(c, j);
                s.numeric = (pick(plus).value() - pick(minus).value()) / (2.0 * h);
                s.rel_error = relative_error(s.analytic, s.numeric, 1.0);
                report.samples.push_back(s);
            }
        }
    }
    return report;
}

}  // namespace shapeopt
