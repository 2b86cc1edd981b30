#include "doctest.h"
#include "test_support.hpp"

#include "shapeopt/error.hpp"
#include "shapeopt/parallel.hpp"
#include "shapeopt/sensitivity.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

using namespace shapeopt;

namespace {

ElementCoords random_element(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    ElementCoords x = testing::box_hex(Vec3(0, 0, 0), Vec3(3, 2, 1.5)).element_coords(0);
    for (int a = 0; a < 20; ++a)
        for (int i = 0; i < 3; ++i) x(i, a) += u(rng);
    return x;
}

ElementCoords random_dx(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ElementCoords dx;
    for (int a = 0; a < 20; ++a)
        for (int i = 0; i < 3; ++i) dx(i, a) = u(rng);
    return dx;
}

ModalOptions demo_options(int n_modes = 12) {
    ModalOptions o;
    o.n_modes = n_modes;
    o.weighted = false;
    return o;
}

}  // namespace

TEST_CASE("element sensitivities: rigid translation gives zero") {
    std::mt19937_64 rng(1);
    const ElementCoords x = random_element(rng);
    ElementCoords dx;
    for (int a = 0; a < 20; ++a) dx.col(a) = Vec3(0.3, -1.2, 0.7);
    const auto ref = element_matrices(x, Material{});
    const auto s = element_sensitivities(x, dx, Material{});
    CHECK(s.dK.norm() <= 1e-10 * ref.K.norm());
    CHECK(s.dM.norm() <= 1e-10 * ref.M.norm());
}

TEST_CASE("element sensitivities: isotropic scaling changes mass by 3 rho V") {
    const ElementCoords x = testing::box_hex(Vec3(0, 0, 0), Vec3(1, 1, 1)).element_coords(0);
    const Material mat;
    const auto s = element_sensitivities(x, x, mat);
    double dmass = 0.0;
    for (int a = 0; a < 20; ++a)
        for (int b = 0; b < 20; ++b) dmass += s.dM(3 * a, 3 * b);
    const double expected = 3.0 * mat.density * 1.0 * kMassScale;
    CHECK(std::abs(dmass - expected) <= 1e-8 * expected);
}

TEST_CASE("element sensitivities match central differences and are symmetric") {
    std::mt19937_64 rng(2);
    const Material mat;
    const double h = 1e-6;
    for (int trial = 0; trial < 5; ++trial) {
        const ElementCoords x = random_element(rng);
        const ElementCoords dx = random_dx(rng);
        const auto s = element_sensitivities(x, dx, mat);
        const auto plus = element_matrices(x + h * dx, mat), minus = element_matrices(x - h * dx, mat);
        const Mat60 fdK = (plus.K - minus.K) / (2 * h), fdM = (plus.M - minus.M) / (2 * h);
        CHECK((s.dK - fdK).norm() <= 1e-6 * s.dK.norm());
        CHECK((s.dM - fdM).norm() <= 1e-6 * s.dM.norm());
        CHECK((s.dK - s.dK.transpose()).norm() <= 1e-12 * s.dK.norm());
        CHECK((s.dM - s.dM.transpose()).norm() <= 1e-12 * s.dM.norm());
    }
}

TEST_CASE("contracted element form equals the explicit quadratic form") {
    std::mt19937_64 rng(3);
    const Material mat;
    for (int trial = 0; trial < 5; ++trial) {
        const ElementCoords x = random_element(rng), dx = random_dx(rng), u = random_dx(rng);
        const double lambda = 1e11 * (trial + 1);
        const auto s = element_sensitivities(x, dx, mat);
        const Eigen::Map<const Eigen::Matrix<double, 60, 1>> uv(u.data());
        const double explicit_value = uv.dot((s.dK - lambda * s.dM) * uv);
        const double contracted = element_eigen_sensitivity(x, dx, u, lambda, mat);
        CHECK(contracted == doctest::Approx(explicit_value).epsilon(1e-10));
    }
}

TEST_CASE("central difference is exact for quadratics") {
    auto q = [](double t) { return 3.0 + 2.0 * t - 5.0 * t * t; };
    CHECK(std::abs(central_difference(q, 1e-3) - 2.0) <= 1e-12);
    CHECK(std::abs(central_difference(q, 0.5) - 2.0) <= 1e-12);
    CHECK_THROWS_AS(central_difference(q, 0.0), Error);
    CHECK(relative_error(0.0, 1e-13) == doctest::Approx(0.1));
}

TEST_CASE("cantilever: widening the beam raises the in-plane bending frequency") {
    // Thickness twice the width, so the first mode bends in-plane.
    const Mesh m = testing::cantilever(100.0, 4.0, 8.0, 10, 1, 2);
    DesignParametrization param;
    param.center_node = {0};
    param.direction = {Vec2(0, 1)};
    param.columns = {{}};
    std::vector<Eigen::Triplet<double>> t;
    for (const auto& n : m.nodes)
        if (n.x.y() == 4.0 && n.x.x() > 0.0) t.emplace_back(3 * n.id + 1, 0, 1.0);
    param.dx_dp.resize(3 * m.node_count(), 1);
    param.dx_dp.setFromTriplets(t.begin(), t.end());

    const DofMap dofs(static_cast<int>(m.node_count()), anchor_bc(m));
    const auto sys = assemble(m, dofs);
    const auto sol = solve_modes(sys.K, sys.M, 2);
    ModalResult modal;
    modal.sectors.resize(4);
    modal.sectors[0].dofs = dofs;
    modal.sectors[0].eigenvalues = sol.eigenvalues;
    modal.sectors[0].vectors = sol.vectors;
    for (int i = 0; i < 2; ++i)
        modal.modes.push_back({frequency_hz(sol.eigenvalues(i)), std::sqrt(sol.eigenvalues(i)), sol.eigenvalues(i),
                               Sector::SS, i, -1});
    // Identify the in-plane mode by its y displacement at the tip.
    const Eigen::VectorXd v0 = dofs.expand(sol.vectors.col(0));
    double uy = 0.0, uz = 0.0;
    for (const auto& n : m.nodes)
        if (n.x.x() == 100.0) uy += std::abs(v0(3 * n.id + 1)), uz += std::abs(v0(3 * n.id + 2));
    REQUIRE(uy > uz);

    const ParameterAdjacency adj(m, param);
    const std::vector<int> modes{0};
    const auto g = frequency_sensitivities(m, adj, modal, modes);
    CHECK(g(0, 0) > 0.0);
    // Growing the width by one unit: f scales roughly with the width.
    CHECK(g(0, 0) == doctest::Approx(modal.modes[0].frequency / 4.0).epsilon(0.2));

    // Scaling dx/dp scales the gradient.
    DesignParametrization twice = param;
    twice.dx_dp *= 2.5;
    const auto g2 = frequency_sensitivities(m, ParameterAdjacency(m, twice), modal, modes);
    CHECK(g2(0, 0) == doctest::Approx(2.5 * g(0, 0)).epsilon(1e-12));

    modal.modes[1].eigenvalue = 0.0;
    const std::vector<int> rigid{1};
    CHECK_THROWS_AS(frequency_sensitivities(m, adj, modal, rigid), Error);
}

TEST_CASE("demo: parallel contracted gradients equal the serial explicit reference") {
    const auto d = testing::demo_model();
    const ModalResult modal = solve_sectors(d.mesh, demo_options());
    std::vector<int> modes(modal.modes.size());
    for (std::size_t i = 0; i < modes.size(); ++i) modes[i] = static_cast<int>(i);
    const ParameterAdjacency adj(d.mesh, d.param);

    const auto ref = frequency_sensitivities_reference(d.mesh, adj, modal, modes);
    const int saved = thread_count();
    set_thread_count(1);
    const auto one = frequency_sensitivities(d.mesh, adj, modal, modes);
    set_thread_count(4);
    const auto four = frequency_sensitivities(d.mesh, adj, modal, modes);
    set_thread_count(saved);

    CHECK((one.array() == four.array()).all());
    CHECK((one - ref).cwiseAbs().maxCoeff() <= 1e-9 * ref.cwiseAbs().maxCoeff());
    CHECK(one.allFinite());

    // Locality: each parameter's element list is exactly the elements
    // touching one of its moving nodes.
    for (int j = 0; j < d.param.size(); ++j) {
        std::set<int> moving;
        for (Eigen::SparseMatrix<double>::InnerIterator it(d.param.dx_dp, j); it; ++it) moving.insert(it.row() / 3);
        std::vector<int> expect;
        for (int e = 0; e < static_cast<int>(d.mesh.element_count()); ++e)
            for (int n : d.mesh.elements[e])
                if (moving.count(n)) {
                    expect.push_back(e);
                    break;
                }
        CHECK(adj.elements_of(j) == expect);
    }
}

TEST_CASE("demo: frequency gradients agree with central differences through the morph") {
    const auto d = testing::demo_model();
    std::mt19937_64 rng(2024);
    const ModalOptions opts = demo_options();
    std::uniform_int_distribution<int> mode(0, opts.n_modes - 1), par(0, d.param.size() - 1);
    std::vector<std::pair<int, int>> pairs;
    for (int k = 0; k < 20; ++k) pairs.emplace_back(mode(rng), par(rng));

    Eigen::VectorXd p = Eigen::VectorXd::Zero(d.param.size());
    const FdReport report = check_frequency_gradients(d.mesh, d.param, p, pairs, 1e-4, opts);
    REQUIRE(report.samples.size() == 20);
    for (const auto& s : report.samples) {
        INFO("mode " << s.row << " parameter " << s.col << " analytic " << s.analytic << " fd " << s.numeric);
        CHECK(s.rel_error <= 1e-4);
    }
    std::ostringstream csv;
    report.write_csv(csv);
    const std::string text = csv.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 21);
}
