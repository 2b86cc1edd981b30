#include "doctest.h"
#include "test_support.hpp"

#include "shapeopt/manufacturability.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace shapeopt;

namespace {

Quad8Mesh2D join(const Quad8Mesh2D& a, const Quad8Mesh2D& b) {
    Quad8Mesh2D m = a;
    const int off = static_cast<int>(a.xy.size());
    m.xy.insert(m.xy.end(), b.xy.begin(), b.xy.end());
    for (auto q : b.quads) {
        for (int& v : q) v += off;
        m.quads.push_back(q);
    }
    return m;
}

struct Scene {
    Mesh mesh;
    Surface2D surface;
    BoundaryLoops loops;
    DesignParametrization param;
};

// Two 4 um wide strips separated by a 2.5 um gap.
Scene parallel_walls() {
    Scene s;
    s.mesh = extrude(join(testing::grid2d(10, 2, 50, 4), testing::grid2d(10, 2, 50, 4, 0, 6.5)), 5.0, 1);
    s.surface = project_top_layer(s.mesh);
    s.loops = extract_boundary_loops(s.surface, {});
    compute_normals(s.loops, s.surface.mesh.xy);
    std::vector<int> all(s.mesh.node_count());
    for (int i = 0; i < static_cast<int>(all.size()); ++i) all[i] = i;
    s.param = build_parametrization(s.surface, s.loops, all);
    return s;
}

int node_at(const Surface2D& s, const Vec2& p) {
    for (int v = 0; v < static_cast<int>(s.size()); ++v)
        if ((s.mesh.xy[v] - p).norm() < 1e-12) return v;
    return -1;
}

int center_index(const DesignParametrization& param, int node) {
    for (int j = 0; j < param.size(); ++j)
        if (param.center_node[j] == node) return j;
    return -1;
}

std::vector<Vec2> morphed_xy(const Surface2D& surface, const DesignParametrization& param, const Eigen::VectorXd& p) {
    const auto u = boundary_displacements(surface, param, p);
    std::vector<Vec2> xy = surface.mesh.xy;
    for (std::size_t v = 0; v < xy.size(); ++v) xy[v] += u[v];
    return xy;
}

// Closed random star polygon around `center`.
std::vector<Segment2> star(std::mt19937_64& rng, const Vec2& center, int n, double r0) {
    std::uniform_real_distribution<double> u(0.4, 1.0);
    std::vector<Vec2> pts;
    for (int k = 0; k < n; ++k) {
        const double a = 2 * std::numbers::pi * k / n;
        pts.push_back(center + r0 * u(rng) * Vec2(std::cos(a), std::sin(a)));
    }
    std::vector<Segment2> segs;
    for (int k = 0; k < n; ++k) segs.push_back({pts[k], pts[(k + 1) % n]});
    return segs;
}

void check_same(const TraceResult& a, const TraceResult& b) {
    CHECK(a.segment == b.segment);
    CHECK(a.s == b.s);
    CHECK(a.t == b.t);
}

}  // namespace

TEST_CASE("intersect: axis-aligned crossings and parallel lines") {
    auto h = intersect(Vec2(0, 0), Vec2(1, 0), Vec2(3, -2), Vec2(3, 2));
    REQUIRE(h);
    CHECK(h->s == 3.0);
    CHECK(h->t == 0.5);
    h = intersect(Vec2(0, 0), Vec2(0, 1), Vec2(-1, 5), Vec2(1, 5));
    REQUIRE(h);
    CHECK(h->s == 5.0);
    CHECK(h->t == 0.5);
    CHECK_FALSE(intersect(Vec2(0, 0), Vec2(1, 0), Vec2(-1, 1), Vec2(4, 1)));
    CHECK_FALSE(intersect(Vec2(0, 0), Vec2(1, 0), Vec2(3, 1), Vec2(3, 2)));
    // Signed s behind the origin.
    h = intersect(Vec2(0, 0), Vec2(1, 0), Vec2(-2, -1), Vec2(-2, 1));
    REQUIRE(h);
    CHECK(h->s == -2.0);
}

TEST_CASE("segment index: unit square and empty queries") {
    const std::vector<Segment2> square{{Vec2(0, 0), Vec2(1, 0)}, {Vec2(1, 0), Vec2(1, 1)},
                                       {Vec2(1, 1), Vec2(0, 1)}, {Vec2(0, 1), Vec2(0, 0)}};
    const SegmentIndex index(square);
    const auto hit = index.trace(Vec2(0.25, 0.5), Vec2(1, 0), TraceSide::outward);
    CHECK(hit.segment == 1);
    CHECK(hit.s == doctest::Approx(0.75));
    const auto back = index.trace(Vec2(0.25, 0.5), Vec2(1, 0), TraceSide::inward);
    CHECK(back.segment == 3);
    CHECK(back.value() == doctest::Approx(0.25));
    const auto none = index.trace(Vec2(5, 5), Vec2(1, 0), TraceSide::outward);
    CHECK_FALSE(none.found());
    CHECK(std::isinf(none.value()));
    const std::vector<int> skip{1};
    CHECK_FALSE(index.trace(Vec2(0.25, 0.5), Vec2(1, 0), TraceSide::outward, skip).found());
    CHECK_FALSE(SegmentIndex({}).trace(Vec2(0, 0), Vec2(1, 0), TraceSide::outward).found());
}

TEST_CASE("segment index equals brute force on random polygon scenes") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> pos(-60, 60), ang(0, 2 * std::numbers::pi);
    std::uniform_int_distribution<int> count(3, 40);
    int hits = 0;
    for (int scene = 0; scene < 60; ++scene) {
        std::vector<Segment2> segs;
        const int polys = 1 + scene % 6;
        for (int k = 0; k < polys; ++k) {
            const auto s = star(rng, Vec2(pos(rng), pos(rng)), count(rng), 5 + std::abs(pos(rng)) / 4);
            segs.insert(segs.end(), s.begin(), s.end());
        }
        const SegmentIndex index(segs);
        for (int q = 0; q < 40; ++q) {
            const double a = ang(rng);
            const Vec2 A(pos(rng), pos(rng)), n(std::cos(a), std::sin(a));
            for (auto side : {TraceSide::inward, TraceSide::outward}) {
                const auto fast = index.trace(A, n, side), slow = index.trace_brute_force(A, n, side);
                check_same(fast, slow);
                hits += slow.found();
            }
        }
        // Rays leaving polygon vertices along their bisectors hit the vertex
        // segments exactly at an end; ties resolve identically.
        for (int k = 0; k < static_cast<int>(segs.size()); ++k) {
            const Vec2 A = segs[k].b;
            const std::vector<int> skip{k};
            const Vec2 n = (segs[k].c - segs[k].b).normalized();
            const Vec2 normal(n.y(), -n.x());
            check_same(index.trace(A, normal, TraceSide::inward, skip),
                       index.trace_brute_force(A, normal, TraceSide::inward, skip));
            check_same(index.trace(A, normal, TraceSide::outward, skip),
                       index.trace_brute_force(A, normal, TraceSide::outward, skip));
        }
    }
    CHECK(hits > 1000);
}

TEST_CASE("segment index: mirrored scene gives identical traces") {
    std::mt19937_64 rng(5);
    std::vector<Segment2> segs, mirrored;
    for (int k = 0; k < 5; ++k) {
        std::uniform_real_distribution<double> pos(-40, 40);
        const auto s = star(rng, Vec2(pos(rng), pos(rng)), 17, 12);
        segs.insert(segs.end(), s.begin(), s.end());
    }
    for (const auto& s : segs) mirrored.push_back({Vec2(-s.b.x(), s.b.y()), Vec2(-s.c.x(), s.c.y())});
    const SegmentIndex a(segs), b(mirrored);
    std::uniform_real_distribution<double> pos(-50, 50), ang(0, 2 * std::numbers::pi);
    for (int q = 0; q < 200; ++q) {
        const double t = ang(rng);
        const Vec2 A(pos(rng), pos(rng)), n(std::cos(t), std::sin(t));
        check_same(a.trace(A, n, TraceSide::outward), b.trace(Vec2(-A.x(), A.y()), Vec2(-n.x(), n.y()), TraceSide::outward));
    }
}

TEST_CASE("parallel walls: width, gap and their sensitivities") {
    const Scene s = parallel_walls();
    const auto r = evaluate_constraints(s.loops, s.surface.mesh.xy, s.param);
    const int A = node_at(s.surface, Vec2(25, 4));
    const int c = center_index(s.param, A);
    REQUIRE(c >= 0);
    CHECK(std::abs(r.width[c].value() - 4.0) <= 1e-9);
    CHECK(std::abs(r.distance[c].value() - 2.5) <= 1e-9);

    // Own parameter pushes A outward by one third of a unit.
    CHECK(r.width_grad(c, c) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(r.distance_grad(c, c) == doctest::Approx(-1.0 / 3).epsilon(1e-12));
    // The opposite wall's parameter moves it toward A.
    const int jo = center_index(s.param, node_at(s.surface, Vec2(25, 6.5)));
    REQUIRE(jo >= 0);
    CHECK(r.distance_grad(c, jo) == doctest::Approx(-1.0 / 3).epsilon(1e-12));
    CHECK(r.width_grad(c, jo) == 0.0);
    // A parameter far away has no influence.
    const int jf = center_index(s.param, node_at(s.surface, Vec2(50, 10.5)));
    CHECK(r.distance_grad(c, jf) == 0.0);
    CHECK(r.width_grad(c, jf) == 0.0);

    // Lower edge of the lower strip faces open space.
    const int low = center_index(s.param, node_at(s.surface, Vec2(25, 0)));
    CHECK(std::isinf(r.distance[low].value()));
    CHECK(r.distance_grad.row(low).isZero());
    CHECK(std::abs(r.width[low].value() - 4.0) <= 1e-9);

    const auto brute = evaluate_constraints(s.loops, s.surface.mesh.xy, s.param, true);
    for (int k = 0; k < r.size(); ++k) {
        check_same(r.width[k], brute.width[k]);
        check_same(r.distance[k], brute.distance[k]);
    }
    // Every hit lies on a segment and has positive length.
    for (int k = 0; k < r.size(); ++k)
        for (const auto* h : {&r.width[k], &r.distance[k]})
            if (h->found()) {
                CHECK(h->value() > 0.0);
                CHECK(h->t >= -kEndpointTolerance);
                CHECK(h->t <= 1 + kEndpointTolerance);
            }

    std::ostringstream csv;
    write_constraints_header(csv);
    write_constraints_rows(csv, 0, r, ManufacturabilityOptions{});
    const std::string text = csv.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == r.size() + 1);
}

TEST_CASE("constraint sensitivities match central differences on the demo") {
    const auto d = testing::demo_model();
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXd p(d.param.size());
    for (int j = 0; j < p.size(); ++j) p(j) = u(rng);
    const auto xy = morphed_xy(d.surface, d.param, p);
    const auto r = evaluate_constraints(d.loops, xy, d.param);
    const auto brute = evaluate_constraints(d.loops, xy, d.param, true);
    for (int k = 0; k < r.size(); ++k) {
        check_same(r.width[k], brute.width[k]);
        check_same(r.distance[k], brute.distance[k]);
    }

    const double h = 1e-6;
    int compared = 0;
    std::uniform_int_distribution<int> pick(0, d.param.size() - 1);
    for (int trial = 0; trial < 40; ++trial) {
        const int j = pick(rng);
        Eigen::VectorXd pp = p, pm = p;
        pp(j) += h;
        pm(j) -= h;
        const auto rp = evaluate_constraints(d.loops, morphed_xy(d.surface, d.param, pp), d.param);
        const auto rm = evaluate_constraints(d.loops, morphed_xy(d.surface, d.param, pm), d.param);
        for (int c = 0; c < r.size(); ++c) {
            const std::pair<const TraceResult*, const Eigen::MatrixXd*> items[] = {{&r.width[c], &r.width_grad},
                                                                                   {&r.distance[c], &r.distance_grad}};
            for (int side = 0; side < 2; ++side) {
                const TraceResult& base = *items[side].first;
                const TraceResult& plus = side == 0 ? rp.width[c] : rp.distance[c];
                const TraceResult& minus = side == 0 ? rm.width[c] : rm.distance[c];
                // Skip segment switches and end-point hits.
                if (!base.found() || base.endpoint || plus.segment != base.segment || minus.segment != base.segment)
                    continue;
                const double fd = (plus.value() - minus.value()) / (2 * h);
                const double an = (*items[side].second)(c, j);
                CHECK(std::abs(an - fd) <= 1e-6 * std::max(std::abs(an), 1.0));
                ++compared;
            }
        }
    }
    CHECK(compared > 100);
}
