#include "shapeopt/mesh.hpp"

#include "shapeopt/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_map>

namespace shapeopt {

const std::array<std::array<int, 2>, 12> kHex20EdgeCorners = {{
    {0, 1}, {1, 2}, {2, 3}, {3, 0},
    {4, 5}, {5, 6}, {6, 7}, {7, 4},
    {0, 4}, {1, 5}, {2, 6}, {3, 7},
}};

const std::array<std::array<int, 2>, 4> kQuad8EdgeCorners = {{{0, 1}, {1, 2}, {2, 3}, {3, 0}}};

void Material::validate() const {
    if (!(young_modulus > 0.0)) throw Error("material: Young's modulus must be positive");
    if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5))
        throw Error("material: Poisson's ratio must lie in [0, 0.5)");
    if (!(density > 0.0)) throw Error("material: density must be positive");
}

const std::vector<int>& Mesh::set(const std::string& name) const {
    auto it = node_sets.find(name);
    if (it == node_sets.end()) throw Error("mesh has no node set '" + name + "'");
    return it->second;
}

Eigen::Matrix<double, 3, 20> Mesh::element_coords(int e) const {
    Eigen::Matrix<double, 3, 20> x;
    const auto& el = elements[e];
    for (int a = 0; a < 20; ++a) x.col(a) = nodes[el[a]].x;
    return x;
}

void Mesh::validate() const {
    const int n = static_cast<int>(nodes.size());
    for (int i = 0; i < n; ++i)
        if (nodes[i].id != i) throw Error("node ids must equal their index");
    if (x0.size() != nodes.size()) throw Error("initial coordinates do not match node count");
    for (std::size_t e = 0; e < elements.size(); ++e)
        for (int id : elements[e])
            if (id < 0 || id >= n)
                throw Error("element " + std::to_string(e) + " references missing node " + std::to_string(id));
    for (const auto& [name, ids] : node_sets)
        for (int id : ids)
            if (id < 0 || id >= n)
                throw Error("node set '" + name + "' references missing node " + std::to_string(id));

    std::unordered_map<int, Vec2> column_xy;
    for (const auto& node : nodes) {
        auto [it, inserted] = column_xy.try_emplace(node.column, node.x.head<2>());
        if (!inserted && (it->second - node.x.head<2>()).norm() > 1e-9)
            throw Error("column " + std::to_string(node.column) + " is not aligned in z");
    }
    material.validate();
}

std::vector<bool> Quad8Mesh2D::corner_mask() const {
    std::vector<bool> corner(xy.size(), false);
    for (const auto& q : quads)
        for (int a = 0; a < 4; ++a) corner[q[a]] = true;
    return corner;
}

double BoundaryLoop::distance(int i, int j) const {
    const double d = std::abs(arc[i] - arc[j]);
    return std::min(d, perimeter - d);
}

int BoundaryLoops::prev_node(int node) const {
    const auto& loop = loops[loop_of[node]];
    const int n = static_cast<int>(loop.nodes.size());
    return loop.nodes[(position[node] + n - 1) % n];
}

int BoundaryLoops::next_node(int node) const {
    const auto& loop = loops[loop_of[node]];
    const int n = static_cast<int>(loop.nodes.size());
    return loop.nodes[(position[node] + 1) % n];
}

std::vector<int> BoundaryLoops::exterior_corners() const {
    std::vector<int> out;
    for (const auto& loop : loops) out.insert(out.end(), loop.nodes.begin(), loop.nodes.end());
    return out;
}

// ---------------------------------------------------------------------------
// Extrusion and projection

namespace {

double corner_cross(const Quad8Mesh2D& m, const Quad8& q, int c) {
    const Vec2& p = m.xy[q[c]];
    const Vec2 e1 = m.xy[q[(c + 1) % 4]] - p;
    const Vec2 e2 = m.xy[q[(c + 3) % 4]] - p;
    return e1.x() * e2.y() - e1.y() * e2.x();
}

}  // namespace

Mesh extrude(const Quad8Mesh2D& mesh2d, double thickness, int n_layers) {
    if (!(thickness > 0.0)) throw Error("extrude: thickness must be positive");
    if (n_layers < 1) throw Error("extrude: at least one layer required");
    const int n2 = static_cast<int>(mesh2d.xy.size());
    for (std::size_t q = 0; q < mesh2d.quads.size(); ++q) {
        for (int id : mesh2d.quads[q])
            if (id < 0 || id >= n2) throw Error("extrude: quad references missing node");
        for (int c = 0; c < 4; ++c)
            if (!(corner_cross(mesh2d, mesh2d.quads[q], c) > 0.0))
                throw InvalidElementError(static_cast<int>(q), "degenerate or clockwise quad");
    }

    const auto corner = mesh2d.corner_mask();
    const int levels = 2 * n_layers + 1;
    Mesh mesh;
    mesh.epi_thickness = thickness;
    mesh.n_layers = n_layers;

    // id_at[c][level] = 3D node id, -1 where the column has no node.
    std::vector<std::vector<int>> id_at(n2, std::vector<int>(levels, -1));
    for (int c = 0; c < n2; ++c) {
        for (int l = 0; l < levels; ++l) {
            if (l % 2 == 1 && !corner[c]) continue;
            Node node;
            node.id = static_cast<int>(mesh.nodes.size());
            node.x = Vec3(mesh2d.xy[c].x(), mesh2d.xy[c].y(), thickness * l / (2.0 * n_layers));
            node.column = c;
            node.layer = l;
            node.kind = (corner[c] && l % 2 == 0) ? NodeKind::corner : NodeKind::midside;
            id_at[c][l] = node.id;
            mesh.nodes.push_back(node);
        }
    }

    for (int k = 0; k < n_layers; ++k) {
        const int lo = 2 * k, mid = 2 * k + 1, hi = 2 * k + 2;
        for (const auto& q : mesh2d.quads) {
            Hex20 h;
            for (int a = 0; a < 4; ++a) {
                h[a] = id_at[q[a]][lo];
                h[4 + a] = id_at[q[a]][hi];
                h[8 + a] = id_at[q[4 + a]][lo];
                h[12 + a] = id_at[q[4 + a]][hi];
                h[16 + a] = id_at[q[a]][mid];
            }
            mesh.elements.push_back(h);
        }
    }

    mesh.x0.reserve(mesh.nodes.size());
    for (const auto& node : mesh.nodes) mesh.x0.push_back(node.x);
    return mesh;
}

Surface2D project_top_layer(const Mesh& mesh) {
    const int top = 2 * mesh.n_layers;
    Surface2D s;

    std::map<int, int> column_index;
    for (const auto& node : mesh.nodes) column_index.emplace(node.column, 0);
    int next = 0;
    for (auto& [col, idx] : column_index) {
        idx = next++;
        s.columns.push_back(col);
    }
    s.mesh.xy.assign(s.columns.size(), Vec2::Zero());
    s.column_nodes.assign(s.columns.size(), {});
    s.node_to_2d.assign(mesh.nodes.size(), -1);
    std::vector<bool> has_top(s.columns.size(), false);

    for (const auto& node : mesh.nodes) {
        const int c = column_index[node.column];
        s.node_to_2d[node.id] = c;
        s.column_nodes[c].push_back(node.id);
        if (node.layer == top) {
            s.mesh.xy[c] = node.x.head<2>();
            has_top[c] = true;
        }
    }
    for (std::size_t c = 0; c < s.columns.size(); ++c) {
        if (!has_top[c]) throw Error("column " + std::to_string(s.columns[c]) + " has no top-layer node");
        auto& ids = s.column_nodes[c];
        std::sort(ids.begin(), ids.end(),
                  [&](int a, int b) { return mesh.nodes[a].layer < mesh.nodes[b].layer; });
        for (int id : ids)
            if ((mesh.nodes[id].x.head<2>() - s.mesh.xy[c]).norm() > 1e-9)
                throw Error("column " + std::to_string(s.columns[c]) + " is not aligned in z");
    }

    for (const auto& h : mesh.elements) {
        if (mesh.nodes[h[4]].layer != top) continue;
        Quad8 q;
        for (int a = 0; a < 4; ++a) {
            q[a] = s.node_to_2d[h[4 + a]];
            q[4 + a] = s.node_to_2d[h[12 + a]];
        }
        s.mesh.quads.push_back(q);
    }
    s.is_corner = s.mesh.corner_mask();
    return s;
}

// ---------------------------------------------------------------------------
// Boundary loops and normals

BoundaryLoops extract_boundary_loops(const Surface2D& surface, std::span<const int> region) {
    const auto& m = surface.mesh;
    const int n2 = static_cast<int>(m.xy.size());

    std::vector<bool> in_region(n2, region.empty());
    for (int id : region) {
        if (id < 0 || id >= static_cast<int>(surface.node_to_2d.size()))
            throw Error("region references missing node " + std::to_string(id));
        in_region[surface.node_to_2d[id]] = true;
    }

    struct EdgeUse {
        int a, b, mid, quad, count;
    };
    std::map<std::pair<int, int>, EdgeUse> edges;
    for (std::size_t q = 0; q < m.quads.size(); ++q) {
        const auto& quad = m.quads[q];
        if (!std::all_of(quad.begin(), quad.end(), [&](int v) { return in_region[v]; })) continue;
        for (int k = 0; k < 4; ++k) {
            const int a = quad[k], b = quad[(k + 1) % 4];
            auto [it, inserted] = edges.try_emplace({std::min(a, b), std::max(a, b)},
                                                    EdgeUse{a, b, quad[4 + k], static_cast<int>(q), 0});
            if (++it->second.count > 2)
                throw Error("non-manifold edge between 2D nodes " + std::to_string(a) + " and " +
                            std::to_string(b));
        }
    }
    if (edges.empty()) throw Error("boundary extraction: region selects no elements");

    std::map<int, const EdgeUse*> outgoing;
    for (const auto& [key, use] : edges) {
        if (use.count != 1) continue;
        if (!outgoing.emplace(use.a, &use).second)
            throw Error("boundary pinches at 2D node " + std::to_string(use.a));
    }

    BoundaryLoops out;
    out.loop_of.assign(n2, -1);
    out.position.assign(n2, -1);
    out.on_symmetry.assign(n2, false);
    out.normals0.assign(n2, Vec2::Zero());

    std::set<int> visited;
    for (const auto& [start, first] : outgoing) {
        if (visited.count(start)) continue;
        BoundaryLoop loop;
        loop.first_segment = static_cast<int>(out.segments.size());
        const int loop_id = static_cast<int>(out.loops.size());
        int cur = start;
        double arc = 0.0;
        do {
            auto it = outgoing.find(cur);
            if (it == outgoing.end()) throw Error("open boundary chain at 2D node " + std::to_string(cur));
            const EdgeUse& e = *it->second;
            visited.insert(cur);
            out.loop_of[cur] = loop_id;
            out.position[cur] = static_cast<int>(loop.nodes.size());
            loop.nodes.push_back(cur);
            loop.arc.push_back(arc);
            arc += (m.xy[e.b] - m.xy[e.a]).norm();
            out.segments.push_back({e.a, e.b, e.mid, e.quad, loop_id, false});
            cur = e.b;
        } while (cur != start);
        loop.perimeter = arc;
        out.loops.push_back(std::move(loop));
    }
    return out;
}

void mark_symmetry(BoundaryLoops& loops, const Surface2D& surface, const Mesh& mesh) {
    const int n2 = static_cast<int>(surface.size());
    std::vector<bool> on_x(n2, false), on_y(n2, false);
    if (mesh.has_set(sets::sym_x_face))
        for (int id : mesh.set(sets::sym_x_face)) on_x[surface.node_to_2d[id]] = true;
    if (mesh.has_set(sets::sym_y_face))
        for (int id : mesh.set(sets::sym_y_face)) on_y[surface.node_to_2d[id]] = true;
    for (int i = 0; i < n2; ++i) loops.on_symmetry[i] = on_x[i] || on_y[i];
    for (auto& seg : loops.segments)
        seg.symmetry = (on_x[seg.a] && on_x[seg.b]) || (on_y[seg.a] && on_y[seg.b]);
}

void compute_normals(BoundaryLoops& loops, std::span<const Vec2> xy) {
    auto edge_normal = [&](const BoundarySegment& s) {
        const Vec2 t = xy[s.b] - xy[s.a];
        const double len = t.norm();
        if (!(len > 0.0))
            throw Error("zero-length boundary edge at 2D node " + std::to_string(s.a));
        return Vec2(t.y() / len, -t.x() / len);
    };

    for (const auto& loop : loops.loops) {
        const int n = static_cast<int>(loop.nodes.size());
        for (int i = 0; i < n; ++i) {
            const auto& prev = loops.segments[loop.first_segment + (i + n - 1) % n];
            const auto& next = loops.segments[loop.first_segment + i];
            Vec2 sum;
            if (prev.symmetry != next.symmetry)
                sum = prev.symmetry ? edge_normal(next) : edge_normal(prev);
            else
                sum = edge_normal(prev) + edge_normal(next);
            const double len = sum.norm();
            if (!(len > 1e-12))
                throw Error("boundary folds back on itself at 2D node " + std::to_string(loop.nodes[i]));
            loops.normals0[loop.nodes[i]] = sum / len;
        }
    }
}

bool point_in_material(const Quad8Mesh2D& mesh, const Vec2& p) {
    for (const auto& q : mesh.quads) {
        bool inside = false;
        for (int a = 0, b = 3; a < 4; b = a++) {
            const Vec2& pa = mesh.xy[q[a]];
            const Vec2& pb = mesh.xy[q[b]];
            if ((pa.y() > p.y()) != (pb.y() > p.y())) {
                const double xc = pb.x() + (p.y() - pb.y()) * (pa.x() - pb.x()) / (pa.y() - pb.y());
                if (p.x() < xc) inside = !inside;
            }
        }
        if (inside) return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Demo resonator

void DemoSpec::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0)) throw Error(std::string("demo spec: ") + name + " must be positive");
    };
    positive(mass_half_x, "mass_half_x");
    positive(mass_half_y, "mass_half_y");
    positive(spring_width, "spring_width");
    positive(spring_length, "spring_length");
    positive(anchor_length, "anchor_length");
    positive(element_size, "element_size");
    positive(thickness, "thickness");
    if (spring_count < 1) throw Error("demo spec: spring_count must be at least 1");
    if (n_layers < 1) throw Error("demo spec: n_layers must be at least 1");
    if (anchor_margin < 0.0 || spring_offset < 0.0)
        throw Error("demo spec: anchor_margin and spring_offset must be non-negative");
    if (spring_count > 1 && !(spring_pitch > spring_width))
        throw Error("demo spec: spring_pitch must exceed spring_width");
    const double leftmost = mass_half_x - spring_offset - (spring_count - 1) * spring_pitch - spring_width;
    if (!(leftmost > 0.0))
        throw Error("demo spec: springs do not fit on the mass (spring wider than mass)");
    if (leftmost - anchor_margin < 0.0)
        throw Error("demo spec: anchor pad crosses the x symmetry plane");
    double feature = std::min({spring_width, anchor_length, spring_length});
    if (spring_count > 1) feature = std::min(feature, spring_pitch - spring_width);
    if (anchor_margin > 0.0) feature = std::min(feature, anchor_margin);
    if (element_size > feature + 1e-12)
        throw Error("demo spec: element_size " + std::to_string(element_size) +
                    " exceeds the smallest feature size " + std::to_string(feature));
    material.validate();
}

namespace {

struct Rect {
    double x0, x1, y0, y1;
    bool contains(double x, double y) const { return x > x0 && x < x1 && y > y0 && y < y1; }
};

std::vector<double> subdivide(std::vector<double> breaks, const std::function<double(double, double)>& size_of) {
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end(),
                             [](double a, double b) { return std::abs(a - b) < 1e-9; }),
                 breaks.end());
    std::vector<double> out{breaks.front()};
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        const double a = breaks[i], b = breaks[i + 1];
        const double h = size_of(a, b);
        const int n = std::max(1, static_cast<int>(std::ceil((b - a) / h - 1e-9)));
        for (int k = 1; k < n; ++k) out.push_back(a + (b - a) * k / n);
        out.push_back(b);
    }
    return out;
}

}  // namespace

Mesh generate_demo_resonator(const DemoSpec& spec) {
    spec.validate();
    const double mx = spec.mass_half_x, my = spec.mass_half_y;
    const double w = spec.spring_width, L = spec.spring_length;
    const double h_fine = spec.element_size;
    const double h_len = spec.length_element_size > 0.0 ? spec.length_element_size : h_fine;
    const double h_mass = spec.mass_element_size > 0.0 ? spec.mass_element_size : 4.0 * h_fine;

    enum Label { kVoid = 0, kMass, kSpring, kAnchor };
    const Rect mass{0.0, mx, 0.0, my};
    std::vector<Rect> springs;
    for (int k = 0; k < spec.spring_count; ++k) {
        const double right = mx - spec.spring_offset - k * spec.spring_pitch;
        springs.push_back({right - w, right, my, my + L});
    }
    const Rect anchor{springs.back().x0 - spec.anchor_margin, springs.front().x1 + spec.anchor_margin,
                      my + L, my + L + spec.anchor_length};

    std::vector<double> xb{0.0, mx, anchor.x0, anchor.x1};
    for (const auto& s : springs) {
        xb.push_back(s.x0);
        xb.push_back(s.x1);
    }
    const auto xs = subdivide(xb, [&](double a, double b) {
        const double c = 0.5 * (a + b);
        return (c > anchor.x0 && c < anchor.x1) ? h_fine : h_mass;
    });
    const auto ys = subdivide({0.0, my, my + L, my + L + spec.anchor_length}, [&](double a, double b) {
        const double c = 0.5 * (a + b);
        if (c < my) return h_mass;
        if (c < my + L) return h_len;
        return h_fine;
    });

    const int nx = static_cast<int>(xs.size()) - 1, ny = static_cast<int>(ys.size()) - 1;
    Quad8Mesh2D m2;
    std::vector<int> quad_label;
    std::map<std::pair<int, int>, int> corner_id;
    std::map<std::array<int, 4>, int> edge_id;
    auto corner = [&](int i, int j) {
        auto [it, inserted] = corner_id.try_emplace({i, j}, static_cast<int>(m2.xy.size()));
        if (inserted) m2.xy.emplace_back(xs[i], ys[j]);
        return it->second;
    };
    auto edge = [&](int i0, int j0, int i1, int j1) {
        std::array<int, 4> key{std::min(i0, i1), std::min(j0, j1), std::max(i0, i1), std::max(j0, j1)};
        auto [it, inserted] = edge_id.try_emplace(key, static_cast<int>(m2.xy.size()));
        if (inserted) m2.xy.push_back(0.5 * (Vec2(xs[i0], ys[j0]) + Vec2(xs[i1], ys[j1])));
        return it->second;
    };

    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const double cx = 0.5 * (xs[i] + xs[i + 1]), cy = 0.5 * (ys[j] + ys[j + 1]);
            int label = kVoid;
            for (const auto& s : springs)
                if (s.contains(cx, cy)) label = kSpring;
            if (label == kVoid && anchor.contains(cx, cy)) label = kAnchor;
            if (label == kVoid && mass.contains(cx, cy)) label = kMass;
            if (label == kVoid) continue;
            Quad8 q;
            q[0] = corner(i, j);
            q[1] = corner(i + 1, j);
            q[2] = corner(i + 1, j + 1);
            q[3] = corner(i, j + 1);
            q[4] = edge(i, j, i + 1, j);
            q[5] = edge(i + 1, j, i + 1, j + 1);
            q[6] = edge(i + 1, j + 1, i, j + 1);
            q[7] = edge(i, j + 1, i, j);
            m2.quads.push_back(q);
            quad_label.push_back(label);
        }
    }

    Mesh mesh = extrude(m2, spec.thickness, spec.n_layers);
    mesh.material = spec.material;

    const int n2 = static_cast<int>(m2.xy.size());
    std::vector<bool> spring2d(n2, false), anchor2d(n2, false);
    for (std::size_t q = 0; q < m2.quads.size(); ++q)
        for (int v : m2.quads[q]) {
            if (quad_label[q] == kSpring) spring2d[v] = true;
            if (quad_label[q] == kAnchor) anchor2d[v] = true;
        }

    auto& spring_set = mesh.node_sets[sets::springs];
    auto& anchor_set = mesh.node_sets[sets::anchor_base];
    auto& symx = mesh.node_sets[sets::sym_x_face];
    auto& symy = mesh.node_sets[sets::sym_y_face];
    for (const auto& node : mesh.nodes) {
        if (spring2d[node.column]) spring_set.push_back(node.id);
        if (anchor2d[node.column] && node.layer == 0) anchor_set.push_back(node.id);
        if (node.x.x() == 0.0) symx.push_back(node.id);
        if (node.x.y() == 0.0) symy.push_back(node.id);
    }
    mesh.validate();
    return mesh;
}

// ---------------------------------------------------------------------------
// Full-model mirroring

Mesh mirror_full(const Mesh& quarter) {
    const Surface2D s = project_top_layer(quarter);
    const std::array<Vec2, 4> signs{Vec2(1, 1), Vec2(-1, 1), Vec2(1, -1), Vec2(-1, -1)};

    Quad8Mesh2D full;
    std::vector<int> source;  // full 2D node -> quarter 2D node
    std::map<std::pair<int, int>, int> image_id;
    auto image = [&](int v, int k) {
        Vec2 sg = signs[k];
        if (s.mesh.xy[v].x() == 0.0) sg.x() = 1.0;
        if (s.mesh.xy[v].y() == 0.0) sg.y() = 1.0;
        const int canonical = (sg.x() > 0 ? 0 : 1) + (sg.y() > 0 ? 0 : 2);
        auto [it, inserted] = image_id.try_emplace({v, canonical}, static_cast<int>(full.xy.size()));
        if (inserted) {
            full.xy.push_back(s.mesh.xy[v].cwiseProduct(sg));
            source.push_back(v);
        }
        return it->second;
    };

    for (int k = 0; k < 4; ++k) {
        const bool flip = signs[k].x() * signs[k].y() < 0.0;
        for (const auto& q : s.mesh.quads) {
            Quad8 img;
            for (int a = 0; a < 8; ++a) img[a] = image(q[a], k);
            if (flip) img = {img[0], img[3], img[2], img[1], img[7], img[6], img[5], img[4]};
            full.quads.push_back(img);
        }
    }

    Mesh mesh = extrude(full, quarter.epi_thickness, quarter.n_layers);
    mesh.material = quarter.material;

    // Copy set membership by (quarter column, layer).
    for (const auto& [name, ids] : quarter.node_sets) {
        if (name == sets::sym_x_face || name == sets::sym_y_face) continue;
        std::set<std::pair<int, int>> members;
        for (int id : ids) members.insert({s.node_to_2d[id], quarter.nodes[id].layer});
        auto& out = mesh.node_sets[name];
        for (const auto& node : mesh.nodes)
            if (members.count({source[node.column], node.layer})) out.push_back(node.id);
    }
    return mesh;
}

}  // namespace shapeopt
