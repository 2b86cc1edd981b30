#include "shapeopt/shapeparam.hpp"

#include "shapeopt/error.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace shapeopt {

DesignParametrization build_parametrization(const Surface2D& surface, const BoundaryLoops& loops,
                                            std::span<const int> design_region, double d_max) {
    if (!(d_max > 0.0)) throw Error("parametrization: d_max must be positive");
    if (design_region.empty()) throw Error("parametrization: design region is empty");
    const int n2 = static_cast<int>(surface.size());
    std::vector<bool> in_region(n2, false);
    for (int id : design_region) {
        if (id < 0 || id >= static_cast<int>(surface.node_to_2d.size()))
            throw Error("parametrization: design region references missing node " + std::to_string(id));
        in_region[surface.node_to_2d[id]] = true;
    }

    DesignParametrization param;
    param.d_max = d_max;
    for (std::size_t l = 0; l < loops.loops.size(); ++l) {
        const auto& loop = loops.loops[l];
        for (std::size_t i = 0; i < loop.nodes.size(); ++i) {
            const int c = loop.nodes[i];
            if (!in_region[c] || loops.on_symmetry[c]) continue;
            param.center_node.push_back(c);
            param.direction.push_back(loops.normals0[c]);

            std::map<int, double> weight;
            double total = 0.0;
            for (std::size_t k = 0; k < loop.nodes.size(); ++k) {
                const int v = loop.nodes[k];
                if (loops.on_symmetry[v]) continue;
                const double w = std::max(d_max - loop.distance(static_cast<int>(i), static_cast<int>(k)), 0.0);
                if (w > 0.0) {
                    weight[v] = w;
                    total += w;
                }
            }
            std::map<int, Vec2> coeff;
            for (const auto& [v, w] : weight) coeff[v] = (w / total) * loops.normals0[c];
            // Boundary mid-side nodes follow the average of their corners.
            for (int s = 0; s < static_cast<int>(loop.nodes.size()); ++s) {
                const auto& seg = loops.segments[loop.first_segment + s];
                const auto a = coeff.find(seg.a), b = coeff.find(seg.b);
                if (a == coeff.end() && b == coeff.end()) continue;
                const Vec2 ca = a == coeff.end() ? Vec2::Zero() : a->second;
                const Vec2 cb = b == coeff.end() ? Vec2::Zero() : b->second;
                coeff[seg.mid] = 0.5 * (ca + cb);
            }
            std::vector<DesignParametrization::Entry> column;
            for (const auto& [v, cv] : coeff) column.push_back({v, cv});
            param.columns.push_back(std::move(column));
        }
    }
    if (param.center_node.empty()) throw Error("parametrization: design region contains no exterior corner node");

    std::size_t n3 = 0;
    for (const auto& col : surface.column_nodes) n3 += col.size();
    std::vector<Eigen::Triplet<double>> triplets;
    for (int j = 0; j < param.size(); ++j)
        for (const auto& e : param.columns[j])
            for (int id : surface.column_nodes[e.node2d])
                for (int d = 0; d < 2; ++d)
                    if (e.coeff(d) != 0.0) triplets.emplace_back(3 * id + d, j, e.coeff(d));
    param.dx_dp.resize(static_cast<Eigen::Index>(3 * n3), param.size());
    param.dx_dp.setFromTriplets(triplets.begin(), triplets.end());
    return param;
}

void check_bounds(const DesignParametrization& param, const Eigen::VectorXd& p) {
    if (p.size() != param.size())
        throw Error("parameter vector has " + std::to_string(p.size()) + " entries, expected " +
                    std::to_string(param.size()));
    for (Eigen::Index j = 0; j < p.size(); ++j)
        if (!(p(j) >= param.p_min && p(j) <= param.p_max)) {
            std::ostringstream msg;
            msg << "parameter " << j << " = " << p(j) << " outside [" << param.p_min << ", " << param.p_max << "]";
            throw Error(msg.str());
        }
}

std::vector<Vec3> apply_parameters(std::span<const Vec3> x0, const DesignParametrization& param,
                                   const Eigen::VectorXd& p) {
    check_bounds(param, p);
    if (static_cast<Eigen::Index>(3 * x0.size()) != param.dx_dp.rows())
        throw Error("apply_parameters: coordinate count does not match the parametrization");
    std::vector<Vec3> x(x0.begin(), x0.end());
    const Eigen::VectorXd dx = param.dx_dp * p;
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i].x() += dx(3 * i);
        x[i].y() += dx(3 * i + 1);
    }
    return x;
}

std::vector<Vec2> boundary_displacements(const Surface2D& surface, const DesignParametrization& param,
                                         const Eigen::VectorXd& p) {
    check_bounds(param, p);
    std::vector<Vec2> u(surface.size(), Vec2::Zero());
    for (int j = 0; j < param.size(); ++j)
        for (const auto& e : param.columns[j]) u[e.node2d] += p(j) * e.coeff;
    return u;
}

void save_parameters(const Eigen::VectorXd& p, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out << "SHAPEOPT-PARAMS v1\n" << p.size() << '\n' << std::setprecision(17);
    for (double v : p) out << v << '\n';
    if (!out) throw Error("failed writing '" + path.string() + "'");
}

Eigen::VectorXd load_parameters(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open parameter file '" + path.string() + "'");
    std::string line;
    int line_no = 1;
    if (!std::getline(in, line) || line != "SHAPEOPT-PARAMS v1")
        throw ParseError("missing SHAPEOPT-PARAMS v1 header", line_no);
    ++line_no;
    long n = -1;
    if (!std::getline(in, line) || !(std::istringstream(line) >> n) || n < 0)
        throw ParseError("malformed parameter count", line_no);
    Eigen::VectorXd p(n);
    for (long j = 0; j < n; ++j) {
        ++line_no;
        std::istringstream ss;
        if (!std::getline(in, line)) throw ParseError("unexpected end of file", line_no);
        ss.str(line);
        if (!(ss >> p(j))) throw ParseError("malformed value '" + line + "'", line_no);
    }
    return p;
}

}  // namespace shapeopt
