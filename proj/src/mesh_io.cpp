#include "shapeopt/mesh_io.hpp"

#include "shapeopt/error.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace shapeopt {

namespace {

constexpr const char* kMeshHeader = "SHAPEOPT-MESH v1";

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out << std::setprecision(17);
    return out;
}

// Reads whitespace tokens line by line, skipping blank and '#' lines.
class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {}

    bool next() {
        std::string raw;
        while (std::getline(in_, raw)) {
            ++line_;
            if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
            tokens_.clear();
            std::istringstream ss(raw);
            for (std::string t; ss >> t;) tokens_.push_back(t);
            if (!tokens_.empty()) return true;
        }
        tokens_.clear();
        return false;
    }

    const std::vector<std::string>& tokens() const { return tokens_; }
    int line() const { return line_; }

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, line_); }

    double real(std::size_t i) const {
        try {
            std::size_t used = 0;
            const double v = std::stod(at(i), &used);
            if (used != at(i).size()) fail("malformed number '" + at(i) + "'");
            return v;
        } catch (const std::logic_error&) {
            fail("malformed number '" + at(i) + "'");
        }
    }

    int integer(std::size_t i) const {
        try {
            std::size_t used = 0;
            const int v = std::stoi(at(i), &used);
            if (used != at(i).size()) fail("malformed integer '" + at(i) + "'");
            return v;
        } catch (const std::logic_error&) {
            fail("malformed integer '" + at(i) + "'");
        }
    }

    const std::string& at(std::size_t i) const {
        if (i >= tokens_.size()) fail("missing field " + std::to_string(i + 1));
        return tokens_[i];
    }

    void expect_fields(std::size_t n) const {
        if (tokens_.size() != n)
            fail("expected " + std::to_string(n) + " fields, found " + std::to_string(tokens_.size()));
    }

private:
    std::istream& in_;
    std::vector<std::string> tokens_;
    int line_ = 0;
};

}  // namespace

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << kMeshHeader << '\n';
    out << "META epi_thickness " << mesh.epi_thickness << '\n';
    out << "META n_layers " << mesh.n_layers << '\n';
    out << "META young_modulus " << mesh.material.young_modulus << '\n';
    out << "META poisson_ratio " << mesh.material.poisson_ratio << '\n';
    out << "META density " << mesh.material.density << '\n';

    out << "NODES " << mesh.nodes.size() << '\n';
    for (const auto& n : mesh.nodes)
        out << n.id << ' ' << n.x.x() << ' ' << n.x.y() << ' ' << n.x.z() << ' ' << n.column << ' ' << n.layer
            << ' ' << (n.kind == NodeKind::corner ? "corner" : "midside") << '\n';

    bool moved = false;
    for (std::size_t i = 0; i < mesh.nodes.size() && !moved; ++i) moved = mesh.nodes[i].x != mesh.x0[i];
    if (moved) {
        out << "X0 " << mesh.x0.size() << '\n';
        for (std::size_t i = 0; i < mesh.x0.size(); ++i)
            out << i << ' ' << mesh.x0[i].x() << ' ' << mesh.x0[i].y() << ' ' << mesh.x0[i].z() << '\n';
    }

    out << "HEX20 " << mesh.elements.size() << '\n';
    for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
        out << e;
        for (int id : mesh.elements[e]) out << ' ' << id;
        out << '\n';
    }

    for (const auto& [name, ids] : mesh.node_sets) {
        out << "SET " << name << ' ' << ids.size() << '\n';
        for (std::size_t i = 0; i < ids.size(); ++i) out << ids[i] << ((i % 10 == 9 || i + 1 == ids.size()) ? '\n' : ' ');
    }
    if (!out) throw Error("failed writing '" + path.string() + "'");
}

Mesh load_mesh(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open mesh file '" + path.string() + "'");
    LineReader r(in);
    if (!r.next()) throw ParseError("empty mesh file");
    if (r.tokens().size() != 2 || r.tokens()[0] != "SHAPEOPT-MESH")
        r.fail("missing SHAPEOPT-MESH header");
    if (r.tokens()[1] != "v1") r.fail("unsupported mesh format version '" + r.tokens()[1] + "'");

    Mesh mesh;
    bool have_nodes = false, have_x0 = false, have_thickness = false, have_layers = false;
    std::vector<std::pair<int, int>> element_lines;  // line number per element for error context

    while (r.next()) {
        const std::string& section = r.at(0);
        if (section == "META") {
            r.expect_fields(3);
            const std::string& key = r.at(1);
            if (key == "epi_thickness") {
                mesh.epi_thickness = r.real(2);
                have_thickness = true;
            } else if (key == "n_layers") {
                mesh.n_layers = r.integer(2);
                have_layers = true;
            } else if (key == "young_modulus") {
                mesh.material.young_modulus = r.real(2);
            } else if (key == "poisson_ratio") {
                mesh.material.poisson_ratio = r.real(2);
            } else if (key == "density") {
                mesh.material.density = r.real(2);
            } else {
                r.fail("unknown META key '" + key + "'");
            }
        } else if (section == "NODES") {
            r.expect_fields(2);
            if (have_nodes) r.fail("duplicate NODES section");
            const int n = r.integer(1);
            if (n < 0) r.fail("negative node count");
            mesh.nodes.resize(n);
            for (int i = 0; i < n; ++i) {
                if (!r.next()) r.fail("unexpected end of file in NODES");
                r.expect_fields(7);
                Node& node = mesh.nodes[i];
                node.id = r.integer(0);
                if (node.id != i) r.fail("node id " + std::to_string(node.id) + " out of sequence, expected " + std::to_string(i));
                node.x = Vec3(r.real(1), r.real(2), r.real(3));
                node.column = r.integer(4);
                node.layer = r.integer(5);
                if (r.at(6) == "corner") node.kind = NodeKind::corner;
                else if (r.at(6) == "midside") node.kind = NodeKind::midside;
                else r.fail("unknown node kind '" + r.at(6) + "'");
            }
            have_nodes = true;
        } else if (section == "X0") {
            r.expect_fields(2);
            if (!have_nodes) r.fail("X0 section before NODES");
            const int n = r.integer(1);
            if (n != static_cast<int>(mesh.nodes.size())) r.fail("X0 count does not match node count");
            mesh.x0.resize(n);
            for (int i = 0; i < n; ++i) {
                if (!r.next()) r.fail("unexpected end of file in X0");
                r.expect_fields(4);
                if (r.integer(0) != i) r.fail("X0 id out of sequence");
                mesh.x0[i] = Vec3(r.real(1), r.real(2), r.real(3));
            }
            have_x0 = true;
        } else if (section == "HEX20") {
            r.expect_fields(2);
            if (!have_nodes) r.fail("HEX20 section before NODES");
            const int m = r.integer(1);
            if (m < 0) r.fail("negative element count");
            mesh.elements.resize(m);
            for (int e = 0; e < m; ++e) {
                if (!r.next()) r.fail("unexpected end of file in HEX20");
                r.expect_fields(21);
                if (r.integer(0) != e) r.fail("element id out of sequence");
                for (int a = 0; a < 20; ++a) {
                    const int id = r.integer(1 + a);
                    if (id < 0 || id >= static_cast<int>(mesh.nodes.size()))
                        r.fail("element " + std::to_string(e) + " references undefined node " + std::to_string(id));
                    mesh.elements[e][a] = id;
                }
            }
        } else if (section == "SET") {
            r.expect_fields(3);
            if (!have_nodes) r.fail("SET section before NODES");
            const std::string name = r.at(1);
            const int k = r.integer(2);
            if (k < 0) r.fail("negative set size");
            auto& ids = mesh.node_sets[name];
            ids.clear();
            while (static_cast<int>(ids.size()) < k) {
                if (!r.next()) r.fail("unexpected end of file in SET " + name);
                for (std::size_t t = 0; t < r.tokens().size(); ++t) {
                    const int id = r.integer(t);
                    if (id < 0 || id >= static_cast<int>(mesh.nodes.size()))
                        r.fail("set '" + name + "' references undefined node " + std::to_string(id));
                    ids.push_back(id);
                }
                if (static_cast<int>(ids.size()) > k) r.fail("set '" + name + "' has more ids than declared");
            }
        } else {
            r.fail("unknown section '" + section + "'");
        }
    }

    if (!have_nodes) throw ParseError("mesh file has no NODES section");
    if (!have_thickness || !have_layers) throw ParseError("mesh file lacks epi_thickness/n_layers META");
    if (!have_x0) {
        mesh.x0.reserve(mesh.nodes.size());
        for (const auto& n : mesh.nodes) mesh.x0.push_back(n.x);
    }
    try {
        mesh.validate();
    } catch (const Error& e) {
        throw ParseError(std::string("invalid mesh: ") + e.what());
    }
    return mesh;
}

void export_vtk(const Mesh& mesh, const std::vector<VtkField>& fields, const std::filesystem::path& path) {
    const std::size_t n = mesh.nodes.size();
    for (const auto& f : fields) {
        if (f.components != 1 && f.components != 3)
            throw Error("VTK field '" + f.name + "' must have 1 or 3 components");
        if (f.data.size() != n * static_cast<std::size_t>(f.components))
            throw Error("VTK field '" + f.name + "' length does not match node count");
    }
    auto out = open_out(path);
    out << "# vtk DataFile Version 3.0\nshapeopt mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    out << "POINTS " << n << " double\n";
    for (const auto& node : mesh.nodes) out << node.x.x() << ' ' << node.x.y() << ' ' << node.x.z() << '\n';
    out << "CELLS " << mesh.elements.size() << ' ' << mesh.elements.size() * 21 << '\n';
    for (const auto& el : mesh.elements) {
        out << 20;
        for (int id : el) out << ' ' << id;
        out << '\n';
    }
    out << "CELL_TYPES " << mesh.elements.size() << '\n';
    for (std::size_t e = 0; e < mesh.elements.size(); ++e) out << "25\n";
    if (!fields.empty()) {
        out << "POINT_DATA " << n << '\n';
        for (const auto& f : fields) {
            if (f.components == 1)
                out << "SCALARS " << f.name << " double 1\nLOOKUP_TABLE default\n";
            else
                out << "VECTORS " << f.name << " double\n";
            for (std::size_t i = 0; i < n; ++i) {
                for (int c = 0; c < f.components; ++c) out << (c ? " " : "") << f.data[i * f.components + c];
                out << '\n';
            }
        }
    }
    if (!out) throw Error("failed writing '" + path.string() + "'");
}

}  // namespace shapeopt
