#pragma once

#include <Eigen/Core>

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace shapeopt {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

enum class NodeKind { corner, midside };

struct Node {
    int id = 0;
    Vec3 x = Vec3::Zero();  // micrometers
    int column = 0;         // nodes stacked along z share a column
    int layer = 0;          // z-level index, 0 at the bottom face
    NodeKind kind = NodeKind::corner;
};

// Hex20 node ordering (reference coordinates):
//   corners  0(-1,-1,-1) 1(+1,-1,-1) 2(+1,+1,-1) 3(-1,+1,-1)
//            4(-1,-1,+1) 5(+1,-1,+1) 6(+1,+1,+1) 7(-1,+1,+1)
//   edges    8: 0-1   9: 1-2  10: 2-3  11: 3-0
//           12: 4-5  13: 5-6  14: 6-7  15: 7-4
//           16: 0-4  17: 1-5  18: 2-6  19: 3-7
// This is the VTK quadratic hexahedron ordering (cell type 25).
using Hex20 = std::array<int, 20>;

// Quad8 ordering: corners 0-3 counterclockwise, then edge nodes
// 4: 0-1, 5: 1-2, 6: 2-3, 7: 3-0.
using Quad8 = std::array<int, 8>;

/// Local corner pair of each Hex20 mid-edge node (index 8..19).
extern const std::array<std::array<int, 2>, 12> kHex20EdgeCorners;
/// Local corner pair of each Quad8 mid-edge node (index 4..7).
extern const std::array<std::array<int, 2>, 4> kQuad8EdgeCorners;

struct Material {
    double young_modulus = 161e9;  // Pa
    double poisson_ratio = 0.2261;
    double density = 2330.0;  // kg/m^3

    void validate() const;
};

namespace sets {
inline constexpr const char* anchor_base = "anchor_base";
inline constexpr const char* springs = "springs";
inline constexpr const char* sym_x_face = "sym_x_face";
inline constexpr const char* sym_y_face = "sym_y_face";
}  // namespace sets

/// Extruded Hex20 mesh. Node ids equal their index in `nodes`.
struct Mesh {
    std::vector<Node> nodes;
    std::vector<Hex20> elements;
    std::map<std::string, std::vector<int>> node_sets;
    std::vector<Vec3> x0;  // initial coordinates
    double epi_thickness = 0.0;
    int n_layers = 0;
    Material material;

    std::size_t node_count() const { return nodes.size(); }
    std::size_t element_count() const { return elements.size(); }
    bool has_set(const std::string& name) const { return node_sets.count(name) > 0; }
    const std::vector<int>& set(const std::string& name) const;

    /// 3x20 matrix of element node coordinates, one column per node.
    Eigen::Matrix<double, 3, 20> element_coords(int e) const;

    /// Throws if any structural invariant is violated.
    void validate() const;
};

struct Quad8Mesh2D {
    std::vector<Vec2> xy;
    std::vector<Quad8> quads;

    std::vector<bool> corner_mask() const;
};

/// Top-layer projection of an extruded mesh. 2D node i corresponds to
/// `columns[i]`; `column_nodes[i]` lists its 3D nodes from bottom to top.
struct Surface2D {
    Quad8Mesh2D mesh;
    std::vector<int> columns;
    std::vector<std::vector<int>> column_nodes;
    std::vector<bool> is_corner;
    std::vector<int> node_to_2d;  // 3D node id -> 2D node index

    std::size_t size() const { return mesh.xy.size(); }
};

struct BoundaryLoop {
    std::vector<int> nodes;    // 2D corner nodes in traversal order, material on the left
    std::vector<double> arc;   // cumulative arc length at each node, arc[0] = 0
    double perimeter = 0.0;
    int first_segment = 0;     // segment i of this loop runs nodes[i] -> nodes[i+1]

    double distance(int i, int j) const;  // shorter arc between loop positions i and j
};

struct BoundarySegment {
    int a = 0;        // start 2D corner node
    int b = 0;        // end 2D corner node
    int mid = 0;      // 2D mid-edge node
    int quad = 0;     // owning 2D element
    int loop = 0;
    bool symmetry = false;  // lies on a symmetry plane, not a physical surface
};

struct BoundaryLoops {
    std::vector<BoundaryLoop> loops;
    std::vector<BoundarySegment> segments;
    std::vector<int> loop_of;       // per 2D node, -1 when not on a loop
    std::vector<int> position;      // per 2D node, index within its loop
    std::vector<bool> on_symmetry;  // per 2D node, lies on a symmetry plane
    std::vector<Vec2> normals0;     // per 2D node, frozen outward unit normal (zero off-loop)

    int prev_node(int node) const;
    int next_node(int node) const;
    std::vector<int> exterior_corners() const;
};

/// Parameters of the quarter-symmetric mass-spring demo resonator.
/// The quarter model occupies x >= 0, y >= 0; springs are straight beams
/// running in +y from the top edge of the mass to a shared anchor pad.
struct DemoSpec {
    double mass_half_x = 100.0;      // quarter mass extends over [0, mass_half_x]
    double mass_half_y = 100.0;
    int spring_count = 1;            // springs per quarter
    double spring_width = 4.0;
    double spring_length = 40.0;
    double spring_pitch = 12.0;      // x spacing between neighbouring springs
    double spring_offset = 0.0;      // right spring edge sits at mass_half_x - spring_offset
    double anchor_length = 10.0;     // anchor pad extent along y
    double anchor_margin = 4.0;      // anchor pad overhang beyond the outer springs in x
    double element_size = 2.0;       // max element size across springs and in the anchor
    double length_element_size = 0.0;  // along springs; 0 -> element_size
    double mass_element_size = 0.0;    // in the mass; 0 -> 4 * element_size
    double thickness = 10.55;
    int n_layers = 3;
    Material material;

    void validate() const;
};

Mesh generate_demo_resonator(const DemoSpec& spec);

/// Extrude a Quad8 mesh into Hex20 with uniform layers. Column id of each
/// 3D node is the index of the 2D node it sits on.
Mesh extrude(const Quad8Mesh2D& mesh2d, double thickness, int n_layers);

Surface2D project_top_layer(const Mesh& mesh);

/// Boundary loops of the elements whose nodes all lie in `region`
/// (3D node ids). An empty region selects every element.
BoundaryLoops extract_boundary_loops(const Surface2D& surface, std::span<const int> region);

/// Flag segments and nodes on the sym_x_face / sym_y_face planes.
void mark_symmetry(BoundaryLoops& loops, const Surface2D& surface, const Mesh& mesh);

/// Fill normals0 with outward unit normals from the given 2D coordinates.
/// Corner nodes get the normalized bisector of both edge normals; a node
/// touching exactly one symmetry segment uses its physical edge only.
void compute_normals(BoundaryLoops& loops, std::span<const Vec2> xy);

/// Mirror a quarter model across x = 0 and y = 0 into the full structure.
Mesh mirror_full(const Mesh& quarter);

/// Winding number based point-in-element test on the 2D corner polygons.
bool point_in_material(const Quad8Mesh2D& mesh, const Vec2& p);

}  // namespace shapeopt
