#pragma once

#include "shapeopt/mesh.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace shapeopt {

// Mesh file: line-oriented text beginning with `SHAPEOPT-MESH v1`, then
// META/NODES/X0/HEX20/SET sections. Coordinates are written with 17
// significant digits so a save/load round trip is bit-exact.
void save_mesh(const Mesh& mesh, const std::filesystem::path& path);
Mesh load_mesh(const std::filesystem::path& path);

struct VtkField {
    std::string name;
    int components = 1;        // 1 (scalar) or 3 (vector)
    std::vector<double> data;  // node-major, components per node
};

/// Legacy ASCII VTK 3.0 unstructured grid with quadratic hexahedra.
void export_vtk(const Mesh& mesh, const std::vector<VtkField>& fields, const std::filesystem::path& path);

}  // namespace shapeopt
