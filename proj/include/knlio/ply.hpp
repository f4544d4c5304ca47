#pragma once

// Binary little-endian PLY export for triangle meshes, plus a minimal reader
// covering exactly what write_mesh emits (used for round-trip checks).

#include "knlio/marching_cubes.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace knlio {

inline void write_mesh(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_mesh: cannot open " + path);
  std::ostringstream header;
  header << "ply\n"
         << "format binary_little_endian 1.0\n"
         << "element vertex " << mesh.vertices.size() << "\n"
         << "property float x\nproperty float y\nproperty float z\n"
         << "element face " << mesh.triangles.size() << "\n"
         << "property list uchar int vertex_indices\n"
         << "end_header\n";
  f << header.str();
  for (const auto& v : mesh.vertices) {
    f.write(reinterpret_cast<const char*>(v.data()), 12);
  }
  for (const auto& t : mesh.triangles) {
    const uint8_t n = 3;
    f.put(char(n));
    f.write(reinterpret_cast<const char*>(t.data()), 12);
  }
  if (!f) throw std::runtime_error("write_mesh: write failed for " + path);
}

inline TriangleMesh read_mesh(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_mesh: cannot open " + path);
  std::string line;
  size_t n_vertices = 0, n_faces = 0;
  bool ok_magic = false, ok_format = false;
  while (std::getline(f, line)) {
    if (line == "ply") ok_magic = true;
    else if (line.rfind("format binary_little_endian", 0) == 0) ok_format = true;
    else if (line.rfind("element vertex ", 0) == 0) n_vertices = std::stoull(line.substr(15));
    else if (line.rfind("element face ", 0) == 0) n_faces = std::stoull(line.substr(13));
    else if (line == "end_header") break;
  }
  if (!ok_magic || !ok_format) throw std::runtime_error("read_mesh: not a binary PLY: " + path);

  TriangleMesh mesh;
  mesh.vertices.resize(n_vertices);
  for (auto& v : mesh.vertices) {
    f.read(reinterpret_cast<char*>(v.data()), 12);
  }
  mesh.triangles.resize(n_faces);
  for (auto& t : mesh.triangles) {
    const int c = f.get();
    if (c != 3) throw std::runtime_error("read_mesh: non-triangle face in " + path);
    f.read(reinterpret_cast<char*>(t.data()), 12);
  }
  if (!f) throw std::runtime_error("read_mesh: truncated file " + path);
  return mesh;
}

}  // namespace knlio
