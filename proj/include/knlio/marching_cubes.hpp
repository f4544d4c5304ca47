#pragma once

// Marching cubes over the neural field (or any sampled scalar field) with
// chunked evaluation and global vertex welding, so chunk borders share
// vertices and the mesh stays manifold.

#include "knlio/geometry.hpp"
#include "knlio/mc_tables.hpp"
#include "knlio/neural_map.hpp"

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace knlio {

struct TriangleMesh {
  std::vector<Eigen::Vector3f> vertices;
  std::vector<std::array<int32_t, 3>> triangles;
};

struct MeshBounds {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
};

namespace detail {

inline constexpr int kCornerOffset[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
    {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};

inline constexpr int kEdgeCorner[12][2] = {
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
    {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace detail

// FieldFn: (const Vec3&) -> std::pair<double, bool> (value, valid). Cells
// touching any invalid sample are skipped: unobserved space must not emit
// surface, and substituting a far value there would fabricate a phantom
// closed shell around every unobserved pocket.
template <typename FieldFn>
TriangleMesh extract_mesh_field(FieldFn&& field, const MeshBounds& bounds,
                                double voxel, double iso = 0.0,
                                size_t max_cells = size_t(1) << 27) {
  if (!(voxel > 0.0)) throw std::invalid_argument("extract_mesh: voxel must be > 0");
  const Vec3 span = bounds.max - bounds.min;
  if ((span.array() <= 0.0).any()) throw std::invalid_argument("extract_mesh: empty bounds");

  const int64_t nx = std::max<int64_t>(1, int64_t(std::ceil(span.x() / voxel)));
  const int64_t ny = std::max<int64_t>(1, int64_t(std::ceil(span.y() / voxel)));
  const int64_t nz = std::max<int64_t>(1, int64_t(std::ceil(span.z() / voxel)));
  if (uint64_t(nx) * uint64_t(ny) * uint64_t(nz) > max_cells) {
    throw std::runtime_error("extract_mesh: grid of " + std::to_string(nx) + "x" +
                             std::to_string(ny) + "x" + std::to_string(nz) +
                             " cells exceeds budget of " + std::to_string(max_cells));
  }

  const int64_t sx = nx + 1, sy = ny + 1, sz = nz + 1;
  auto sample_pos = [&](int64_t ix, int64_t iy, int64_t iz) {
    return Vec3(bounds.min.x() + double(ix) * voxel,
                bounds.min.y() + double(iy) * voxel,
                bounds.min.z() + double(iz) * voxel);
  };

  TriangleMesh mesh;
  std::unordered_map<uint64_t, int32_t> edge_vertex;
  auto edge_key = [&](int64_t ix, int64_t iy, int64_t iz, int axis) {
    return uint64_t(((ix * sy + iy) * sz + iz) * 3 + axis);
  };

  constexpr int64_t kChunk = 32;
  const int64_t side = kChunk + 1;
  std::vector<double> val(size_t(side * side * side));
  std::vector<uint8_t> ok(size_t(side * side * side));
  auto lidx = [&](int64_t i, int64_t j, int64_t k) { return size_t((i * side + j) * side + k); };

  for (int64_t cz = 0; cz < nz; cz += kChunk) {
    for (int64_t cy = 0; cy < ny; cy += kChunk) {
      for (int64_t cx = 0; cx < nx; cx += kChunk) {
        const int64_t ex = std::min(kChunk, nx - cx);
        const int64_t ey = std::min(kChunk, ny - cy);
        const int64_t ez = std::min(kChunk, nz - cz);
        for (int64_t i = 0; i <= ex; ++i) {
          for (int64_t j = 0; j <= ey; ++j) {
            for (int64_t k = 0; k <= ez; ++k) {
              auto [v, valid] = field(sample_pos(cx + i, cy + j, cz + k));
              // Exact zeros would land vertices on shared corners and emit
              // degenerate triangles; nudge them off the iso level.
              if (v == iso) v = iso + 1e-12;
              val[lidx(i, j, k)] = v;
              ok[lidx(i, j, k)] = valid ? 1 : 0;
            }
          }
        }

        for (int64_t i = 0; i < ex; ++i) {
          for (int64_t j = 0; j < ey; ++j) {
            for (int64_t k = 0; k < ez; ++k) {
              double corner[8];
              bool all_ok = true;
              int cube = 0;
              for (int c = 0; c < 8; ++c) {
                const auto* off = detail::kCornerOffset[c];
                const size_t li = lidx(i + off[0], j + off[1], k + off[2]);
                if (!ok[li]) {
                  all_ok = false;
                  break;
                }
                corner[c] = val[li];
                if (corner[c] < iso) cube |= 1 << c;
              }
              if (!all_ok || cube == 0 || cube == 255) continue;
              const uint16_t edges = kMcEdgeTable[cube];

              int32_t everts[12];
              for (int e = 0; e < 12; ++e) {
                if (!(edges & (1u << e))) continue;
                const int ca = detail::kEdgeCorner[e][0];
                const int cb = detail::kEdgeCorner[e][1];
                const auto* oa = detail::kCornerOffset[ca];
                const auto* ob = detail::kCornerOffset[cb];
                const int64_t ax = cx + i + std::min(oa[0], ob[0]);
                const int64_t ay = cy + j + std::min(oa[1], ob[1]);
                const int64_t az = cz + k + std::min(oa[2], ob[2]);
                const int axis = oa[0] != ob[0] ? 0 : (oa[1] != ob[1] ? 1 : 2);
                const uint64_t key = edge_key(ax, ay, az, axis);
                auto it = edge_vertex.find(key);
                if (it == edge_vertex.end()) {
                  const Vec3 pa = sample_pos(cx + i + oa[0], cy + j + oa[1], cz + k + oa[2]);
                  const Vec3 pb = sample_pos(cx + i + ob[0], cy + j + ob[1], cz + k + ob[2]);
                  const double va = corner[ca], vb = corner[cb];
                  const double t = (iso - va) / (vb - va);
                  const Vec3 p = pa + t * (pb - pa);
                  it = edge_vertex.emplace(key, int32_t(mesh.vertices.size())).first;
                  mesh.vertices.emplace_back(float(p.x()), float(p.y()), float(p.z()));
                }
                everts[e] = it->second;
              }

              const int8_t* tri = kMcTriTable[cube];
              for (int t = 0; tri[t] != -1; t += 3) {
                const int32_t a = everts[tri[t]];
                const int32_t b = everts[tri[t + 1]];
                const int32_t c = everts[tri[t + 2]];
                if (a == b || b == c || a == c) continue;
                mesh.triangles.push_back({a, b, c});
              }
            }
          }
        }
      }
    }
  }
  return mesh;
}

inline TriangleMesh extract_mesh(const NeuralMap& map, const MeshBounds& bounds,
                                 double voxel, size_t max_cells = size_t(1) << 27) {
  return extract_mesh_field(
      [&map](const Vec3& q) {
        const FieldSample s = map.query_sdf(q);
        return std::pair<double, bool>(s.sdf, s.valid);
      },
      bounds, voxel, 0.0, max_cells);
}

}  // namespace knlio
