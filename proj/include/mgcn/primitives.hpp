#pragma once

#include <array>
#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "mgcn/core.hpp"
#include "mgcn/mesh.hpp"

namespace mgcn {

// Icosahedron subdivided `level` times with vertices projected onto a sphere.
// Levels 0..4 give 12, 42, 162, 642, 2562 vertices.
inline TriangleMesh icosphere(int level, Real radius = 1.0) {
  const Real t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh mesh;
  mesh.vertices = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
      {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
      {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1},
  };
  mesh.faces = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
      {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
      {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1},
  };
  for (auto& v : mesh.vertices) v = normalized(v);

  for (int s = 0; s < level; ++s) {
    std::map<std::pair<Index, Index>, Index> midpoint;
    auto mid = [&](Index a, Index b) {
      auto key = std::make_pair(std::min(a, b), std::max(a, b));
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 m = normalized((mesh.vertices[static_cast<std::size_t>(a)] +
                           mesh.vertices[static_cast<std::size_t>(b)]) * 0.5);
      Index idx = mesh.vertex_count();
      mesh.vertices.push_back(m);
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<Index, 3>> faces;
    faces.reserve(mesh.faces.size() * 4);
    for (const auto& f : mesh.faces) {
      Index ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      faces.push_back({f[0], ab, ca});
      faces.push_back({f[1], bc, ab});
      faces.push_back({f[2], ca, bc});
      faces.push_back({ab, bc, ca});
    }
    mesh.faces = std::move(faces);
  }
  for (auto& v : mesh.vertices) v *= radius;
  return mesh;
}

// Regular grid of (nx+1) x (ny+1) vertices in the z = 0 plane, triangulated.
inline TriangleMesh planar_grid(int nx, int ny, Real spacing = 1.0) {
  TriangleMesh mesh;
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      mesh.vertices.push_back({i * spacing, j * spacing, 0.0});
  auto id = [&](int i, int j) { return static_cast<Index>(j * (nx + 1) + i); };
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      mesh.faces.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      mesh.faces.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  return mesh;
}

// Axis-aligned cube surface [0, size]^3 with each face split into an n x n
// grid of quads, each quad split into two triangles. Shared edges reuse
// vertices.
inline TriangleMesh cube_surface(int n, Real size = 1.0) {
  std::map<std::array<long long, 3>, Index> lookup;
  TriangleMesh mesh;
  auto vertex = [&](int i, int j, int k) {
    std::array<long long, 3> key = {i, j, k};
    auto it = lookup.find(key);
    if (it != lookup.end()) return it->second;
    Index idx = mesh.vertex_count();
    mesh.vertices.push_back({size * i / n, size * j / n, size * k / n});
    lookup.emplace(key, idx);
    return idx;
  };
  auto emit = [&](Index a, Index b, Index c, Index d, bool flip) {
    if (!flip) {
      mesh.faces.push_back({a, b, c});
      mesh.faces.push_back({a, c, d});
    } else {
      mesh.faces.push_back({a, c, b});
      mesh.faces.push_back({a, d, c});
    }
  };
  for (int u = 0; u < n; ++u)
    for (int v = 0; v < n; ++v) {
      emit(vertex(u, v, 0), vertex(u + 1, v, 0), vertex(u + 1, v + 1, 0), vertex(u, v + 1, 0), false);
      emit(vertex(u, v, n), vertex(u + 1, v, n), vertex(u + 1, v + 1, n), vertex(u, v + 1, n), true);
      emit(vertex(u, 0, v), vertex(u + 1, 0, v), vertex(u + 1, 0, v + 1), vertex(u, 0, v + 1), true);
      emit(vertex(u, n, v), vertex(u + 1, n, v), vertex(u + 1, n, v + 1), vertex(u, n, v + 1), false);
      emit(vertex(0, u, v), vertex(0, u + 1, v), vertex(0, u + 1, v + 1), vertex(0, u, v + 1), false);
      emit(vertex(n, u, v), vertex(n, u + 1, v), vertex(n, u + 1, v + 1), vertex(n, u, v + 1), true);
    }
  return mesh;
}

}  // namespace mgcn
