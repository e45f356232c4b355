#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mgcn/core.hpp"
#include "mgcn/geometry.hpp"
#include "mgcn/laplacian.hpp"
#include "mgcn/mesh.hpp"
#include "mgcn/rng.hpp"
#include "mgcn/sparse.hpp"

namespace mgcn {

// Symmetric 4x4 error quadric, stored as the 3x3 block A, vector b and
// constant c of Q(v) = v'Av + 2b'v + c.
struct Quadric {
  std::array<Real, 6> a{};  // xx, xy, xz, yy, yz, zz
  Vec3 b{};
  Real c = 0;

  void add_plane(const Vec3& n, Real d) {
    a[0] += n.x * n.x;
    a[1] += n.x * n.y;
    a[2] += n.x * n.z;
    a[3] += n.y * n.y;
    a[4] += n.y * n.z;
    a[5] += n.z * n.z;
    b += n * d;
    c += d * d;
  }

  Quadric& operator+=(const Quadric& o) {
    for (int i = 0; i < 6; ++i) a[static_cast<std::size_t>(i)] += o.a[static_cast<std::size_t>(i)];
    b += o.b;
    c += o.c;
    return *this;
  }

  Real evaluate(const Vec3& v) const {
    Real ax = a[0] * v.x + a[1] * v.y + a[2] * v.z;
    Real ay = a[1] * v.x + a[3] * v.y + a[4] * v.z;
    Real az = a[2] * v.x + a[4] * v.y + a[5] * v.z;
    return v.x * ax + v.y * ay + v.z * az + 2.0 * dot(b, v) + c;
  }
};

struct DecimationResult {
  TriangleMesh coarse;
  SparseRealMatrix q_down;            // coarse.N x fine.N, binary one-hot rows
  std::vector<Index> kept_vertices;   // fine index of each coarse vertex
  std::vector<Real> collapse_costs;   // quadric cost of each accepted collapse
};

namespace detail {

struct EdgeKey {
  Index a, b;  // a < b
  bool operator<(const EdgeKey& o) const { return std::tie(a, b) < std::tie(o.a, o.b); }
};

struct QueueEntry {
  Real cost;
  EdgeKey edge;
  bool operator<(const QueueEntry& o) const {
    return std::tie(cost, edge.a, edge.b) < std::tie(o.cost, o.edge.a, o.edge.b);
  }
};

}  // namespace detail

// Greedy quadric-error edge collapse onto an existing endpoint. The kept
// endpoint is the one with lower combined quadric error, ties broken by
// lower vertex index. The `seed` parameter is part of the contract for
// reproducibility bookkeeping; the algorithm itself is fully deterministic
// and does not consume randomness.
inline DecimationResult decimate_quadric(const TriangleMesh& mesh, Index target_count,
                                         std::uint64_t seed = 0) {
  (void)seed;
  validate_mesh(mesh);
  const Index n = mesh.vertex_count();
  if (target_count < 4 || target_count >= n)
    throw ConfigMismatch("target_count must satisfy 4 <= target < N");

  // face table with alive flags and per-vertex incidence
  std::vector<std::array<Index, 3>> faces(mesh.faces);
  std::vector<char> face_alive(faces.size(), 1);
  std::vector<std::set<Index>> vertex_faces(static_cast<std::size_t>(n));
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int k = 0; k < 3; ++k) vertex_faces[static_cast<std::size_t>(faces[f][k])].insert(static_cast<Index>(f));

  // initial quadrics: sum of incident-face plane quadrics
  std::vector<Quadric> quadric(static_cast<std::size_t>(n));
  for (const auto& f : faces) {
    const Vec3& p0 = mesh.vertices[static_cast<std::size_t>(f[0])];
    const Vec3& p1 = mesh.vertices[static_cast<std::size_t>(f[1])];
    const Vec3& p2 = mesh.vertices[static_cast<std::size_t>(f[2])];
    Vec3 nrm = cross(p1 - p0, p2 - p0);
    Real len = norm(nrm);
    if (len <= 0) continue;  // zero-area face contributes no constraint
    nrm = nrm / len;
    Real d = -dot(nrm, p0);
    for (int k = 0; k < 3; ++k) quadric[static_cast<std::size_t>(f[k])].add_plane(nrm, d);
  }

  std::vector<std::set<Index>> adjacency(static_cast<std::size_t>(n));
  for (const auto& f : faces)
    for (int k = 0; k < 3; ++k) {
      adjacency[static_cast<std::size_t>(f[k])].insert(f[(k + 1) % 3]);
      adjacency[static_cast<std::size_t>(f[(k + 1) % 3])].insert(f[k]);
    }

  // cost of collapsing edge (a,b) onto its better endpoint
  auto edge_cost = [&](Index a, Index b) {
    Quadric q = quadric[static_cast<std::size_t>(a)];
    q += quadric[static_cast<std::size_t>(b)];
    Real cost_a = q.evaluate(mesh.vertices[static_cast<std::size_t>(a)]);
    Real cost_b = q.evaluate(mesh.vertices[static_cast<std::size_t>(b)]);
    Index keep = (cost_a < cost_b || (cost_a == cost_b && a < b)) ? a : b;
    Real cost = std::min(cost_a, cost_b);
    return std::make_pair(cost, keep);
  };

  std::set<detail::QueueEntry> queue;
  std::map<detail::EdgeKey, Real> queued_cost;
  auto push_edge = [&](Index a, Index b) {
    detail::EdgeKey key{std::min(a, b), std::max(a, b)};
    auto [cost, keep] = edge_cost(key.a, key.b);
    (void)keep;
    auto it = queued_cost.find(key);
    if (it != queued_cost.end()) {
      queue.erase({it->second, key});
      it->second = cost;
    } else {
      queued_cost.emplace(key, cost);
    }
    queue.insert({cost, key});
  };
  auto drop_edge = [&](Index a, Index b) {
    detail::EdgeKey key{std::min(a, b), std::max(a, b)};
    auto it = queued_cost.find(key);
    if (it == queued_cost.end()) return;
    queue.erase({it->second, key});
    queued_cost.erase(it);
  };

  for (Index v = 0; v < n; ++v)
    for (Index w : adjacency[static_cast<std::size_t>(v)])
      if (v < w) push_edge(v, w);

  std::vector<char> vertex_alive(static_cast<std::size_t>(n), 1);
  Index alive_count = n;
  std::vector<Real> collapse_costs;

  while (alive_count > target_count) {
    if (queue.empty())
      throw TargetUnreachable("collapse queue exhausted at " + std::to_string(alive_count) +
                              " vertices (target " + std::to_string(target_count) + ")");
    auto entry = *queue.begin();
    const Index a = entry.edge.a, b = entry.edge.b;
    auto [cost, keep] = edge_cost(a, b);
    const Index discard = (keep == a) ? b : a;

    // faces containing both endpoints die with the collapse
    std::vector<Index> dying;
    for (Index f : vertex_faces[static_cast<std::size_t>(discard)]) {
      const auto& fc = faces[static_cast<std::size_t>(f)];
      if (fc[0] == keep || fc[1] == keep || fc[2] == keep) dying.push_back(f);
    }

    // reject a collapse that would strand one of the surviving corners
    bool strands = false;
    for (Index f : dying) {
      for (int k = 0; k < 3; ++k) {
        Index v = faces[static_cast<std::size_t>(f)][k];
        if (v == keep || v == discard) continue;
        std::size_t loss = 0;
        for (Index g : dying)
          if (faces[static_cast<std::size_t>(g)][0] == v || faces[static_cast<std::size_t>(g)][1] == v ||
              faces[static_cast<std::size_t>(g)][2] == v)
            ++loss;
        if (vertex_faces[static_cast<std::size_t>(v)].size() <= loss) {
          strands = true;
          break;
        }
      }
      if (strands) break;
    }
    if (strands) {
      drop_edge(a, b);
      continue;
    }

    collapse_costs.push_back(cost);
    quadric[static_cast<std::size_t>(keep)] += quadric[static_cast<std::size_t>(discard)];

    for (Index f : dying) {
      face_alive[static_cast<std::size_t>(f)] = 0;
      for (int k = 0; k < 3; ++k)
        vertex_faces[static_cast<std::size_t>(faces[static_cast<std::size_t>(f)][k])].erase(f);
    }
    // surviving faces of the discarded vertex now reference the kept one
    for (Index f : std::vector<Index>(vertex_faces[static_cast<std::size_t>(discard)].begin(),
                                      vertex_faces[static_cast<std::size_t>(discard)].end())) {
      auto& fc = faces[static_cast<std::size_t>(f)];
      for (int k = 0; k < 3; ++k)
        if (fc[k] == discard) fc[k] = keep;
      vertex_faces[static_cast<std::size_t>(discard)].erase(f);
      vertex_faces[static_cast<std::size_t>(keep)].insert(f);
    }

    drop_edge(a, b);
    for (Index nb : std::vector<Index>(adjacency[static_cast<std::size_t>(discard)].begin(),
                                       adjacency[static_cast<std::size_t>(discard)].end())) {
      if (nb == keep) continue;
      adjacency[static_cast<std::size_t>(nb)].erase(discard);
      drop_edge(discard, nb);
      adjacency[static_cast<std::size_t>(nb)].insert(keep);
      adjacency[static_cast<std::size_t>(keep)].insert(nb);
    }
    adjacency[static_cast<std::size_t>(keep)].erase(discard);
    adjacency[static_cast<std::size_t>(discard)].clear();
    vertex_alive[static_cast<std::size_t>(discard)] = 0;
    --alive_count;

    // costs of every edge incident to the kept vertex changed
    for (Index nb : adjacency[static_cast<std::size_t>(keep)]) push_edge(keep, nb);
  }

  DecimationResult out;
  std::vector<Index> coarse_index(static_cast<std::size_t>(n), -1);
  for (Index v = 0; v < n; ++v) {
    if (!vertex_alive[static_cast<std::size_t>(v)]) continue;
    coarse_index[static_cast<std::size_t>(v)] = static_cast<Index>(out.kept_vertices.size());
    out.kept_vertices.push_back(v);
    out.coarse.vertices.push_back(mesh.vertices[static_cast<std::size_t>(v)]);
  }

  std::set<std::array<Index, 3>> seen;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    if (!face_alive[f]) continue;
    std::array<Index, 3> fc;
    for (int k = 0; k < 3; ++k) fc[k] = coarse_index[static_cast<std::size_t>(faces[f][k])];
    std::array<Index, 3> key = fc;
    std::sort(key.begin(), key.end());
    if (key[0] == key[1] || key[1] == key[2]) continue;  // degenerate
    if (!seen.insert(key).second) continue;              // duplicate
    out.coarse.faces.push_back(fc);
  }
  validate_mesh(out.coarse);

  std::vector<Triplet> t;
  t.reserve(out.kept_vertices.size());
  for (std::size_t i2 = 0; i2 < out.kept_vertices.size(); ++i2)
    t.push_back({static_cast<Index>(i2), out.kept_vertices[i2], 1.0});
  out.q_down = SparseRealMatrix::from_triplets(static_cast<Index>(out.kept_vertices.size()), n, std::move(t));
  out.collapse_costs = std::move(collapse_costs);
  return out;
}

// Barycentric up-sampling matrix. Kept vertices get the transposed one-hot of
// q_down; discarded ones get the clamped barycentric weights of their closest
// point over all coarse triangles (lowest face index wins ties).
inline SparseRealMatrix build_upsampling(const TriangleMesh& fine, const TriangleMesh& coarse,
                                         const SparseRealMatrix& q_down) {
  if (coarse.face_count() == 0) throw EmptyCoarseMesh("coarse mesh has no faces");
  const Index n1 = fine.vertex_count();
  const Index n2 = coarse.vertex_count();
  if (q_down.rows != n2 || q_down.cols != n1) throw ShapeMismatch("q_down shape mismatch");

  std::vector<Index> kept_as(static_cast<std::size_t>(n1), -1);
  for (Index i2 = 0; i2 < n2; ++i2) {
    Index begin = q_down.row_offsets[static_cast<std::size_t>(i2)];
    Index end = q_down.row_offsets[static_cast<std::size_t>(i2) + 1];
    if (end - begin != 1 || q_down.values[static_cast<std::size_t>(begin)] != 1.0)
      throw ShapeMismatch("q_down rows must be one-hot");
    kept_as[static_cast<std::size_t>(q_down.col_indices[static_cast<std::size_t>(begin)])] = i2;
  }

  std::vector<Triplet> t;
  for (Index i1 = 0; i1 < n1; ++i1) {
    if (kept_as[static_cast<std::size_t>(i1)] >= 0) {
      t.push_back({i1, kept_as[static_cast<std::size_t>(i1)], 1.0});
      continue;
    }
    const Vec3& p = fine.vertices[static_cast<std::size_t>(i1)];
    Real best = std::numeric_limits<Real>::infinity();
    std::array<Real, 3> best_bary{};
    std::array<Index, 3> best_face{};
    for (std::size_t f = 0; f < coarse.faces.size(); ++f) {
      const auto& fc = coarse.faces[f];
      auto res = closest_point_on_triangle(p, coarse.vertices[static_cast<std::size_t>(fc[0])],
                                           coarse.vertices[static_cast<std::size_t>(fc[1])],
                                           coarse.vertices[static_cast<std::size_t>(fc[2])]);
      if (res.distance < best) {
        best = res.distance;
        best_bary = res.barycentric;
        best_face = fc;
      }
    }
    for (int k = 0; k < 3; ++k)
      if (best_bary[static_cast<std::size_t>(k)] != 0.0)
        t.push_back({i1, best_face[static_cast<std::size_t>(k)], best_bary[static_cast<std::size_t>(k)]});
  }
  return SparseRealMatrix::from_triplets(n1, n2, std::move(t));
}

// One fine->coarse sampling step.
struct SamplingPair {
  Index fine_count = 0;
  Index coarse_count = 0;
  SparseRealMatrix q_down;
  SparseRealMatrix q_up;
  TriangleMesh coarse_mesh;
};

// Decimation hierarchy with precomputed scaled Laplacians per level
// (finest first).
struct MeshHierarchy {
  std::vector<TriangleMesh> levels;
  std::vector<SamplingPair> pairs;
  std::vector<ScaledLaplacian> laplacians;

  Index depth() const { return static_cast<Index>(pairs.size()); }
};

inline MeshHierarchy build_hierarchy(const TriangleMesh& mesh, Index factor, Index depth,
                                     std::uint64_t seed = 0) {
  if (factor < 2) throw ConfigMismatch("sampling factor must be >= 2");
  if (depth < 1) throw ConfigMismatch("hierarchy depth must be >= 1");
  Real final_size = static_cast<Real>(mesh.vertex_count());
  for (Index k = 0; k < depth; ++k) final_size = std::ceil(final_size / static_cast<Real>(factor));
  if (final_size < 4) throw ConfigMismatch("hierarchy bottoms out below 4 vertices");

  MeshHierarchy h;
  h.levels.push_back(mesh);
  h.laplacians.push_back(mesh_scaled_laplacian(mesh));
  for (Index k = 0; k < depth; ++k) {
    const TriangleMesh& fine = h.levels.back();
    Index target = static_cast<Index>(
        std::ceil(static_cast<Real>(fine.vertex_count()) / static_cast<Real>(factor)));
    auto dec = decimate_quadric(fine, target, mix_seed(seed, static_cast<std::uint64_t>(k)));
    SamplingPair pair;
    pair.fine_count = fine.vertex_count();
    pair.coarse_count = dec.coarse.vertex_count();
    pair.q_up = build_upsampling(fine, dec.coarse, dec.q_down);
    pair.q_down = std::move(dec.q_down);
    pair.coarse_mesh = dec.coarse;
    h.levels.push_back(std::move(dec.coarse));
    h.laplacians.push_back(mesh_scaled_laplacian(h.levels.back()));
    h.pairs.push_back(std::move(pair));
  }
  return h;
}

}  // namespace mgcn
