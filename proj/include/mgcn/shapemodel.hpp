#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mgcn/core.hpp"
#include "mgcn/mesh.hpp"
#include "mgcn/rng.hpp"

namespace mgcn {

// Area-weighted per-vertex normals.
inline std::vector<Vec3> vertex_normals(const TriangleMesh& mesh) {
  std::vector<Vec3> normals(mesh.vertices.size(), Vec3{0, 0, 0});
  for (const auto& f : mesh.faces) {
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(f[0])];
    const Vec3& b = mesh.vertices[static_cast<std::size_t>(f[1])];
    const Vec3& c = mesh.vertices[static_cast<std::size_t>(f[2])];
    Vec3 n = cross(b - a, c - a);  // magnitude = 2 * area
    for (int k = 0; k < 3; ++k) normals[static_cast<std::size_t>(f[k])] += n;
  }
  for (auto& n : normals) {
    Real len = norm(n);
    if (len > 0) n = n / len;
  }
  return normals;
}

// Mean shape plus orthonormal deformation modes with per-mode standard
// deviations. The mean mesh carries the shared topology and landmarks.
struct LinearShapeModel {
  TriangleMesh mean_mesh;
  std::vector<std::vector<Vec3>> modes;  // each mode is a per-vertex displacement field
  std::vector<Real> stddevs;             // mm, positive, non-increasing

  Index vertex_count() const { return mean_mesh.vertex_count(); }
  Index mode_count() const { return static_cast<Index>(modes.size()); }
};

namespace detail {

inline Real vectorized_dot(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += dot(a[i], b[i]);
  return s;
}

// One smooth random deformation field: low-frequency sinusoids displacing
// along the vertex normal and a tangent direction, attenuated toward the
// back of the mesh so most of the variation faces the camera (+z).
inline std::vector<Vec3> smooth_field(const TriangleMesh& mesh, const std::vector<Vec3>& normals,
                                      Rng& rng) {
  Vec3 lo = mesh.vertices.front(), hi = mesh.vertices.front();
  for (const auto& v : mesh.vertices) {
    lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
    hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
  }
  Vec3 center = (lo + hi) * 0.5;
  Real radius = 0.5 * norm(hi - lo);
  if (radius <= 0) throw InvalidMesh("degenerate bounding box");

  // random low spatial frequency and phase per sinusoid
  auto wave = [&](const Vec3& p, Real fx, Real fy, Real fz, Real phase) {
    return std::sin((fx * (p.x - center.x) + fy * (p.y - center.y) + fz * (p.z - center.z)) /
                        radius * 3.14159265358979323846 +
                    phase);
  };
  const Real f1x = rng.uniform(0.5, 2.5), f1y = rng.uniform(0.5, 2.5), f1z = rng.uniform(0.5, 2.5);
  const Real f2x = rng.uniform(0.5, 2.5), f2y = rng.uniform(0.5, 2.5), f2z = rng.uniform(0.5, 2.5);
  const Real p1 = rng.uniform(0.0, 6.283185307179586), p2 = rng.uniform(0.0, 6.283185307179586);
  const Real normal_amp = rng.uniform(0.6, 1.0);
  const Real tangent_amp = rng.uniform(0.1, 0.4);
  Vec3 tangent_seed{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  if (norm(tangent_seed) < 1e-6) tangent_seed = {1, 0, 0};

  std::vector<Vec3> field(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& p = mesh.vertices[i];
    const Vec3& n = normals[i];
    Vec3 tangent = tangent_seed - n * dot(tangent_seed, n);
    Real tlen = norm(tangent);
    tangent = (tlen > 1e-9) ? tangent / tlen : Vec3{0, 0, 0};
    // front weight in [0.1, 1]: quadratic ramp toward +z
    Real depth01 = (p.z - lo.z) / std::max(hi.z - lo.z, Real(1e-9));
    Real front = 0.1 + 0.9 * depth01 * depth01;
    field[i] = (n * (normal_amp * wave(p, f1x, f1y, f1z, p1)) +
                tangent * (tangent_amp * wave(p, f2x, f2y, f2z, p2))) *
               front;
  }
  return field;
}

}  // namespace detail

// Procedural stand-in for a statistical shape model: seeded smooth
// deformation fields, Gram-Schmidt orthonormalized, with geometrically
// decaying standard deviations sigma0 * decay^i.
inline LinearShapeModel build_toy_shape_model(const TriangleMesh& base, Index num_modes,
                                              std::uint64_t seed, Real sigma0 = 3.0,
                                              Real decay = 0.8) {
  validate_mesh(base);
  if (num_modes < 0 || num_modes > 3 * base.vertex_count())
    throw ConfigMismatch("num_modes must be in [0, 3N]");
  if (!(sigma0 > 0) || !(decay > 0) || decay > 1.0)
    throw ConfigMismatch("stddev sequence must be positive and non-increasing");

  LinearShapeModel model;
  model.mean_mesh = base;
  const std::vector<Vec3> normals = vertex_normals(base);

  std::uint64_t attempt = 0;
  for (Index m = 0; m < num_modes; ++m) {
    bool accepted = false;
    for (int tries = 0; tries < 10; ++tries, ++attempt) {
      Rng rng(mix_seed(seed, attempt));
      std::vector<Vec3> field = detail::smooth_field(base, normals, rng);
      Real before = std::sqrt(detail::vectorized_dot(field, field));
      // Gram-Schmidt against accepted modes (twice, for numerical hygiene)
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& prev : model.modes) {
          Real proj = detail::vectorized_dot(field, prev);
          for (std::size_t i = 0; i < field.size(); ++i) field[i] -= prev[i] * proj;
        }
      Real after = std::sqrt(detail::vectorized_dot(field, field));
      if (after < 1e-6 * before || after < 1e-12) continue;  // collapsed; next seed
      for (auto& v : field) v = v / after;
      model.modes.push_back(std::move(field));
      accepted = true;
      break;
    }
    if (!accepted)
      throw RankDeficiency("mode " + std::to_string(m) + " collapsed under Gram-Schmidt 10 times");
  }
  for (Index m = 0; m < num_modes; ++m)
    model.stddevs.push_back(sigma0 * std::pow(decay, static_cast<Real>(m)));
  return model;
}

// mean + sum_i c_i * sigma_i * mode_i
inline std::vector<Vec3> sample_shape(const LinearShapeModel& model,
                                      const std::vector<Real>& coefficients) {
  if (coefficients.size() != model.modes.size())
    throw ShapeMismatch("coefficient count does not match mode count");
  std::vector<Vec3> shape = model.mean_mesh.vertices;
  for (std::size_t m = 0; m < model.modes.size(); ++m) {
    Real scale = coefficients[m] * model.stddevs[m];
    const auto& mode = model.modes[m];
    for (std::size_t i = 0; i < shape.size(); ++i) shape[i] += mode[i] * scale;
  }
  return shape;
}

}  // namespace mgcn
