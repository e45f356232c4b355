#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mgcn/core.hpp"
#include "mgcn/geometry.hpp"
#include "mgcn/mesh.hpp"

namespace mgcn {

// ---------------------------------------------------------------------------
// Rigid alignment
// ---------------------------------------------------------------------------

struct RigidTransform {
  std::array<std::array<Real, 3>, 3> rotation{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 translation;
  Real scale = 1.0;  // stays 1 in rigid mode
};

inline Vec3 apply_transform(const RigidTransform& t, const Vec3& p) {
  const Vec3 q = p * t.scale;
  const auto& r = t.rotation;
  return {r[0][0] * q.x + r[0][1] * q.y + r[0][2] * q.z + t.translation.x,
          r[1][0] * q.x + r[1][1] * q.y + r[1][2] * q.z + t.translation.y,
          r[2][0] * q.x + r[2][1] * q.y + r[2][2] * q.z + t.translation.z};
}

inline std::vector<Vec3> apply_transform(const RigidTransform& t, const std::vector<Vec3>& points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(apply_transform(t, p));
  return out;
}

inline TriangleMesh apply_transform(const RigidTransform& t, const TriangleMesh& mesh) {
  TriangleMesh out = mesh;
  out.vertices = apply_transform(t, mesh.vertices);
  return out;
}

inline void to_json(nlohmann::json& j, const RigidTransform& t) {
  j = nlohmann::json{{"rotation", t.rotation},
                     {"translation", {t.translation.x, t.translation.y, t.translation.z}},
                     {"scale", t.scale}};
}

inline void from_json(const nlohmann::json& j, RigidTransform& t) {
  j.at("rotation").get_to(t.rotation);
  const auto& tr = j.at("translation");
  t.translation = {tr.at(0).get<Real>(), tr.at(1).get<Real>(), tr.at(2).get<Real>()};
  j.at("scale").get_to(t.scale);
}

// Least-squares transform mapping source landmarks onto target landmarks:
// minimizes sum over i of |scale * R * s_i + t - t_i|^2 with det(R) = +1
// enforced (a mirror-image best fit is rejected by flipping the smallest
// singular direction). Rigid by default; with_scale adds a uniform scale for
// ingesting meshes in different units.
inline RigidTransform procrustes_align(const std::vector<Vec3>& source,
                                       const std::vector<Vec3>& target, bool with_scale = false) {
  if (source.size() != target.size())
    throw ShapeMismatch("landmark sets differ in size: " + std::to_string(source.size()) +
                        " vs " + std::to_string(target.size()));
  if (source.size() < 3)
    throw DegenerateLandmarks("alignment needs at least 3 landmarks, got " +
                              std::to_string(source.size()));
  const Real n = static_cast<Real>(source.size());
  Vec3 src_mean, tgt_mean;
  for (std::size_t i = 0; i < source.size(); ++i) {
    src_mean += source[i];
    tgt_mean += target[i];
  }
  src_mean *= 1.0 / n;
  tgt_mean *= 1.0 / n;

  Eigen::Matrix3d cross_cov = Eigen::Matrix3d::Zero();
  Real src_var = 0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 s = source[i] - src_mean;
    const Vec3 t = target[i] - tgt_mean;
    const Eigen::Vector3d se(s.x, s.y, s.z);
    const Eigen::Vector3d te(t.x, t.y, t.z);
    cross_cov += te * se.transpose();
    src_var += squared_norm(s);
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross_cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  // A (near-)rank-1 cross-covariance means the rotation is not determined:
  // collinear or coincident landmarks on either side.
  if (!(sv(1) > sv(0) * 1e-9))
    throw DegenerateLandmarks("landmark configuration is collinear, coincident, or otherwise "
                              "rank-deficient");
  const Real sign = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  Eigen::Matrix3d rot =
      svd.matrixU() * Eigen::Vector3d(1, 1, sign).asDiagonal() * svd.matrixV().transpose();

  RigidTransform out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.rotation[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = rot(r, c);
  if (with_scale) out.scale = (sv(0) + sv(1) + sign * sv(2)) / src_var;
  const Vec3 rotated_mean = apply_transform(RigidTransform{out.rotation, {0, 0, 0}, out.scale}, src_mean);
  out.translation = tgt_mean - rotated_mean;
  return out;
}

// Root-mean-square landmark misfit under a transform.
inline Real alignment_residual(const RigidTransform& t, const std::vector<Vec3>& source,
                               const std::vector<Vec3>& target) {
  if (source.size() != target.size() || source.empty())
    throw ShapeMismatch("residual needs two equal, non-empty landmark sets");
  Real acc = 0;
  for (std::size_t i = 0; i < source.size(); ++i)
    acc += squared_norm(apply_transform(t, source[i]) - target[i]);
  return std::sqrt(acc / static_cast<Real>(source.size()));
}

// ---------------------------------------------------------------------------
// Point-to-surface distance
// ---------------------------------------------------------------------------

namespace detail {

inline Vec3 closest_point_on_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const Real denom = dot(ab, ab);
  if (denom <= 0) return a;
  const Real t = std::clamp(dot(p - a, ab) / denom, 0.0, 1.0);
  return a + ab * t;
}

}  // namespace detail

// Exact point-triangle distance via the shared Voronoi-region closest-point
// query, with an edge-segment fallback for zero-area triangles (whose face
// region can produce a 0/0).
inline Real point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Real d = closest_point_on_triangle(p, a, b, c).distance;
  if (std::isfinite(d)) return d;
  Vec3 best = detail::closest_point_on_segment(p, a, b);
  for (const Vec3& q : {detail::closest_point_on_segment(p, b, c),
                        detail::closest_point_on_segment(p, c, a)})
    if (squared_norm(p - q) < squared_norm(p - best)) best = q;
  return norm(p - best);
}

// Exact distance from each point to the triangle soup.
inline std::vector<Real> point_to_surface(const std::vector<Vec3>& points,
                                          const TriangleMesh& mesh) {
  if (mesh.vertices.empty() || mesh.faces.empty())
    throw EmptyMesh("point_to_surface needs a triangulated mesh");
  std::vector<Real> out(points.size(), std::numeric_limits<Real>::infinity());
  for (std::size_t i = 0; i < points.size(); ++i) {
    Real best = std::numeric_limits<Real>::infinity();
    for (const auto& f : mesh.faces) {
      const Vec3& a = mesh.vertices[static_cast<std::size_t>(f[0])];
      const Vec3& b = mesh.vertices[static_cast<std::size_t>(f[1])];
      const Vec3& c = mesh.vertices[static_cast<std::size_t>(f[2])];
      best = std::min(best, point_triangle_distance(points[i], a, b, c));
    }
    out[i] = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Region mask
// ---------------------------------------------------------------------------

// Vertices of the reconstruction that lie in the evaluation region: within
// `margin` of the convex hull of the landmark positions. The hull points and
// margin are kept so the same region can be applied to the scan.
struct RegionMask {
  std::vector<bool> selected;
  std::vector<Vec3> hull_points;
  Real margin = 0;

  Index count() const {
    return static_cast<Index>(std::count(selected.begin(), selected.end(), true));
  }
};

namespace detail {

// Convex hull of a small point set, kept as the collection of supporting
// triangles (triples whose plane has every point on one side). Their union
// is exactly the hull boundary, which is all the distance query needs; no
// facet graph is ever built.
struct HullGeometry {
  std::vector<std::array<Vec3, 3>> triangles;
  std::vector<std::pair<Vec3, Real>> planes;  // outward unit normal n, offset d: inside has n.p <= d
  bool flat = false;                          // all points coplanar
  Real tolerance = 0;                         // absolute geometric tolerance
};

inline HullGeometry build_hull(const std::vector<Vec3>& points) {
  if (points.size() < 3)
    throw DegenerateLandmarks("a region needs at least 3 landmarks, got " +
                              std::to_string(points.size()));
  Vec3 lo = points[0], hi = points[0];
  Vec3 mean;
  for (const Vec3& p : points) {
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
    mean += p;
  }
  mean *= 1.0 / static_cast<Real>(points.size());
  const Real diag = norm(hi - lo);

  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const Vec3& p : points) {
    const Eigen::Vector3d d(p.x - mean.x, p.y - mean.y, p.z - mean.z);
    scatter += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
  const Eigen::Vector3d ev = eig.eigenvalues();  // ascending
  if (!(ev(1) > ev(2) * 1e-12))
    throw DegenerateLandmarks("landmarks are collinear or coincident; they span no area");

  HullGeometry hull;
  hull.flat = !(ev(0) > ev(2) * 1e-12);
  hull.tolerance = 1e-9 * diag;

  const std::size_t n = points.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      for (std::size_t k = j + 1; k < n; ++k) {
        const Vec3 normal = cross(points[j] - points[i], points[k] - points[i]);
        const Real len = norm(normal);
        if (len <= hull.tolerance * diag) continue;  // sliver triple
        const Vec3 unit = normal / len;
        Real side_lo = 0, side_hi = 0;
        for (const Vec3& p : points) {
          const Real s = dot(unit, p - points[i]);
          side_lo = std::min(side_lo, s);
          side_hi = std::max(side_hi, s);
        }
        const bool upper = side_hi <= hull.tolerance;  // all points below the plane
        const bool lower = side_lo >= -hull.tolerance;
        if (!upper && !lower) continue;
        hull.triangles.push_back({points[i], points[j], points[k]});
        if (upper) hull.planes.emplace_back(unit, dot(unit, points[i]));
        if (lower) hull.planes.emplace_back(unit * -1.0, -dot(unit, points[i]));
      }
    }
  }
  return hull;
}

inline Real hull_distance(const Vec3& p, const HullGeometry& hull) {
  if (!hull.flat) {
    bool inside = true;
    for (const auto& [normal, offset] : hull.planes) {
      if (dot(normal, p) > offset + hull.tolerance) {
        inside = false;
        break;
      }
    }
    if (inside) return 0;
  }
  // Outside (or the hull is flat): nearest point lies on the boundary, which
  // the supporting triangles cover completely.
  Real best = std::numeric_limits<Real>::infinity();
  for (const auto& tri : hull.triangles)
    best = std::min(best, point_triangle_distance(p, tri[0], tri[1], tri[2]));
  return best;
}

}  // namespace detail

inline RegionMask region_mask_from_landmarks(const TriangleMesh& mesh,
                                             const std::vector<Vec3>& landmark_points,
                                             Real margin) {
  if (margin < 0) throw ConfigMismatch("mask margin must be >= 0");
  const detail::HullGeometry hull = detail::build_hull(landmark_points);
  RegionMask mask;
  mask.hull_points = landmark_points;
  mask.margin = margin;
  mask.selected.resize(mesh.vertices.size());
  bool any = false;
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    const bool in = detail::hull_distance(mesh.vertices[v], hull) <= margin + hull.tolerance;
    mask.selected[v] = in;
    any = any || in;
  }
  if (!any) throw EmptyMask("region mask selects no vertices");
  return mask;
}

// ---------------------------------------------------------------------------
// Bidirectional error report
// ---------------------------------------------------------------------------

struct EvaluationReport {
  std::vector<Real> recon_to_scan;    // per reconstruction vertex, full map
  std::vector<Real> masked_distances; // recon_to_scan restricted to the mask
  Real mean_recon_to_scan = 0;        // over masked vertices
  Real mean_scan_to_recon = 0;        // over scan vertices in the region
  Real combined = 0;                  // mean of the two directional means
  Real masked_mean = 0;
  Real masked_std = 0;
  Real masked_median = 0;
  Real masked_max = 0;
  std::string reconstruction_id;
  std::string scan_id;
  RigidTransform alignment;
};

// Symmetric surface error between an aligned reconstruction and a scan. The
// per-vertex map exists only for the reconstruction: scans have no shared
// topology, so their direction contributes a mean alone. The scan side is
// restricted to the same landmark region when the mask carries one;
// otherwise every scan vertex counts.
inline EvaluationReport bidirectional_error(const TriangleMesh& reconstruction,
                                            const TriangleMesh& scan, const RegionMask& mask) {
  if (reconstruction.vertices.empty() || reconstruction.faces.empty())
    throw EmptyMesh("reconstruction mesh is empty or untriangulated");
  if (scan.vertices.empty() || scan.faces.empty())
    throw EmptyMesh("scan mesh is empty or untriangulated");
  if (mask.selected.size() != reconstruction.vertices.size())
    throw ShapeMismatch("mask covers " + std::to_string(mask.selected.size()) +
                        " vertices, reconstruction has " +
                        std::to_string(reconstruction.vertices.size()));

  EvaluationReport report;
  report.recon_to_scan = point_to_surface(reconstruction.vertices, scan);
  for (std::size_t v = 0; v < mask.selected.size(); ++v)
    if (mask.selected[v]) report.masked_distances.push_back(report.recon_to_scan[v]);
  if (report.masked_distances.empty()) throw EmptyMask("mask selects no reconstruction vertices");

  Real acc = 0, max_d = 0;
  for (Real d : report.masked_distances) {
    acc += d;
    max_d = std::max(max_d, d);
  }
  const Real count = static_cast<Real>(report.masked_distances.size());
  report.masked_mean = acc / count;
  report.mean_recon_to_scan = report.masked_mean;
  report.masked_max = max_d;
  Real var = 0;
  for (Real d : report.masked_distances) var += (d - report.masked_mean) * (d - report.masked_mean);
  report.masked_std = std::sqrt(var / count);
  std::vector<Real> sorted = report.masked_distances;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  report.masked_median =
      (sorted.size() % 2 == 1) ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);

  std::vector<Vec3> scan_points;
  if (mask.hull_points.size() >= 3) {
    const detail::HullGeometry hull = detail::build_hull(mask.hull_points);
    for (const Vec3& p : scan.vertices)
      if (detail::hull_distance(p, hull) <= mask.margin + hull.tolerance)
        scan_points.push_back(p);
    if (scan_points.empty()) throw EmptyMask("no scan vertices fall in the masked region");
  } else {
    scan_points = scan.vertices;
  }
  const std::vector<Real> scan_d = point_to_surface(scan_points, reconstruction);
  Real scan_acc = 0;
  for (Real d : scan_d) scan_acc += d;
  report.mean_scan_to_recon = scan_acc / static_cast<Real>(scan_d.size());

  report.combined = 0.5 * (report.mean_recon_to_scan + report.mean_scan_to_recon);
  return report;
}

inline nlohmann::json report_json(const EvaluationReport& report) {
  constexpr int kBins = 16;
  const Real hi = std::max(report.masked_max, 1e-12);
  std::vector<Real> edges(kBins + 1);
  for (int b = 0; b <= kBins; ++b) edges[static_cast<std::size_t>(b)] = hi * b / kBins;
  std::vector<Index> counts(kBins, 0);
  for (Real d : report.masked_distances) {
    int bin = std::min(kBins - 1, static_cast<int>(d / hi * kBins));
    counts[static_cast<std::size_t>(bin)] += 1;
  }
  return nlohmann::json{
      {"ids", {{"reconstruction", report.reconstruction_id}, {"scan", report.scan_id}}},
      {"transform", report.alignment},
      {"directional_means",
       {{"reconstruction_to_scan", report.mean_recon_to_scan},
        {"scan_to_reconstruction", report.mean_scan_to_recon}}},
      {"combined", report.combined},
      {"masked",
       {{"count", static_cast<Index>(report.masked_distances.size())},
        {"mean", report.masked_mean},
        {"std", report.masked_std},
        {"median", report.masked_median},
        {"max", report.masked_max}}},
      {"histogram", {{"edges", edges}, {"counts", counts}}}};
}

// ---------------------------------------------------------------------------
// Error-map export
// ---------------------------------------------------------------------------

// Colored PLY plus a JSON sidecar ("<path>.json") with the raw values. The
// ramp is linear from blue (0 mm) to red (cap mm): with t = clamp(e / cap),
// color = (round(255 t), 0, round(255 (1 - t))).
inline void export_error_map(const TriangleMesh& mesh, const std::vector<Real>& errors,
                             const std::string& path, Real cap = 5.0) {
  if (errors.size() != mesh.vertices.size())
    throw ShapeMismatch("error map needs one value per vertex");
  if (!(cap > 0)) throw ConfigMismatch("color ramp cap must be positive");
  std::vector<std::array<int, 3>> colors;
  colors.reserve(errors.size());
  for (Real e : errors) {
    const Real t = std::clamp(e / cap, 0.0, 1.0);
    colors.push_back({static_cast<int>(std::lround(255.0 * t)), 0,
                      static_cast<int>(std::lround(255.0 * (1.0 - t)))});
  }
  save_ply(mesh, path, &colors);
  nlohmann::json sidecar{{"cap_mm", cap}, {"errors_mm", errors}};
  detail::atomic_write(path + ".json", sidecar.dump(2) + "\n");
}

}  // namespace mgcn
