#pragma once

#include <array>
#include <cmath>

#include "mgcn/core.hpp"

namespace mgcn {

struct ClosestPointResult {
  Vec3 point;
  std::array<Real, 3> barycentric{1, 0, 0};
  Real distance = 0;
};

// Closest point on triangle (a, b, c) to p, with barycentric coordinates of
// the clamped point. Region-based case analysis after Ericson, "Real-Time
// Collision Detection".
inline ClosestPointResult closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                                                    const Vec3& c) {
  ClosestPointResult out;
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const Real d1 = dot(ab, ap);
  const Real d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) {
    out.point = a;
    out.barycentric = {1, 0, 0};
    out.distance = norm(p - out.point);
    return out;
  }

  const Vec3 bp = p - b;
  const Real d3 = dot(ab, bp);
  const Real d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) {
    out.point = b;
    out.barycentric = {0, 1, 0};
    out.distance = norm(p - out.point);
    return out;
  }

  const Real vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const Real v = d1 / (d1 - d3);
    out.point = a + ab * v;
    out.barycentric = {1 - v, v, 0};
    out.distance = norm(p - out.point);
    return out;
  }

  const Vec3 cp = p - c;
  const Real d5 = dot(ab, cp);
  const Real d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) {
    out.point = c;
    out.barycentric = {0, 0, 1};
    out.distance = norm(p - out.point);
    return out;
  }

  const Real vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const Real w = d2 / (d2 - d6);
    out.point = a + ac * w;
    out.barycentric = {1 - w, 0, w};
    out.distance = norm(p - out.point);
    return out;
  }

  const Real va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const Real w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    out.point = b + (c - b) * w;
    out.barycentric = {0, 1 - w, w};
    out.distance = norm(p - out.point);
    return out;
  }

  const Real denom = 1.0 / (va + vb + vc);
  const Real v = vb * denom;
  const Real w = vc * denom;
  out.point = a + ab * v + ac * w;
  out.barycentric = {1 - v - w, v, w};
  out.distance = norm(p - out.point);
  return out;
}

inline Vec3 face_normal(const Vec3& a, const Vec3& b, const Vec3& c) {
  return normalized(cross(b - a, c - a));
}

// Row-major 3x3 matrix, just enough linear algebra for cameras and rigid
// transforms.
struct Mat3 {
  std::array<Real, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return Mat3{}; }

  Real& operator()(int r, int c) { return m[static_cast<std::size_t>(r * 3 + c)]; }
  Real operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        Real s = 0;
        for (int k = 0; k < 3; ++k) s += (*this)(r, k) * o(k, c);
        out(r, c) = s;
      }
    return out;
  }

  Mat3 transposed() const {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out(r, c) = (*this)(c, r);
    return out;
  }

  Real determinant() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  static Mat3 rotation_x(Real angle) {
    Mat3 r;
    Real c = std::cos(angle), s = std::sin(angle);
    r.m = {1, 0, 0, 0, c, -s, 0, s, c};
    return r;
  }
  static Mat3 rotation_y(Real angle) {
    Mat3 r;
    Real c = std::cos(angle), s = std::sin(angle);
    r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
    return r;
  }
  static Mat3 rotation_z(Real angle) {
    Mat3 r;
    Real c = std::cos(angle), s = std::sin(angle);
    r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
    return r;
  }
};

}  // namespace mgcn
