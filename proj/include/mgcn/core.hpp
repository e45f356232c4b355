#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mgcn {

using Real = double;
using Index = std::int64_t;

// Base class for all toolkit errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// mesh / graph construction
class IsolatedVertex : public Error { public: using Error::Error; };
class ZeroDegree : public Error { public: using Error::Error; };
class NoConvergence : public Error { public: using Error::Error; };
class NonPositiveLambda : public Error { public: using Error::Error; };
class ParseError : public Error { public: using Error::Error; };
class NonTriangleFace : public Error { public: using Error::Error; };
class InvalidMesh : public Error { public: using Error::Error; };

// sampling
class TargetUnreachable : public Error { public: using Error::Error; };
class EmptyCoarseMesh : public Error { public: using Error::Error; };

// layers / training
class ShapeMismatch : public Error { public: using Error::Error; };
class InvalidProbability : public Error { public: using Error::Error; };
class ConfigMismatch : public Error { public: using Error::Error; };
class EmptyDataset : public Error { public: using Error::Error; };
class DivergedLoss : public Error { public: using Error::Error; };

// synthetic data
class RankDeficiency : public Error { public: using Error::Error; };
class BehindCamera : public Error { public: using Error::Error; };

// evaluation
class DegenerateLandmarks : public Error { public: using Error::Error; };
class EmptyMesh : public Error { public: using Error::Error; };
class EmptyMask : public Error { public: using Error::Error; };

// files / config
class IoError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };

struct Vec3 {
  Real x = 0, y = 0, z = 0;

  Real& operator[](int i) { return (&x)[i]; }
  Real operator[](int i) const { return (&x)[i]; }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(Real s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(Real s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  Vec3& operator*=(Real s) { x *= s; y *= s; z *= s; return *this; }
};

inline Vec3 operator*(Real s, const Vec3& v) { return v * s; }
inline Real dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline Real norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Real squared_norm(const Vec3& v) { return dot(v, v); }
inline Vec3 normalized(const Vec3& v) {
  Real n = norm(v);
  return n > 0 ? v / n : Vec3{0, 0, 0};
}

}  // namespace mgcn
