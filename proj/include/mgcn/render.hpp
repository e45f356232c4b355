#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "mgcn/core.hpp"
#include "mgcn/geometry.hpp"
#include "mgcn/mesh.hpp"

namespace mgcn {

// Pinhole camera: X_cam = rotation * X_world + translation, pixel
// (f*x/z + cx, f*y/z + cy), depth = camera-space z (must be positive).
struct Camera {
  Real focal = 100.0;
  Real cx = 32.0;
  Real cy = 32.0;
  Mat3 rotation;
  Vec3 translation{0, 0, 0};
};

enum class RenderMode { grayscale_lambertian, depth };

struct RenderConfig {
  Index width = 64;
  Index height = 64;
  Camera camera;
  Vec3 light_direction{0, 0, 1};  // unit vector pointing from surface toward the light
  Real albedo = 0.9;
  RenderMode mode = RenderMode::grayscale_lambertian;
  Real depth_scale = 1000.0;  // divisor applied when a depth image is written to PGM
};

struct GrayImage {
  Index width = 0;
  Index height = 0;
  std::vector<Real> pixels;  // row-major, [0,1] grayscale or depth in mm

  Real& at(Index x, Index y) { return pixels[static_cast<std::size_t>(y * width + x)]; }
  Real at(Index x, Index y) const { return pixels[static_cast<std::size_t>(y * width + x)]; }
};

struct ProjectedPoint {
  Real u = 0, v = 0;
  Real depth = 0;
};

inline ProjectedPoint project_point(const Camera& camera, const Vec3& world) {
  Vec3 c = camera.rotation * world + camera.translation;
  ProjectedPoint out;
  out.depth = c.z;
  if (c.z > 0) {
    out.u = camera.focal * c.x / c.z + camera.cx;
    out.v = camera.focal * c.y / c.z + camera.cy;
  }
  return out;
}

inline void validate_render_config(const RenderConfig& config) {
  if (config.width < 8 || config.height < 8)
    throw ConfigMismatch("render target must be at least 8x8");
  if (!(config.camera.focal > 0)) throw ConfigMismatch("focal length must be positive");
  if (std::abs(norm(config.light_direction) - 1.0) > 1e-6)
    throw ConfigMismatch("light_direction must be a unit vector");
  if (!(config.albedo > 0) || config.albedo > 1.0)
    throw ConfigMismatch("albedo must be in (0, 1]");
  if (!(config.depth_scale > 0)) throw ConfigMismatch("depth_scale must be positive");
}

inline void to_json(nlohmann::json& j, const Camera& c) {
  j = nlohmann::json{{"focal", c.focal},
                     {"cx", c.cx},
                     {"cy", c.cy},
                     {"rotation", c.rotation.m},
                     {"translation", {c.translation.x, c.translation.y, c.translation.z}}};
}

inline void from_json(const nlohmann::json& j, Camera& c) {
  j.at("focal").get_to(c.focal);
  j.at("cx").get_to(c.cx);
  j.at("cy").get_to(c.cy);
  j.at("rotation").get_to(c.rotation.m);
  const auto& t = j.at("translation");
  if (!t.is_array() || t.size() != 3) throw ParseError("camera translation must be [x, y, z]");
  c.translation = {t[0].get<Real>(), t[1].get<Real>(), t[2].get<Real>()};
}

inline void to_json(nlohmann::json& j, const RenderConfig& c) {
  j = nlohmann::json{
      {"width", c.width},
      {"height", c.height},
      {"camera", c.camera},
      {"light_direction", {c.light_direction.x, c.light_direction.y, c.light_direction.z}},
      {"albedo", c.albedo},
      {"mode", c.mode == RenderMode::depth ? "depth" : "grayscale_lambertian"},
      {"depth_scale", c.depth_scale}};
}

inline void from_json(const nlohmann::json& j, RenderConfig& c) {
  j.at("width").get_to(c.width);
  j.at("height").get_to(c.height);
  j.at("camera").get_to(c.camera);
  const auto& l = j.at("light_direction");
  if (!l.is_array() || l.size() != 3) throw ParseError("light_direction must be [x, y, z]");
  c.light_direction = {l[0].get<Real>(), l[1].get<Real>(), l[2].get<Real>()};
  j.at("albedo").get_to(c.albedo);
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "depth")
    c.mode = RenderMode::depth;
  else if (mode == "grayscale_lambertian")
    c.mode = RenderMode::grayscale_lambertian;
  else
    throw ParseError("render mode must be \"grayscale_lambertian\" or \"depth\"");
  j.at("depth_scale").get_to(c.depth_scale);
}

// Flat-shaded software rasterizer with a z-buffer. Pixel centers sit at
// (x+0.5, y+0.5); coverage ties on shared edges are resolved by a top-left
// fill rule so adjacent triangles never double-paint or crack. Depth is
// interpolated perspective-correctly (linear in 1/z).
inline GrayImage render(const TriangleMesh& mesh, const RenderConfig& config) {
  validate_render_config(config);
  validate_mesh(mesh);

  GrayImage image;
  image.width = config.width;
  image.height = config.height;
  image.pixels.assign(static_cast<std::size_t>(config.width * config.height), 0.0);
  std::vector<Real> zbuffer(image.pixels.size(), std::numeric_limits<Real>::infinity());

  // camera-space vertices and screen projections
  const std::size_t n = mesh.vertices.size();
  std::vector<Vec3> cam(n);
  std::vector<Real> u(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    cam[i] = config.camera.rotation * mesh.vertices[i] + config.camera.translation;
    if (cam[i].z <= 1e-9)
      throw BehindCamera("vertex " + std::to_string(i) + " has non-positive depth " +
                         std::to_string(cam[i].z));
    // Snap to 1/256 pixel. Edge functions over these coordinates evaluate
    // exactly in doubles, so the two triangles sharing an edge see exactly
    // opposite signs: no cracks, no double-painted pixels.
    u[i] = std::nearbyint((config.camera.focal * cam[i].x / cam[i].z + config.camera.cx) * 256.0) /
           256.0;
    v[i] = std::nearbyint((config.camera.focal * cam[i].y / cam[i].z + config.camera.cy) * 256.0) /
           256.0;
  }

  for (const auto& f : mesh.faces) {
    Index i0 = f[0], i1 = f[1], i2 = f[2];
    // world-space flat shading
    Real shade = 0;
    if (config.mode == RenderMode::grayscale_lambertian) {
      const Vec3& a = mesh.vertices[static_cast<std::size_t>(i0)];
      const Vec3& b = mesh.vertices[static_cast<std::size_t>(i1)];
      const Vec3& c = mesh.vertices[static_cast<std::size_t>(i2)];
      Vec3 nrm = cross(b - a, c - a);
      Real len = norm(nrm);
      if (len <= 0) continue;
      shade = config.albedo * std::max(0.0, dot(nrm / len, config.light_direction));
    }

    // orient positively in screen space (y-down)
    Real x0 = u[static_cast<std::size_t>(i0)], y0 = v[static_cast<std::size_t>(i0)];
    Real x1 = u[static_cast<std::size_t>(i1)], y1 = v[static_cast<std::size_t>(i1)];
    Real x2 = u[static_cast<std::size_t>(i2)], y2 = v[static_cast<std::size_t>(i2)];
    Real z0 = cam[static_cast<std::size_t>(i0)].z, z1 = cam[static_cast<std::size_t>(i1)].z,
         z2 = cam[static_cast<std::size_t>(i2)].z;
    Real area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
    if (area2 == 0.0) continue;  // edge-on
    if (area2 < 0) {
      std::swap(x1, x2);
      std::swap(y1, y2);
      std::swap(z1, z2);
      area2 = -area2;
    }

    // top-left rule: a tie pixel belongs to the triangle whose boundary edge
    // goes upward (dy < 0) or is a horizontal top edge (dy == 0, dx > 0)
    auto edge_accepts_ties = [](Real dx, Real dy) { return dy < 0.0 || (dy == 0.0 && dx > 0.0); };
    const Real e0dx = x2 - x1, e0dy = y2 - y1;  // edge opposite vertex 0
    const Real e1dx = x0 - x2, e1dy = y0 - y2;
    const Real e2dx = x1 - x0, e2dy = y1 - y0;
    const bool t0 = edge_accepts_ties(e0dx, e0dy);
    const bool t1 = edge_accepts_ties(e1dx, e1dy);
    const bool t2 = edge_accepts_ties(e2dx, e2dy);

    Index px_lo = static_cast<Index>(std::floor(std::min({x0, x1, x2}) - 0.5));
    Index px_hi = static_cast<Index>(std::ceil(std::max({x0, x1, x2}) - 0.5));
    Index py_lo = static_cast<Index>(std::floor(std::min({y0, y1, y2}) - 0.5));
    Index py_hi = static_cast<Index>(std::ceil(std::max({y0, y1, y2}) - 0.5));
    px_lo = std::max<Index>(px_lo, 0);
    py_lo = std::max<Index>(py_lo, 0);
    px_hi = std::min<Index>(px_hi, config.width - 1);
    py_hi = std::min<Index>(py_hi, config.height - 1);

    const Real inv_area = 1.0 / area2;
    for (Index py = py_lo; py <= py_hi; ++py) {
      const Real sy = static_cast<Real>(py) + 0.5;
      for (Index px = px_lo; px <= px_hi; ++px) {
        const Real sx = static_cast<Real>(px) + 0.5;
        const Real w0 = e0dx * (sy - y1) - e0dy * (sx - x1);
        const Real w1 = e1dx * (sy - y2) - e1dy * (sx - x2);
        const Real w2 = e2dx * (sy - y0) - e2dy * (sx - x0);
        const bool inside = (w0 > 0 || (w0 == 0 && t0)) && (w1 > 0 || (w1 == 0 && t1)) &&
                            (w2 > 0 || (w2 == 0 && t2));
        if (!inside) continue;
        // perspective-correct depth: 1/z is affine in screen space
        const Real l0 = w0 * inv_area, l1 = w1 * inv_area, l2 = w2 * inv_area;
        const Real inv_z = l0 / z0 + l1 / z1 + l2 / z2;
        const Real z = 1.0 / inv_z;
        std::size_t idx = static_cast<std::size_t>(py * config.width + px);
        if (z < zbuffer[idx]) {
          zbuffer[idx] = z;
          image.pixels[idx] = (config.mode == RenderMode::depth) ? z : shade;
        }
      }
    }
  }
  return image;
}

// 16-bit binary PGM (P5, maxval 65535, big-endian samples). Values are
// clamped to [0,1] and quantized; u/65535 -> u round-trips exactly.
inline void save_pgm(const GrayImage& image, const std::string& path) {
  std::string body;
  body.reserve(64 + image.pixels.size() * 2);
  body += "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n65535\n";
  for (Real p : image.pixels) {
    Real clamped = std::min(std::max(p, 0.0), 1.0);
    auto q = static_cast<std::uint16_t>(std::lround(clamped * 65535.0));
    body.push_back(static_cast<char>(q >> 8));
    body.push_back(static_cast<char>(q & 0xff));
  }
  detail::atomic_write(path, body);
}

inline GrayImage load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw ParseError(path + ": not a binary PGM (P5) file");
  // header tokens may be separated by comments
  auto next_int = [&](const char* what) {
    for (;;) {
      int c = in.peek();
      if (c == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      if (std::isspace(c)) {
        in.get();
        continue;
      }
      break;
    }
    long value = 0;
    if (!(in >> value)) throw ParseError(path + ": missing " + std::string(what));
    return value;
  };
  long width = next_int("width");
  long height = next_int("height");
  long maxval = next_int("maxval");
  if (maxval != 65535) throw ParseError(path + ": expected maxval 65535, got " + std::to_string(maxval));
  in.get();  // single whitespace after maxval
  GrayImage image;
  image.width = static_cast<Index>(width);
  image.height = static_cast<Index>(height);
  image.pixels.resize(static_cast<std::size_t>(width * height));
  std::vector<unsigned char> raw(image.pixels.size() * 2);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw ParseError(path + ": truncated pixel data");
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    std::uint16_t q = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
    image.pixels[i] = static_cast<Real>(q) / 65535.0;
  }
  return image;
}

}  // namespace mgcn
