#pragma once

#include <array>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mgcn/core.hpp"

namespace mgcn {

struct Landmark {
  std::string name;
  Index vertex_index = 0;
};

// Shared-topology triangle surface. Vertex coordinates are millimetres.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<Index, 3>> faces;
  std::vector<Landmark> landmarks;

  Index vertex_count() const { return static_cast<Index>(vertices.size()); }
  Index face_count() const { return static_cast<Index>(faces.size()); }
};

// Checks the TriangleMesh invariants: indices in range, no degenerate face,
// no isolated vertex.
inline void validate_mesh(const TriangleMesh& mesh) {
  const Index n = mesh.vertex_count();
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    for (int k = 0; k < 3; ++k) {
      if (face[k] < 0 || face[k] >= n)
        throw InvalidMesh("face " + std::to_string(f) + " references vertex " + std::to_string(face[k]) +
                          " outside [0, " + std::to_string(n) + ")");
      used[static_cast<std::size_t>(face[k])] = 1;
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
      throw InvalidMesh("face " + std::to_string(f) + " is degenerate");
  }
  for (Index v = 0; v < n; ++v)
    if (!used[static_cast<std::size_t>(v)])
      throw IsolatedVertex("vertex " + std::to_string(v) + " is not referenced by any face");
}

namespace detail {

inline std::string format_real(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline ParseError parse_error(const std::string& path, std::size_t line, const std::string& what) {
  return ParseError(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace detail

inline TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  TriangleMesh mesh;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v.x >> v.y >> v.z)) throw detail::parse_error(path, lineno, "malformed vertex record");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<Index> idx;
      std::string tok;
      while (ss >> tok) {
        // accept v, v/t, v/t/n, v//n forms; only the vertex index is used
        std::size_t slash = tok.find('/');
        std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
        try {
          idx.push_back(std::stoll(head));
        } catch (const std::exception&) {
          throw detail::parse_error(path, lineno, "malformed face index '" + tok + "'");
        }
      }
      if (idx.size() != 3)
        throw NonTriangleFace(path + ":" + std::to_string(lineno) + ": face with " +
                              std::to_string(idx.size()) + " indices (triangles required)");
      std::array<Index, 3> face;
      for (int k = 0; k < 3; ++k) {
        Index i = idx[static_cast<std::size_t>(k)];
        // OBJ indices are 1-based; negative indices count from the end
        face[k] = i > 0 ? i - 1 : static_cast<Index>(mesh.vertices.size()) + i;
      }
      mesh.faces.push_back(face);
    }
    // other record types (vn, vt, usemtl, ...) are ignored
  }
  validate_mesh(mesh);
  return mesh;
}

inline TriangleMesh load_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> std::string {
    if (!std::getline(in, line)) throw detail::parse_error(path, lineno, "unexpected end of file");
    ++lineno;
    return line;
  };

  if (next_line() != "ply") throw detail::parse_error(path, lineno, "missing ply magic");
  Index n_vertices = -1, n_faces = -1;
  std::vector<std::string> vertex_props;
  std::string current_element;
  bool ascii = false;
  while (true) {
    std::istringstream ss(next_line());
    std::string tag;
    ss >> tag;
    if (tag == "comment") continue;
    if (tag == "format") {
      std::string fmt;
      ss >> fmt;
      ascii = (fmt == "ascii");
      if (!ascii) throw detail::parse_error(path, lineno, "only ascii PLY is supported");
    } else if (tag == "element") {
      std::string name;
      Index count;
      ss >> name >> count;
      current_element = name;
      if (name == "vertex") n_vertices = count;
      else if (name == "face") n_faces = count;
    } else if (tag == "property") {
      if (current_element == "vertex") {
        std::string type, name;
        ss >> type >> name;
        if (type == "list") throw detail::parse_error(path, lineno, "list property on vertex element");
        vertex_props.push_back(name);
      }
    } else if (tag == "end_header") {
      break;
    }
  }
  if (n_vertices < 0 || n_faces < 0)
    throw detail::parse_error(path, lineno, "missing vertex or face element");
  Index ix = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < vertex_props.size(); ++i) {
    if (vertex_props[i] == "x") ix = static_cast<Index>(i);
    if (vertex_props[i] == "y") iy = static_cast<Index>(i);
    if (vertex_props[i] == "z") iz = static_cast<Index>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw detail::parse_error(path, lineno, "vertex element lacks x/y/z");

  TriangleMesh mesh;
  mesh.vertices.reserve(static_cast<std::size_t>(n_vertices));
  for (Index v = 0; v < n_vertices; ++v) {
    std::istringstream ss(next_line());
    std::vector<Real> vals(vertex_props.size());
    for (auto& x : vals)
      if (!(ss >> x)) throw detail::parse_error(path, lineno, "malformed vertex record");
    mesh.vertices.push_back({vals[static_cast<std::size_t>(ix)], vals[static_cast<std::size_t>(iy)],
                             vals[static_cast<std::size_t>(iz)]});
  }
  for (Index f = 0; f < n_faces; ++f) {
    std::istringstream ss(next_line());
    Index count;
    if (!(ss >> count)) throw detail::parse_error(path, lineno, "malformed face record");
    if (count != 3)
      throw NonTriangleFace(path + ":" + std::to_string(lineno) + ": face with " + std::to_string(count) +
                            " indices (triangles required)");
    std::array<Index, 3> face;
    for (int k = 0; k < 3; ++k)
      if (!(ss >> face[k])) throw detail::parse_error(path, lineno, "malformed face record");
    mesh.faces.push_back(face);
  }
  validate_mesh(mesh);
  return mesh;
}

// Loads an OBJ or an ascii PLY mesh, chosen by extension.
inline TriangleMesh load_mesh(const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".ply") return load_ply(path);
  return load_obj(path);
}

namespace detail {

// Writes a file atomically: content goes to "<path>.tmp" and is renamed over
// the target only after a successful write.
inline void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out << content;
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path + " failed: " + ec.message());
}

}  // namespace detail

inline void save_obj(const TriangleMesh& mesh, const std::string& path) {
  std::string out;
  out.reserve(mesh.vertices.size() * 40 + mesh.faces.size() * 24);
  for (const auto& v : mesh.vertices) {
    out += "v ";
    out += detail::format_real(v.x);
    out += ' ';
    out += detail::format_real(v.y);
    out += ' ';
    out += detail::format_real(v.z);
    out += '\n';
  }
  for (const auto& f : mesh.faces) {
    out += "f ";
    out += std::to_string(f[0] + 1);
    out += ' ';
    out += std::to_string(f[1] + 1);
    out += ' ';
    out += std::to_string(f[2] + 1);
    out += '\n';
  }
  detail::atomic_write(path, out);
}

inline void save_ply(const TriangleMesh& mesh, const std::string& path,
                     const std::vector<std::array<int, 3>>* vertex_colors = nullptr) {
  if (vertex_colors && vertex_colors->size() != mesh.vertices.size())
    throw ShapeMismatch("vertex color count does not match vertex count");
  std::string out = "ply\nformat ascii 1.0\n";
  out += "element vertex " + std::to_string(mesh.vertices.size()) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  if (vertex_colors) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "element face " + std::to_string(mesh.faces.size()) + "\n";
  out += "property list uchar int vertex_indices\nend_header\n";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& v = mesh.vertices[i];
    out += detail::format_real(v.x);
    out += ' ';
    out += detail::format_real(v.y);
    out += ' ';
    out += detail::format_real(v.z);
    if (vertex_colors) {
      const auto& c = (*vertex_colors)[i];
      out += ' ';
      out += std::to_string(c[0]);
      out += ' ';
      out += std::to_string(c[1]);
      out += ' ';
      out += std::to_string(c[2]);
    }
    out += '\n';
  }
  for (const auto& f : mesh.faces) {
    out += "3 " + std::to_string(f[0]) + ' ' + std::to_string(f[1]) + ' ' + std::to_string(f[2]) + '\n';
  }
  detail::atomic_write(path, out);
}

inline void save_mesh(const TriangleMesh& mesh, const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".ply") save_ply(mesh, path);
  else save_obj(mesh, path);
}

// Landmark sidecar: a JSON list of {name, vertex_index}.
inline std::vector<Landmark> load_landmarks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (!j.is_array()) throw ParseError(path + ": landmark sidecar must be a JSON array");
  std::vector<Landmark> out;
  for (const auto& item : j) {
    if (!item.contains("name") || !item.contains("vertex_index"))
      throw ParseError(path + ": landmark entries need 'name' and 'vertex_index'");
    out.push_back({item["name"].get<std::string>(), item["vertex_index"].get<Index>()});
  }
  return out;
}

inline void save_landmarks(const std::vector<Landmark>& landmarks, const std::string& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& lm : landmarks) j.push_back({{"name", lm.name}, {"vertex_index", lm.vertex_index}});
  detail::atomic_write(path, j.dump(2) + "\n");
}

}  // namespace mgcn
