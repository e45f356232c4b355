#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mgcn/core.hpp"
#include "mgcn/mesh.hpp"
#include "mgcn/sparse.hpp"
#include "mgcn/tensor.hpp"

namespace mgcn {

// Binary model/artifact container: the 4-byte magic "MGCN", a little-endian
// u32 format version, a little-endian u64 JSON byte length, the JSON block
// (free-form metadata plus a tensor directory of names/shapes/offsets), and
// finally the payload as raw little-endian IEEE-754 doubles.
inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;  // directory order

  bool has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return true;
    return false;
  }

  const Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw ParseError("container has no tensor named '" + name + "'");
  }

  void put(const std::string& name, Tensor t) {
    for (auto& [n, existing] : tensors) {
      if (n == name) {
        existing = std::move(t);
        return;
      }
    }
    tensors.emplace_back(name, std::move(t));
  }
};

namespace detail {

inline void append_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_f64_le(std::string& out, Real v) {
  append_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

inline std::uint32_t read_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline Real read_f64_le(const unsigned char* p) { return std::bit_cast<Real>(read_u64_le(p)); }

}  // namespace detail

inline void save_container(const std::string& path, const Container& container) {
  nlohmann::json directory = nlohmann::json::array();
  std::uint64_t offset = 0;  // element offset into the payload
  for (const auto& [name, tensor] : container.tensors) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = tensor.shape;
    entry["offset"] = offset;
    directory.push_back(entry);
    offset += tensor.data.size();
  }
  nlohmann::json header;
  header["meta"] = container.meta;
  header["tensors"] = directory;
  const std::string json_text = header.dump();

  std::string out;
  out.reserve(16 + json_text.size() + static_cast<std::size_t>(offset) * 8);
  out += "MGCN";
  detail::append_u32_le(out, kContainerVersion);
  detail::append_u64_le(out, json_text.size());
  out += json_text;
  for (const auto& [name, tensor] : container.tensors)
    for (Real v : tensor.data) detail::append_f64_le(out, v);
  detail::atomic_write(path, out);
}

inline Container load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());

  if (raw.size() < 16 || raw.compare(0, 4, "MGCN") != 0)
    throw ParseError(path + ": not an MGCN container");
  const std::uint32_t version = detail::read_u32_le(bytes + 4);
  if (version != kContainerVersion)
    throw ParseError(path + ": unsupported container version " + std::to_string(version));
  const std::uint64_t json_length = detail::read_u64_le(bytes + 8);
  if (16 + json_length > raw.size()) throw ParseError(path + ": truncated JSON block");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.substr(16, static_cast<std::size_t>(json_length)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad JSON header: " + e.what());
  }
  if (!header.contains("meta") || !header.contains("tensors") || !header["tensors"].is_array())
    throw ParseError(path + ": JSON header missing meta/tensors");

  const std::size_t payload_start = 16 + static_cast<std::size_t>(json_length);
  const std::size_t payload_bytes = raw.size() - payload_start;
  if (payload_bytes % 8 != 0) throw ParseError(path + ": payload is not a whole number of doubles");
  const std::uint64_t payload_count = payload_bytes / 8;

  Container container;
  container.meta = header["meta"];
  for (const auto& entry : header["tensors"]) {
    if (!entry.contains("name") || !entry.contains("shape") || !entry.contains("offset"))
      throw ParseError(path + ": malformed tensor directory entry");
    Tensor tensor;
    tensor.shape = entry["shape"].get<std::vector<Index>>();
    std::uint64_t count = 1;
    for (Index d : tensor.shape) {
      if (d < 0) throw ParseError(path + ": negative dimension in tensor directory");
      count *= static_cast<std::uint64_t>(d);
    }
    const std::uint64_t offset = entry["offset"].get<std::uint64_t>();
    if (offset + count > payload_count)
      throw ParseError(path + ": tensor '" + entry["name"].get<std::string>() +
                       "' overruns the payload");
    tensor.data.resize(static_cast<std::size_t>(count));
    const unsigned char* src = bytes + payload_start + static_cast<std::size_t>(offset) * 8;
    for (std::size_t i = 0; i < tensor.data.size(); ++i)
      tensor.data[i] = detail::read_f64_le(src + i * 8);
    container.tensors.emplace_back(entry["name"].get<std::string>(), std::move(tensor));
  }
  return container;
}

// --- adapters for the non-tensor objects that ride along in checkpoints ---

inline void put_vec3_field(Container& container, const std::string& name,
                           const std::vector<Vec3>& points) {
  Tensor t;
  t.shape = {static_cast<Index>(points.size()), 3};
  t.data.reserve(points.size() * 3);
  for (const auto& p : points) {
    t.data.push_back(p.x);
    t.data.push_back(p.y);
    t.data.push_back(p.z);
  }
  container.put(name, std::move(t));
}

inline std::vector<Vec3> get_vec3_field(const Container& container, const std::string& name) {
  const Tensor& t = container.tensor(name);
  if (t.shape.size() != 2 || t.shape[1] != 3)
    throw ParseError("tensor '" + name + "' is not an Nx3 field");
  std::vector<Vec3> points(static_cast<std::size_t>(t.shape[0]));
  for (std::size_t i = 0; i < points.size(); ++i)
    points[i] = {t.data[3 * i], t.data[3 * i + 1], t.data[3 * i + 2]};
  return points;
}

// Sparse matrices are stored as four tensors under a common prefix. Integer
// index arrays ride in the double payload; every value involved is far below
// 2^53, so the round trip is exact.
inline void put_sparse(Container& container, const std::string& prefix,
                       const SparseRealMatrix& matrix) {
  Tensor dims;
  dims.shape = {2};
  dims.data = {static_cast<Real>(matrix.rows), static_cast<Real>(matrix.cols)};
  container.put(prefix + ".dims", std::move(dims));

  Tensor offsets;
  offsets.shape = {static_cast<Index>(matrix.row_offsets.size())};
  offsets.data.reserve(matrix.row_offsets.size());
  for (Index v : matrix.row_offsets) offsets.data.push_back(static_cast<Real>(v));
  container.put(prefix + ".row_offsets", std::move(offsets));

  Tensor cols;
  cols.shape = {static_cast<Index>(matrix.col_indices.size())};
  cols.data.reserve(matrix.col_indices.size());
  for (Index v : matrix.col_indices) cols.data.push_back(static_cast<Real>(v));
  container.put(prefix + ".col_indices", std::move(cols));

  Tensor values;
  values.shape = {static_cast<Index>(matrix.values.size())};
  values.data = matrix.values;
  container.put(prefix + ".values", std::move(values));
}

inline SparseRealMatrix get_sparse(const Container& container, const std::string& prefix) {
  const Tensor& dims = container.tensor(prefix + ".dims");
  const Tensor& offsets = container.tensor(prefix + ".row_offsets");
  const Tensor& cols = container.tensor(prefix + ".col_indices");
  const Tensor& values = container.tensor(prefix + ".values");
  if (dims.data.size() != 2) throw ParseError("sparse '" + prefix + "': bad dims");

  SparseRealMatrix matrix;
  matrix.rows = static_cast<Index>(dims.data[0]);
  matrix.cols = static_cast<Index>(dims.data[1]);
  if (static_cast<Index>(offsets.data.size()) != matrix.rows + 1)
    throw ParseError("sparse '" + prefix + "': row_offsets length mismatch");
  if (cols.data.size() != values.data.size())
    throw ParseError("sparse '" + prefix + "': col_indices/values length mismatch");
  matrix.row_offsets.clear();  // a fresh matrix starts as 0x0 with one offset
  matrix.row_offsets.reserve(offsets.data.size());
  for (Real v : offsets.data) matrix.row_offsets.push_back(static_cast<Index>(v));
  matrix.col_indices.reserve(cols.data.size());
  for (Real v : cols.data) matrix.col_indices.push_back(static_cast<Index>(v));
  matrix.values = values.data;
  if (matrix.row_offsets.back() != static_cast<Index>(matrix.values.size()))
    throw ParseError("sparse '" + prefix + "': row_offsets do not cover the values");
  return matrix;
}

inline void put_mesh(Container& container, const std::string& prefix, const TriangleMesh& mesh) {
  put_vec3_field(container, prefix + ".vertices", mesh.vertices);
  Tensor faces;
  faces.shape = {static_cast<Index>(mesh.faces.size()), 3};
  faces.data.reserve(mesh.faces.size() * 3);
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) faces.data.push_back(static_cast<Real>(f[static_cast<std::size_t>(k)]));
  container.put(prefix + ".faces", std::move(faces));
  if (!mesh.landmarks.empty()) {
    Tensor indices;
    indices.shape = {static_cast<Index>(mesh.landmarks.size())};
    indices.data.reserve(mesh.landmarks.size());
    nlohmann::json names = nlohmann::json::array();
    for (const Landmark& lm : mesh.landmarks) {
      indices.data.push_back(static_cast<Real>(lm.vertex_index));
      names.push_back(lm.name);
    }
    container.put(prefix + ".landmarks", std::move(indices));
    container.meta[prefix + ".landmark_names"] = std::move(names);
  }
}

inline TriangleMesh get_mesh(const Container& container, const std::string& prefix) {
  TriangleMesh mesh;
  mesh.vertices = get_vec3_field(container, prefix + ".vertices");
  const Tensor& faces = container.tensor(prefix + ".faces");
  if (faces.shape.size() != 2 || faces.shape[1] != 3)
    throw ParseError("tensor '" + prefix + ".faces' is not an Mx3 field");
  mesh.faces.resize(static_cast<std::size_t>(faces.shape[0]));
  for (std::size_t i = 0; i < mesh.faces.size(); ++i)
    for (int k = 0; k < 3; ++k)
      mesh.faces[i][static_cast<std::size_t>(k)] =
          static_cast<Index>(faces.data[3 * i + static_cast<std::size_t>(k)]);
  if (container.has(prefix + ".landmarks")) {
    const Tensor& indices = container.tensor(prefix + ".landmarks");
    const std::string names_key = prefix + ".landmark_names";
    if (!container.meta.contains(names_key) ||
        container.meta[names_key].size() != indices.data.size())
      throw ParseError("landmark names for '" + prefix + "' are missing or mismatched");
    mesh.landmarks.reserve(indices.data.size());
    for (std::size_t i = 0; i < indices.data.size(); ++i)
      mesh.landmarks.push_back(
          {container.meta[names_key][i].get<std::string>(), static_cast<Index>(indices.data[i])});
  }
  return mesh;
}

inline void put_scalar(Container& container, const std::string& name, Real value) {
  Tensor t;
  t.shape = {1};
  t.data = {value};
  container.put(name, std::move(t));
}

inline Real get_scalar(const Container& container, const std::string& name) {
  const Tensor& t = container.tensor(name);
  if (t.data.size() != 1) throw ParseError("tensor '" + name + "' is not a scalar");
  return t.data[0];
}

}  // namespace mgcn
