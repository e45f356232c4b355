#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mgcn/mesh.hpp"
#include "mgcn/primitives.hpp"
#include "mgcn/rng.hpp"

using namespace mgcn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "mgcn_mesh_tests";
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

TriangleMesh two_triangles() {
  TriangleMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  m.faces = {{0, 1, 2}, {1, 3, 2}};
  return m;
}

}  // namespace

TEST(MeshValidate, AcceptsValid) { EXPECT_NO_THROW(validate_mesh(two_triangles())); }

TEST(MeshValidate, RejectsOutOfRangeIndex) {
  auto m = two_triangles();
  m.faces[0][1] = 7;
  EXPECT_THROW(validate_mesh(m), InvalidMesh);
}

TEST(MeshValidate, RejectsDegenerateFace) {
  auto m = two_triangles();
  m.faces[1] = {1, 1, 2};
  EXPECT_THROW(validate_mesh(m), InvalidMesh);
}

TEST(MeshValidate, RejectsIsolatedVertex) {
  auto m = two_triangles();
  m.vertices.push_back({5, 5, 5});
  EXPECT_THROW(validate_mesh(m), IsolatedVertex);
}

TEST(MeshIo, ObjRoundTripBitExact) {
  Rng rng(31);
  auto m = icosphere(1);
  for (auto& v : m.vertices) {
    v.x += rng.uniform(-0.1, 0.1);
    v.y += rng.uniform(-0.1, 0.1);
    v.z += rng.uniform(-0.1, 0.1);
  }
  fs::path p = temp_dir() / "roundtrip.obj";
  save_mesh(m, p.string());
  auto back = load_mesh(p.string());
  ASSERT_EQ(back.vertices.size(), m.vertices.size());
  ASSERT_EQ(back.faces.size(), m.faces.size());
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    EXPECT_EQ(back.vertices[i].x, m.vertices[i].x);
    EXPECT_EQ(back.vertices[i].y, m.vertices[i].y);
    EXPECT_EQ(back.vertices[i].z, m.vertices[i].z);
  }
  EXPECT_EQ(back.faces, m.faces);
}

TEST(MeshIo, ObjParsesSlashForms) {
  fs::path p = temp_dir() / "slashes.obj";
  std::ofstream out(p);
  out << "v 0 0 0\nv 1 0 0\nv 0 1 0\n"
      << "vt 0 0\nvn 0 0 1\n"
      << "f 1/1/1 2/1/1 3/1/1\n";
  out.close();
  auto m = load_mesh(p.string());
  EXPECT_EQ(m.vertices.size(), 3u);
  ASSERT_EQ(m.faces.size(), 1u);
  EXPECT_EQ(m.faces[0], (std::array<Index, 3>{0, 1, 2}));
}

TEST(MeshIo, ObjNegativeIndices) {
  fs::path p = temp_dir() / "negative.obj";
  std::ofstream out(p);
  out << "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n";
  out.close();
  auto m = load_mesh(p.string());
  ASSERT_EQ(m.faces.size(), 1u);
  EXPECT_EQ(m.faces[0], (std::array<Index, 3>{0, 1, 2}));
}

TEST(MeshIo, ObjRejectsQuads) {
  fs::path p = temp_dir() / "quad.obj";
  std::ofstream out(p);
  out << "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
  out.close();
  EXPECT_THROW(load_mesh(p.string()), NonTriangleFace);
}

TEST(MeshIo, ObjParseErrorHasLocation) {
  fs::path p = temp_dir() / "bad.obj";
  std::ofstream out(p);
  out << "v 0 0 0\nv nonsense here\n";
  out.close();
  try {
    load_mesh(p.string());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

TEST(MeshIo, MissingFileThrowsIoError) {
  EXPECT_THROW(load_mesh((temp_dir() / "does_not_exist.obj").string()), IoError);
}

TEST(MeshIo, PlyAsciiLoad) {
  fs::path p = temp_dir() / "tri.ply";
  std::ofstream out(p);
  out << "ply\nformat ascii 1.0\nelement vertex 3\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
      << "0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
  out.close();
  auto m = load_mesh(p.string());
  EXPECT_EQ(m.vertices.size(), 3u);
  ASSERT_EQ(m.faces.size(), 1u);
  EXPECT_DOUBLE_EQ(m.vertices[1].x, 1.0);
}

TEST(MeshIo, PlySaveLoadRoundTrip) {
  auto m = two_triangles();
  fs::path p = temp_dir() / "round.ply";
  save_mesh(m, p.string());
  auto back = load_mesh(p.string());
  EXPECT_EQ(back.faces, m.faces);
  for (std::size_t i = 0; i < m.vertices.size(); ++i)
    EXPECT_NEAR(back.vertices[i].x, m.vertices[i].x, 0.0);
}

TEST(MeshIo, PlyRejectsQuadFace) {
  fs::path p = temp_dir() / "quad.ply";
  std::ofstream out(p);
  out << "ply\nformat ascii 1.0\nelement vertex 4\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
      << "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
  out.close();
  EXPECT_THROW(load_mesh(p.string()), NonTriangleFace);
}

TEST(MeshIo, NoTempFileLeftBehind) {
  fs::path p = temp_dir() / "atomic.obj";
  save_mesh(two_triangles(), p.string());
  EXPECT_TRUE(fs::exists(p));
  EXPECT_FALSE(fs::exists(p.string() + ".tmp"));
}

TEST(Landmarks, JsonRoundTrip) {
  std::vector<Landmark> lm = {{"nose_tip", 5}, {"chin", 17}};
  fs::path p = temp_dir() / "landmarks.json";
  save_landmarks(lm, p.string());
  auto back = load_landmarks(p.string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "nose_tip");
  EXPECT_EQ(back[1].vertex_index, 17);
}

TEST(Primitives, IcosphereCounts) {
  EXPECT_EQ(icosphere(0).vertex_count(), 12);
  EXPECT_EQ(icosphere(1).vertex_count(), 42);
  EXPECT_EQ(icosphere(2).vertex_count(), 162);
  EXPECT_EQ(icosphere(3).vertex_count(), 642);
}

TEST(Primitives, IcosphereOnSphereAndValid) {
  auto m = icosphere(2, 3.5);
  EXPECT_NO_THROW(validate_mesh(m));
  for (const auto& v : m.vertices) EXPECT_NEAR(norm(v), 3.5, 1e-12);
}

TEST(Primitives, IcosphereEulerCharacteristic) {
  auto m = icosphere(3);
  std::set<std::pair<Index, Index>> edges;
  for (const auto& f : m.faces)
    for (int k = 0; k < 3; ++k) {
      Index a = f[k], b = f[(k + 1) % 3];
      edges.insert({std::min(a, b), std::max(a, b)});
    }
  Index v = m.vertex_count(), e = static_cast<Index>(edges.size()), fc = m.face_count();
  EXPECT_EQ(v - e + fc, 2);  // genus 0
}

TEST(Primitives, PlanarGridCounts) {
  auto m = planar_grid(4, 3, 0.5);
  EXPECT_EQ(m.vertex_count(), 5 * 4);
  EXPECT_EQ(m.face_count(), 2 * 4 * 3);
  EXPECT_NO_THROW(validate_mesh(m));
  for (const auto& v : m.vertices) EXPECT_DOUBLE_EQ(v.z, 0.0);
}

TEST(Primitives, CubeSurfaceCounts) {
  for (Index n : {1, 2, 3}) {
    auto m = cube_surface(n, 2.0);
    EXPECT_EQ(m.vertex_count(), 6 * n * n + 2) << "n=" << n;
    EXPECT_EQ(m.face_count(), 12 * n * n) << "n=" << n;
    EXPECT_NO_THROW(validate_mesh(m));
  }
}
