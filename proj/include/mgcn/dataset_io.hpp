#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgcn/checkpoint.hpp"
#include "mgcn/mesh.hpp"
#include "mgcn/render.hpp"
#include "mgcn/synthdata.hpp"

namespace mgcn {

// ---------------------------------------------------------------------------
// Shape model <-> MGCN container
// ---------------------------------------------------------------------------

inline void save_shape_model(const LinearShapeModel& model, const std::string& path) {
  Container container;
  container.meta["kind"] = "shape_model";
  put_mesh(container, "mean", model.mean_mesh);

  Tensor modes;
  modes.shape = {model.mode_count(), model.vertex_count(), 3};
  for (const auto& field : model.modes)
    for (const Vec3& v : field) {
      modes.data.push_back(v.x);
      modes.data.push_back(v.y);
      modes.data.push_back(v.z);
    }
  container.put("modes", std::move(modes));

  Tensor stddevs;
  stddevs.shape = {model.mode_count()};
  stddevs.data = model.stddevs;
  container.put("stddevs", std::move(stddevs));

  save_container(path, container);
}

inline LinearShapeModel load_shape_model(const std::string& path) {
  const Container container = load_container(path);
  if (!container.meta.contains("kind") || container.meta["kind"] != "shape_model")
    throw ParseError(path + ": not a shape-model container");

  LinearShapeModel model;
  model.mean_mesh = get_mesh(container, "mean");
  const Tensor& modes = container.tensor("modes");
  if (modes.shape.size() != 3 || modes.shape[2] != 3 ||
      modes.shape[1] != model.mean_mesh.vertex_count())
    throw ParseError(path + ": modes tensor does not match the mean mesh");
  model.modes.resize(static_cast<std::size_t>(modes.shape[0]));
  std::size_t cursor = 0;
  for (auto& field : model.modes) {
    field.resize(static_cast<std::size_t>(modes.shape[1]));
    for (Vec3& v : field) {
      v = {modes.data[cursor], modes.data[cursor + 1], modes.data[cursor + 2]};
      cursor += 3;
    }
  }
  const Tensor& stddevs = container.tensor("stddevs");
  if (static_cast<Index>(stddevs.data.size()) != modes.shape[0])
    throw ParseError(path + ": stddev count does not match the mode count");
  model.stddevs = stddevs.data;
  return model;
}

// ---------------------------------------------------------------------------
// Dataset directory layout
//
//   <dir>/manifest.json
//   <dir>/base.obj                  (+ base_landmarks.json when present)
//   <dir>/shapes/sample_00000.obj
//   <dir>/images/sample_00000.pgm
// ---------------------------------------------------------------------------

struct DiskDataset {
  TriangleMesh base;
  RenderConfig render;
  std::uint64_t seed = 0;
  std::vector<DataSample> samples;
};

namespace detail {

inline std::string sample_stem(Index i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%05lld", static_cast<long long>(i));
  return buf;
}

inline void ensure_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

}  // namespace detail

inline void write_dataset(const std::vector<DataSample>& samples, const TriangleMesh& base,
                          const RenderConfig& render_config, std::uint64_t seed,
                          const std::string& dir) {
  if (samples.empty()) throw EmptyDataset("refusing to write an empty dataset");
  detail::ensure_directory(dir + "/shapes");
  detail::ensure_directory(dir + "/images");

  save_obj(base, dir + "/base.obj");
  if (!base.landmarks.empty()) save_landmarks(base.landmarks, dir + "/base_landmarks.json");

  TriangleMesh scratch = base;
  nlohmann::json entries = nlohmann::json::array();
  for (Index i = 0; i < static_cast<Index>(samples.size()); ++i) {
    const DataSample& sample = samples[static_cast<std::size_t>(i)];
    const std::string stem = detail::sample_stem(i);
    scratch.vertices = sample.shape;
    save_obj(scratch, dir + "/shapes/" + stem + ".obj");

    GrayImage image = sample.image;
    if (render_config.mode == RenderMode::depth)
      for (Real& p : image.pixels) p /= render_config.depth_scale;
    save_pgm(image, dir + "/images/" + stem + ".pgm");

    entries.push_back({{"shape", "shapes/" + stem + ".obj"},
                       {"image", "images/" + stem + ".pgm"},
                       {"coefficients", sample.coefficients}});
  }

  nlohmann::json manifest{{"format", "mgcn-dataset"},
                          {"version", 1},
                          {"seed", seed},
                          {"base_mesh", "base.obj"},
                          {"render", render_config},
                          {"count", samples.size()},
                          {"samples", entries}};
  detail::atomic_write(dir + "/manifest.json", manifest.dump(2) + "\n");
}

inline DiskDataset load_dataset(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw IoError("cannot open " + dir + "/manifest.json");
  nlohmann::json manifest;
  DiskDataset dataset;
  try {
    in >> manifest;
    if (manifest.at("format") != "mgcn-dataset")
      throw ParseError(dir + ": not an mgcn-dataset manifest");
    manifest.at("seed").get_to(dataset.seed);
    manifest.at("render").get_to(dataset.render);
    dataset.base = load_mesh(dir + "/" + manifest.at("base_mesh").get<std::string>());

    for (const auto& entry : manifest.at("samples")) {
      DataSample sample;
      TriangleMesh shape = load_obj(dir + "/" + entry.at("shape").get<std::string>());
      if (shape.vertex_count() != dataset.base.vertex_count())
        throw ShapeMismatch(dir + ": sample vertex count differs from the base mesh");
      sample.shape = std::move(shape.vertices);
      sample.image = load_pgm(dir + "/" + entry.at("image").get<std::string>());
      if (dataset.render.mode == RenderMode::depth)
        for (Real& p : sample.image.pixels) p *= dataset.render.depth_scale;
      entry.at("coefficients").get_to(sample.coefficients);
      dataset.samples.push_back(std::move(sample));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(dir + "/manifest.json: " + e.what());
  }
  if (dataset.samples.empty()) throw EmptyDataset(dir + ": manifest lists no samples");
  return dataset;
}

inline std::vector<std::vector<Vec3>> dataset_shapes(const DiskDataset& dataset) {
  std::vector<std::vector<Vec3>> shapes;
  shapes.reserve(dataset.samples.size());
  for (const DataSample& s : dataset.samples) shapes.push_back(s.shape);
  return shapes;
}

}  // namespace mgcn
