#pragma once

#include <cstdint>
#include <vector>

#include "mgcn/core.hpp"
#include "mgcn/render.hpp"
#include "mgcn/rng.hpp"
#include "mgcn/shapemodel.hpp"

namespace mgcn {

struct DataSample {
  std::vector<Vec3> shape;        // N x 3 vertices, shared topology
  GrayImage image;                // paired render
  std::vector<Real> coefficients; // the mode coefficients that produced the shape
};

// Draw one coefficient vector: i.i.d. standard normal, each entry resampled
// until |c| <= 3 to avoid degenerate extreme shapes.
inline std::vector<Real> draw_coefficients(Index num_modes, Rng& rng) {
  std::vector<Real> c(static_cast<std::size_t>(num_modes));
  for (auto& v : c) {
    do {
      v = rng.normal();
    } while (std::abs(v) > 3.0);
  }
  return c;
}

// Seeded, reproducible paired dataset. Sample i depends only on
// (seed, i), so any prefix of a larger dataset is bit-identical.
inline std::vector<DataSample> generate_dataset(const LinearShapeModel& model, Index count,
                                                const RenderConfig& render_config,
                                                std::uint64_t seed) {
  if (count < 1) throw ConfigMismatch("dataset count must be >= 1");
  validate_render_config(render_config);
  std::vector<DataSample> out;
  out.reserve(static_cast<std::size_t>(count));
  TriangleMesh scratch = model.mean_mesh;
  for (Index i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    DataSample sample;
    sample.coefficients = draw_coefficients(model.mode_count(), rng);
    sample.shape = sample_shape(model, sample.coefficients);
    scratch.vertices = sample.shape;
    sample.image = render(scratch, render_config);
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace mgcn
