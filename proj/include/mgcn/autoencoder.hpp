#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mgcn/checkpoint.hpp"
#include "mgcn/core.hpp"
#include "mgcn/decimate.hpp"
#include "mgcn/layers.hpp"
#include "mgcn/optim.hpp"
#include "mgcn/rng.hpp"
#include "mgcn/tensor.hpp"

namespace mgcn {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct AutoencoderConfig {
  Index latent_size = 64;
  Index cheb_order = 9;
  Index sampling_factor = 4;
  Index encoder_levels = 5;  // number of sampled conv stages in the encoder
  std::vector<Index> widths = {16, 32, 32, 64, 64};
  Index epochs = 300;
  Index batch_size = 16;
  Real learning_rate = 0.008;
  Real lr_decay = 0.98;
  Real momentum = 0.9;
  Real weight_decay = 0.0005;
  std::uint64_t seed = 0;
};

inline void validate_autoencoder_config(const AutoencoderConfig& c) {
  if (c.latent_size < 1) throw ConfigMismatch("latent_size must be >= 1");
  if (c.cheb_order < 0) throw ConfigMismatch("cheb_order must be >= 0");
  if (c.sampling_factor < 2) throw ConfigMismatch("sampling_factor must be >= 2");
  if (c.encoder_levels < 2) throw ConfigMismatch("encoder_levels must be >= 2");
  if (static_cast<Index>(c.widths.size()) != c.encoder_levels)
    throw ConfigMismatch("need one channel width per encoder level");
  for (Index w : c.widths)
    if (w < 1) throw ConfigMismatch("channel widths must be >= 1");
  if (c.epochs < 1) throw ConfigMismatch("epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigMismatch("batch_size must be >= 1");
  if (!(c.learning_rate > 0)) throw ConfigMismatch("learning_rate must be positive");
  if (!(c.lr_decay > 0) || c.lr_decay > 1.0) throw ConfigMismatch("lr_decay must be in (0, 1]");
  if (c.momentum < 0 || c.momentum >= 1.0) throw ConfigMismatch("momentum must be in [0, 1)");
  if (c.weight_decay < 0) throw ConfigMismatch("weight_decay must be >= 0");
}

inline void to_json(nlohmann::json& j, const AutoencoderConfig& c) {
  j = nlohmann::json{{"latent_size", c.latent_size},
                     {"cheb_order", c.cheb_order},
                     {"sampling_factor", c.sampling_factor},
                     {"encoder_levels", c.encoder_levels},
                     {"widths", c.widths},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"lr_decay", c.lr_decay},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, AutoencoderConfig& c) {
  j.at("latent_size").get_to(c.latent_size);
  j.at("cheb_order").get_to(c.cheb_order);
  j.at("sampling_factor").get_to(c.sampling_factor);
  j.at("encoder_levels").get_to(c.encoder_levels);
  j.at("widths").get_to(c.widths);
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("lr_decay").get_to(c.lr_decay);
  j.at("momentum").get_to(c.momentum);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("seed").get_to(c.seed);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

// Mesh autoencoder over a decimation hierarchy with L = encoder_levels
// sampled stages. Encoder: per level, ChebConv then Q_d then ReLU; a dense
// layer maps the flattened coarsest features to the latent (ReLU'd like every
// other fully connected layer). Decoder: a dense layer maps the latent
// straight to the second-coarsest level (absorbing one upsampling), then
// L-1 stages of Q_u + ChebConv + ReLU walk back to the finest level, and a
// final linear ChebConv without upsampling emits N x 3 coordinates.
//
// Inputs are normalized as (x - input_mean) / input_scale; both fields are
// set from the training set and restored from checkpoints.
struct AutoencoderModel {
  AutoencoderConfig config;
  MeshHierarchy hierarchy;
  std::vector<ChebConvLayer> encoder_convs;  // stage i convolves level i
  DenseLayer to_latent;
  DenseLayer from_latent;
  std::vector<ChebConvLayer> decoder_convs;  // entry j convolves level L-2-j
  ChebConvLayer final_conv;
  std::vector<Vec3> input_mean;
  Real input_scale = 1.0;
  std::vector<SparseRealMatrix> q_down_t;  // transposed samplers for backward
  std::vector<SparseRealMatrix> q_up_t;

  // The conv layers point into this->hierarchy.laplacians, so the model is
  // movable but must not be copied casually; use clone().
  AutoencoderModel() = default;
  AutoencoderModel(const AutoencoderModel&) = delete;
  AutoencoderModel& operator=(const AutoencoderModel&) = delete;
  AutoencoderModel(AutoencoderModel&&) = default;
  AutoencoderModel& operator=(AutoencoderModel&&) = default;

  Index finest_count() const { return hierarchy.levels.front().vertex_count(); }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& c : encoder_convs) {
      out.push_back(&c.weights);
      out.push_back(&c.bias);
    }
    out.push_back(&to_latent.weights);
    out.push_back(&to_latent.bias);
    out.push_back(&from_latent.weights);
    out.push_back(&from_latent.bias);
    for (auto& c : decoder_convs) {
      out.push_back(&c.weights);
      out.push_back(&c.bias);
    }
    out.push_back(&final_conv.weights);
    out.push_back(&final_conv.bias);
    return out;
  }

  std::vector<const Tensor*> parameters() const {
    auto mutable_params = const_cast<AutoencoderModel*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
  }

  AutoencoderModel clone() const;
};

namespace detail {

// Creates the layer objects for model.config over model.hierarchy; weights
// are left uninitialized (build_model randomizes, the loader overwrites).
inline void wire_autoencoder(AutoencoderModel& model) {
  const AutoencoderConfig& c = model.config;
  const Index levels = c.encoder_levels;
  const auto& meshes = model.hierarchy.levels;

  model.encoder_convs.clear();
  for (Index i = 0; i < levels; ++i) {
    Index in = (i == 0) ? 3 : c.widths[static_cast<std::size_t>(i - 1)];
    model.encoder_convs.emplace_back(c.cheb_order, in, c.widths[static_cast<std::size_t>(i)],
                                     &model.hierarchy.laplacians[static_cast<std::size_t>(i)]);
  }
  const Index coarsest = meshes[static_cast<std::size_t>(levels)].vertex_count();
  const Index second = meshes[static_cast<std::size_t>(levels - 1)].vertex_count();
  const Index top_width = c.widths[static_cast<std::size_t>(levels - 1)];
  model.to_latent = DenseLayer(coarsest * top_width, c.latent_size);
  model.from_latent = DenseLayer(c.latent_size, second * top_width);

  model.decoder_convs.clear();
  for (Index j = 0; j < levels - 1; ++j) {
    Index level = levels - 2 - j;
    model.decoder_convs.emplace_back(c.cheb_order, c.widths[static_cast<std::size_t>(level + 1)],
                                     c.widths[static_cast<std::size_t>(level)],
                                     &model.hierarchy.laplacians[static_cast<std::size_t>(level)]);
  }
  model.final_conv = ChebConvLayer(c.cheb_order, c.widths[0], 3, &model.hierarchy.laplacians[0]);

  model.q_down_t.clear();
  model.q_up_t.clear();
  for (Index i = 0; i < levels; ++i) {
    model.q_down_t.push_back(model.hierarchy.pairs[static_cast<std::size_t>(i)].q_down.transposed());
    model.q_up_t.push_back(model.hierarchy.pairs[static_cast<std::size_t>(i)].q_up.transposed());
  }
}

}  // namespace detail

inline AutoencoderModel AutoencoderModel::clone() const {
  AutoencoderModel copy;
  copy.config = config;
  copy.hierarchy = hierarchy;
  detail::wire_autoencoder(copy);
  auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = *src[i];
  copy.input_mean = input_mean;
  copy.input_scale = input_scale;
  return copy;
}

inline AutoencoderModel build_model(const AutoencoderConfig& config,
                                    const MeshHierarchy& hierarchy) {
  validate_autoencoder_config(config);
  if (hierarchy.depth() < config.encoder_levels)
    throw ConfigMismatch("hierarchy depth " + std::to_string(hierarchy.depth()) +
                         " is too shallow for " + std::to_string(config.encoder_levels) +
                         " encoder levels");
  AutoencoderModel model;
  model.config = config;
  model.hierarchy = hierarchy;
  detail::wire_autoencoder(model);

  Rng rng(mix_seed(config.seed, 0xae3d));
  for (auto& c : model.encoder_convs) c.init(rng);
  model.to_latent.init(rng);
  model.from_latent.init(rng);
  for (auto& c : model.decoder_convs) c.init(rng);
  model.final_conv.init(rng);

  model.input_mean.assign(static_cast<std::size_t>(model.finest_count()), Vec3{0, 0, 0});
  model.input_scale = 1.0;
  return model;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor normalize_input(const AutoencoderModel& model, const std::vector<Vec3>& vertices) {
  if (static_cast<Index>(vertices.size()) != model.finest_count())
    throw ShapeMismatch("expected " + std::to_string(model.finest_count()) + " vertices, got " +
                        std::to_string(vertices.size()));
  Tensor x({model.finest_count(), 3});
  const Real inv = 1.0 / model.input_scale;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    Vec3 d = vertices[i] - model.input_mean[i];
    x.data[3 * i] = d.x * inv;
    x.data[3 * i + 1] = d.y * inv;
    x.data[3 * i + 2] = d.z * inv;
  }
  return x;
}

inline std::vector<Vec3> denormalize_output(const AutoencoderModel& model, const Tensor& y) {
  std::vector<Vec3> out(static_cast<std::size_t>(y.dim(0)));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = Vec3{y.data[3 * i], y.data[3 * i + 1], y.data[3 * i + 2]} * model.input_scale +
             model.input_mean[i];
  return out;
}

// Every intermediate needed to run the backward pass of one sample.
struct AeTrace {
  std::vector<ChebContext> enc_ctx;  // per encoder stage
  std::vector<Tensor> enc_pre;       // downsampled conv output, before ReLU
  Tensor flat;                       // post-ReLU input of to_latent
  Tensor latent_pre;                 // pre-ReLU latent
  Tensor latent;                     // post-ReLU latent
  Tensor dec_dense_pre;              // pre-ReLU from_latent output
  std::vector<ChebContext> dec_ctx;  // per decoder stage, processing order
  std::vector<Tensor> dec_pre;       // conv output before ReLU, processing order
  ChebContext final_ctx;
};

inline Tensor encoder_forward(const AutoencoderModel& model, const Tensor& x0, AeTrace* trace) {
  const Index levels = model.config.encoder_levels;
  Tensor h = x0;
  for (Index i = 0; i < levels; ++i) {
    ChebContext ctx;
    const auto& conv = model.encoder_convs[static_cast<std::size_t>(i)];
    Tensor c = cheb_conv_forward(conv, h, trace ? &ctx : nullptr);
    const auto& pair = model.hierarchy.pairs[static_cast<std::size_t>(i)];
    Tensor d({pair.coarse_count, conv.out_channels});
    pair.q_down.multiply_dense(c.data.data(), conv.out_channels, d.data.data());
    h = relu_forward(d);
    if (trace) {
      trace->enc_ctx.push_back(std::move(ctx));
      trace->enc_pre.push_back(std::move(d));
    }
  }
  Tensor flat = h.reshaped({static_cast<Index>(h.data.size())});
  Tensor latent_pre = dense_forward(model.to_latent, flat);
  Tensor latent = relu_forward(latent_pre);
  if (trace) {
    trace->flat = std::move(flat);
    trace->latent_pre = std::move(latent_pre);
    trace->latent = latent;
  }
  return latent;
}

inline Tensor decoder_forward(const AutoencoderModel& model, const Tensor& latent, AeTrace* trace) {
  const Index levels = model.config.encoder_levels;
  const Index top_width = model.config.widths[static_cast<std::size_t>(levels - 1)];
  Tensor g_pre = dense_forward(model.from_latent, latent);
  Tensor g = relu_forward(g_pre);
  if (trace) trace->dec_dense_pre = std::move(g_pre);

  Index level = levels - 1;
  Tensor h = g.reshaped(
      {model.hierarchy.levels[static_cast<std::size_t>(level)].vertex_count(), top_width});
  for (Index j = 0; j < levels - 1; ++j) {
    level = levels - 2 - j;
    const auto& pair = model.hierarchy.pairs[static_cast<std::size_t>(level)];
    const auto& conv = model.decoder_convs[static_cast<std::size_t>(j)];
    Tensor u({pair.fine_count, conv.in_channels});
    pair.q_up.multiply_dense(h.data.data(), conv.in_channels, u.data.data());
    ChebContext ctx;
    Tensor c = cheb_conv_forward(conv, u, trace ? &ctx : nullptr);
    h = relu_forward(c);
    if (trace) {
      trace->dec_ctx.push_back(std::move(ctx));
      trace->dec_pre.push_back(std::move(c));
    }
  }
  ChebContext final_ctx;
  Tensor y = cheb_conv_forward(model.final_conv, h, trace ? &final_ctx : nullptr);
  if (trace) trace->final_ctx = std::move(final_ctx);
  return y;
}

// Accumulates parameter gradients (aligned with model.parameters()) given
// d loss / d y_norm; ordering of accumulation is fixed for determinism.
inline void autoencoder_backward(const AutoencoderModel& model, const AeTrace& trace,
                                 const Tensor& loss_grad, std::vector<Tensor>& grads) {
  const Index levels = model.config.encoder_levels;
  // Parameter slot layout mirrors parameters(): encoder convs, to_latent,
  // from_latent, decoder convs, final conv; two slots (weights, bias) each.
  const std::size_t slot_to_latent = static_cast<std::size_t>(levels) * 2;
  const std::size_t slot_from_latent = slot_to_latent + 2;
  const std::size_t slot_dec = slot_from_latent + 2;
  const std::size_t slot_final = slot_dec + static_cast<std::size_t>(levels - 1) * 2;

  auto add_into = [](Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
  };

  ChebConvGrads fg = cheb_conv_backward(model.final_conv, trace.final_ctx, loss_grad);
  add_into(grads[slot_final], fg.weights);
  add_into(grads[slot_final + 1], fg.bias);
  Tensor u = std::move(fg.x);

  for (Index j = levels - 2; j >= 0; --j) {
    const Index level = levels - 2 - j;
    u = relu_backward(trace.dec_pre[static_cast<std::size_t>(j)], u);
    const auto& conv = model.decoder_convs[static_cast<std::size_t>(j)];
    ChebConvGrads cg = cheb_conv_backward(conv, trace.dec_ctx[static_cast<std::size_t>(j)], u);
    add_into(grads[slot_dec + static_cast<std::size_t>(j) * 2], cg.weights);
    add_into(grads[slot_dec + static_cast<std::size_t>(j) * 2 + 1], cg.bias);
    const auto& qt = model.q_up_t[static_cast<std::size_t>(level)];
    Tensor up({qt.rows, conv.in_channels});
    qt.multiply_dense(cg.x.data.data(), conv.in_channels, up.data.data());
    u = std::move(up);
  }

  Tensor u_flat = u.reshaped({static_cast<Index>(u.data.size())});
  u_flat = relu_backward(trace.dec_dense_pre, u_flat);
  DenseGrads dg = dense_backward(model.from_latent, trace.latent, u_flat);
  add_into(grads[slot_from_latent], dg.weights);
  add_into(grads[slot_from_latent + 1], dg.bias);

  Tensor uz = relu_backward(trace.latent_pre, dg.x);
  DenseGrads tg = dense_backward(model.to_latent, trace.flat, uz);
  add_into(grads[slot_to_latent], tg.weights);
  add_into(grads[slot_to_latent + 1], tg.bias);

  u = tg.x;  // flattened coarsest features
  for (Index i = levels - 1; i >= 0; --i) {
    const auto& conv = model.encoder_convs[static_cast<std::size_t>(i)];
    const auto& pair = model.hierarchy.pairs[static_cast<std::size_t>(i)];
    Tensor shaped = u.reshaped({pair.coarse_count, conv.out_channels});
    shaped = relu_backward(trace.enc_pre[static_cast<std::size_t>(i)], shaped);
    const auto& qt = model.q_down_t[static_cast<std::size_t>(i)];
    Tensor fine({qt.rows, conv.out_channels});
    qt.multiply_dense(shaped.data.data(), conv.out_channels, fine.data.data());
    ChebConvGrads cg = cheb_conv_backward(conv, trace.enc_ctx[static_cast<std::size_t>(i)], fine);
    add_into(grads[static_cast<std::size_t>(i) * 2], cg.weights);
    add_into(grads[static_cast<std::size_t>(i) * 2 + 1], cg.bias);
    u = cg.x.reshaped({static_cast<Index>(cg.x.data.size())});
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Inference API
// ---------------------------------------------------------------------------

inline std::vector<Real> encode3d(const AutoencoderModel& model,
                                  const std::vector<Vec3>& vertices) {
  Tensor x = detail::normalize_input(model, vertices);
  Tensor latent = detail::encoder_forward(model, x, nullptr);
  return latent.data;
}

inline std::vector<Vec3> decode(const AutoencoderModel& model, const std::vector<Real>& latent) {
  if (static_cast<Index>(latent.size()) != model.config.latent_size)
    throw ShapeMismatch("latent size mismatch");
  Tensor z({model.config.latent_size});
  z.data = latent;
  Tensor y = detail::decoder_forward(model, z, nullptr);
  return detail::denormalize_output(model, y);
}

inline Real mean_euclidean_error(const std::vector<Vec3>& prediction,
                                 const std::vector<Vec3>& truth) {
  if (prediction.size() != truth.size() || prediction.empty())
    throw ShapeMismatch("mean_euclidean_error needs two equal, non-empty vertex sets");
  Real acc = 0;
  for (std::size_t i = 0; i < prediction.size(); ++i) acc += norm(prediction[i] - truth[i]);
  return acc / static_cast<Real>(prediction.size());
}

// ---------------------------------------------------------------------------
// Stage-1 training
// ---------------------------------------------------------------------------

struct EpochRecord {
  Index epoch = 0;
  Real train_loss = 0;     // mean per-sample L1 loss, normalized coordinates
  Real val_mee = 0;        // millimetres
  Real learning_rate = 0;
  Real wall_seconds = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
};

inline nlohmann::json history_json(const TrainHistory& history) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& r : history.records)
    epochs.push_back({{"epoch", r.epoch},
                      {"train_loss", r.train_loss},
                      {"val_mee", r.val_mee},
                      {"learning_rate", r.learning_rate},
                      {"wall_seconds", r.wall_seconds}});
  return nlohmann::json{{"epochs", epochs}};
}

inline TrainHistory history_from_json(const nlohmann::json& j) {
  TrainHistory history;
  for (const auto& e : j.at("epochs")) {
    EpochRecord r;
    e.at("epoch").get_to(r.epoch);
    e.at("train_loss").get_to(r.train_loss);
    e.at("val_mee").get_to(r.val_mee);
    e.at("learning_rate").get_to(r.learning_rate);
    e.at("wall_seconds").get_to(r.wall_seconds);
    history.records.push_back(r);
  }
  return history;
}

// Loss (normalized coordinates) of one shape through the full autoencoder.
inline Real stage1_sample_loss(const AutoencoderModel& model, const std::vector<Vec3>& shape) {
  Tensor x = detail::normalize_input(model, shape);
  Tensor latent = detail::encoder_forward(model, x, nullptr);
  Tensor y = detail::decoder_forward(model, latent, nullptr);
  return l1_loss(y, x).loss;
}

inline std::vector<Tensor> zero_gradients(const AutoencoderModel& model) {
  std::vector<Tensor> grads;
  for (const Tensor* p : model.parameters()) grads.emplace_back(p->shape);
  return grads;
}

struct Stage1Batch {
  Real mean_loss = 0;
  std::vector<Tensor> grads;  // of the batch-mean loss
};

// Forward/backward over a batch. Per-sample gradients are computed into
// private buffers (possibly on worker threads) and reduced in sample order,
// so the result is bit-identical for any thread count.
inline Stage1Batch stage1_batch(const AutoencoderModel& model,
                                const std::vector<std::vector<Vec3>>& shapes,
                                const std::vector<std::size_t>& indices, Index threads = 1) {
  if (indices.empty()) throw EmptyDataset("stage1_batch needs at least one sample");
  // Validate up front: the per-sample work may run on a worker thread, where
  // a thrown exception would terminate the process.
  for (std::size_t idx : indices) {
    if (idx >= shapes.size()) throw ShapeMismatch("batch index out of range");
    if (static_cast<Index>(shapes[idx].size()) != model.finest_count())
      throw ShapeMismatch("batch shape has wrong vertex count");
  }
  const std::size_t count = indices.size();
  std::vector<std::vector<Tensor>> sample_grads(count);
  std::vector<Real> sample_loss(count, 0.0);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      const std::vector<Vec3>& shape = shapes[indices[s]];
      Tensor x = detail::normalize_input(model, shape);
      detail::AeTrace trace;
      Tensor latent = detail::encoder_forward(model, x, &trace);
      Tensor y = detail::decoder_forward(model, latent, &trace);
      L1Result l1 = l1_loss(y, x);
      sample_loss[s] = l1.loss;
      sample_grads[s] = zero_gradients(model);
      detail::autoencoder_backward(model, trace, l1.grad, sample_grads[s]);
    }
  };

  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max<Index>(threads, 1)), count);
  if (workers <= 1) {
    work(0, count);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      std::size_t begin = w * chunk;
      std::size_t end = std::min(count, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(work, begin, end);
    }
    for (auto& t : pool) t.join();
  }

  Stage1Batch out;
  out.grads = zero_gradients(model);
  const Real weight = 1.0 / static_cast<Real>(count);
  for (std::size_t s = 0; s < count; ++s) {
    out.mean_loss += sample_loss[s] * weight;
    for (std::size_t p = 0; p < out.grads.size(); ++p)
      for (std::size_t i = 0; i < out.grads[p].data.size(); ++i)
        out.grads[p].data[i] += sample_grads[s][p].data[i] * weight;
  }
  return out;
}

// Sets the normalization (per-vertex mean, single global scale) from the
// training set.
inline void compute_normalization(AutoencoderModel& model,
                                  const std::vector<std::vector<Vec3>>& shapes) {
  if (shapes.empty()) throw EmptyDataset("normalization needs a non-empty training set");
  const std::size_t n = static_cast<std::size_t>(model.finest_count());
  model.input_mean.assign(n, Vec3{0, 0, 0});
  for (const auto& shape : shapes) {
    if (shape.size() != n) throw ShapeMismatch("training shape has wrong vertex count");
    for (std::size_t i = 0; i < n; ++i) model.input_mean[i] += shape[i];
  }
  const Real inv_count = 1.0 / static_cast<Real>(shapes.size());
  for (auto& m : model.input_mean) m *= inv_count;
  Real sq = 0;
  for (const auto& shape : shapes)
    for (std::size_t i = 0; i < n; ++i) {
      Vec3 d = shape[i] - model.input_mean[i];
      sq += dot(d, d);
    }
  Real scale = std::sqrt(sq / (static_cast<Real>(shapes.size()) * static_cast<Real>(n)));
  model.input_scale = (scale > 1e-12) ? scale : 1.0;
}

struct Stage1Session {
  AutoencoderModel model;
  SgdState sgd;
  std::vector<Tensor> best_parameters;
  Real best_val_mee = std::numeric_limits<Real>::infinity();
  Index best_epoch = -1;
  Index next_epoch = 0;
  TrainHistory history;
};

inline Stage1Session make_stage1_session(const AutoencoderConfig& config,
                                         const MeshHierarchy& hierarchy) {
  Stage1Session session;
  session.model = build_model(config, hierarchy);
  session.sgd.momentum = config.momentum;
  session.sgd.weight_decay = config.weight_decay;
  return session;
}

struct Stage1RunOptions {
  Index max_epochs = -1;  // cap on epochs this call; -1 means run to config.epochs
  Index threads = 1;
  bool record_wall_time = true;  // false pins wall_seconds to 0 for bit-stable artifacts
  std::function<void(const Stage1Session&)> after_epoch;
};

inline Real validation_mee(const AutoencoderModel& model,
                           const std::vector<std::vector<Vec3>>& val_shapes) {
  if (val_shapes.empty()) throw EmptyDataset("validation set is empty");
  Real acc = 0;
  for (const auto& shape : val_shapes)
    acc += mean_euclidean_error(decode(model, encode3d(model, shape)), shape);
  return acc / static_cast<Real>(val_shapes.size());
}

// Runs training epochs [next_epoch, ...) on the session. Epoch randomness is
// keyed by (config.seed, epoch), so a resumed session replays exactly the
// epochs an uninterrupted run would have produced.
inline void run_stage1(Stage1Session& session, const std::vector<std::vector<Vec3>>& train_shapes,
                       const std::vector<std::vector<Vec3>>& val_shapes,
                       const Stage1RunOptions& options = {}) {
  AutoencoderModel& model = session.model;
  const AutoencoderConfig& config = model.config;
  if (train_shapes.empty()) throw EmptyDataset("stage-1 training set is empty");
  if (val_shapes.empty()) throw EmptyDataset("stage-1 validation set is empty");
  const std::size_t n = static_cast<std::size_t>(model.finest_count());
  for (const auto& s : train_shapes)
    if (s.size() != n) throw ShapeMismatch("training shape has wrong vertex count");
  for (const auto& s : val_shapes)
    if (s.size() != n) throw ShapeMismatch("validation shape has wrong vertex count");

  if (session.next_epoch == 0) compute_normalization(model, train_shapes);

  Index last = config.epochs;
  if (options.max_epochs >= 0) last = std::min(last, session.next_epoch + options.max_epochs);

  auto params = model.parameters();
  auto diverge = [&](Index epoch) {
    if (session.best_epoch >= 0) {
      auto dst = model.parameters();
      for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = session.best_parameters[i];
    }
    throw DivergedLoss("non-finite loss at epoch " + std::to_string(epoch) +
                       "; parameters rolled back to the best checkpoint");
  };
  for (Index epoch = session.next_epoch; epoch < last; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(mix_seed(config.seed, 0x570a9e, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(train_shapes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    session.sgd.learning_rate = lr_schedule(epoch, config.learning_rate, config.lr_decay);
    Real loss_sum = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      Stage1Batch result = stage1_batch(model, train_shapes, batch, options.threads);
      if (!std::isfinite(result.mean_loss)) diverge(epoch);
      loss_sum += result.mean_loss * static_cast<Real>(batch.size());
      sgd_step(session.sgd, params, result.grads);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<Real>(train_shapes.size());
    record.val_mee = validation_mee(model, val_shapes);
    // A finite training loss does not rule out blown-up parameters: the L1
    // gradient is bounded, so a huge step can leave the next epoch's loss
    // finite while reconstructions are already useless or NaN.
    if (!std::isfinite(record.val_mee)) diverge(epoch);
    record.learning_rate = session.sgd.learning_rate;
    if (options.record_wall_time) {
      record.wall_seconds =
          std::chrono::duration<Real>(std::chrono::steady_clock::now() - start).count();
    }
    session.history.records.push_back(record);
    session.next_epoch = epoch + 1;

    if (record.val_mee < session.best_val_mee) {
      session.best_val_mee = record.val_mee;
      session.best_epoch = epoch;
      session.best_parameters.clear();
      for (const Tensor* p : model.parameters()) session.best_parameters.push_back(*p);
    }
    if (options.after_epoch) options.after_epoch(session);
  }
}

// Restores the best-validation parameters into the session's model.
inline void finalize_stage1(Stage1Session& session) {
  if (session.best_epoch < 0) return;
  auto dst = session.model.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = session.best_parameters[i];
}

struct Stage1Result {
  AutoencoderModel model;
  TrainHistory history;
};

// Full stage-1 run: train on 3D shapes, track validation MEE per epoch, and
// return the best-validation checkpoint.
inline Stage1Result train_stage1(const std::vector<std::vector<Vec3>>& train_shapes,
                                 const std::vector<std::vector<Vec3>>& val_shapes,
                                 const AutoencoderConfig& config, const MeshHierarchy& hierarchy,
                                 const Stage1RunOptions& options = {}) {
  Stage1Session session = make_stage1_session(config, hierarchy);
  run_stage1(session, train_shapes, val_shapes, options);
  finalize_stage1(session);
  return {std::move(session.model), std::move(session.history)};
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> parameter_names(const AutoencoderConfig& config) {
  std::vector<std::string> names;
  for (Index i = 0; i < config.encoder_levels; ++i) {
    names.push_back("enc" + std::to_string(i) + ".weights");
    names.push_back("enc" + std::to_string(i) + ".bias");
  }
  names.push_back("to_latent.weights");
  names.push_back("to_latent.bias");
  names.push_back("from_latent.weights");
  names.push_back("from_latent.bias");
  for (Index j = 0; j < config.encoder_levels - 1; ++j) {
    names.push_back("dec" + std::to_string(j) + ".weights");
    names.push_back("dec" + std::to_string(j) + ".bias");
  }
  names.push_back("final.weights");
  names.push_back("final.bias");
  return names;
}

inline void put_hierarchy(Container& container, const MeshHierarchy& hierarchy) {
  container.meta["hierarchy_depth"] = hierarchy.depth();
  for (std::size_t l = 0; l < hierarchy.levels.size(); ++l) {
    const std::string prefix = "hierarchy.level" + std::to_string(l);
    put_mesh(container, prefix, hierarchy.levels[l]);
    put_sparse(container, prefix + ".laplacian", hierarchy.laplacians[l].laplacian);
    put_scalar(container, prefix + ".lambda_max", hierarchy.laplacians[l].lambda_max);
  }
  for (std::size_t p = 0; p < hierarchy.pairs.size(); ++p) {
    const std::string prefix = "hierarchy.pair" + std::to_string(p);
    put_sparse(container, prefix + ".q_down", hierarchy.pairs[p].q_down);
    put_sparse(container, prefix + ".q_up", hierarchy.pairs[p].q_up);
  }
}

inline MeshHierarchy get_hierarchy(const Container& container) {
  if (!container.meta.contains("hierarchy_depth"))
    throw ParseError("container has no hierarchy metadata");
  const Index depth = container.meta["hierarchy_depth"].get<Index>();
  MeshHierarchy hierarchy;
  for (Index l = 0; l <= depth; ++l) {
    const std::string prefix = "hierarchy.level" + std::to_string(l);
    hierarchy.levels.push_back(get_mesh(container, prefix));
    SparseRealMatrix lap = get_sparse(container, prefix + ".laplacian");
    Real lambda_max = get_scalar(container, prefix + ".lambda_max");
    hierarchy.laplacians.push_back(scale_laplacian(lap, lambda_max));
  }
  for (Index p = 0; p < depth; ++p) {
    const std::string prefix = "hierarchy.pair" + std::to_string(p);
    SamplingPair pair;
    pair.q_down = get_sparse(container, prefix + ".q_down");
    pair.q_up = get_sparse(container, prefix + ".q_up");
    pair.fine_count = pair.q_down.cols;
    pair.coarse_count = pair.q_down.rows;
    pair.coarse_mesh = hierarchy.levels[static_cast<std::size_t>(p) + 1];
    hierarchy.pairs.push_back(std::move(pair));
  }
  return hierarchy;
}

}  // namespace detail

inline void save_autoencoder(const AutoencoderModel& model, const std::string& path) {
  Container container;
  container.meta["kind"] = "autoencoder3d";
  container.meta["config"] = model.config;
  container.meta["input_scale"] = model.input_scale;
  detail::put_hierarchy(container, model.hierarchy);
  put_vec3_field(container, "input_mean", model.input_mean);
  const auto names = detail::parameter_names(model.config);
  const auto params = model.parameters();
  for (std::size_t i = 0; i < names.size(); ++i) container.put("param." + names[i], *params[i]);
  save_container(path, container);
}

inline AutoencoderModel load_autoencoder_from(const Container& container) {
  if (!container.meta.contains("kind") || container.meta["kind"] != "autoencoder3d")
    throw ParseError("container does not hold a 3D autoencoder");
  AutoencoderModel model;
  model.config = container.meta["config"].get<AutoencoderConfig>();
  validate_autoencoder_config(model.config);
  model.hierarchy = detail::get_hierarchy(container);
  if (model.hierarchy.depth() < model.config.encoder_levels)
    throw ParseError("checkpoint hierarchy is too shallow for its config");
  detail::wire_autoencoder(model);
  const auto names = detail::parameter_names(model.config);
  auto params = model.parameters();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Tensor& stored = container.tensor("param." + names[i]);
    if (stored.shape != params[i]->shape)
      throw ParseError("checkpoint tensor 'param." + names[i] + "' has the wrong shape");
    *params[i] = stored;
  }
  model.input_mean = get_vec3_field(container, "input_mean");
  if (static_cast<Index>(model.input_mean.size()) != model.finest_count())
    throw ParseError("checkpoint input_mean has the wrong vertex count");
  model.input_scale = container.meta["input_scale"].get<Real>();
  return model;
}

inline AutoencoderModel load_autoencoder(const std::string& path) {
  return load_autoencoder_from(load_container(path));
}

// Session checkpoints add optimizer and best-model state so an interrupted
// training run resumes bit-exactly.
inline void save_stage1_session(const Stage1Session& session, const std::string& path) {
  Container container;
  container.meta["kind"] = "autoencoder3d";
  container.meta["config"] = session.model.config;
  container.meta["input_scale"] = session.model.input_scale;
  detail::put_hierarchy(container, session.model.hierarchy);
  put_vec3_field(container, "input_mean", session.model.input_mean);
  const auto names = detail::parameter_names(session.model.config);
  const auto params = session.model.parameters();
  for (std::size_t i = 0; i < names.size(); ++i) container.put("param." + names[i], *params[i]);

  container.meta["session"] = true;
  container.meta["next_epoch"] = session.next_epoch;
  container.meta["best_epoch"] = session.best_epoch;
  container.meta["best_val_mee"] = session.best_val_mee;
  container.meta["history"] = history_json(session.history);
  for (std::size_t i = 0; i < session.sgd.velocity.size(); ++i) {
    Tensor v;
    v.shape = {static_cast<Index>(session.sgd.velocity[i].size())};
    v.data = session.sgd.velocity[i];
    container.put("velocity." + names[i], std::move(v));
  }
  for (std::size_t i = 0; i < session.best_parameters.size(); ++i)
    container.put("best." + names[i], session.best_parameters[i]);
  save_container(path, container);
}

inline Stage1Session load_stage1_session(const std::string& path) {
  Container container = load_container(path);
  if (!container.meta.contains("session"))
    throw ParseError(path + ": not a training-session checkpoint");
  Stage1Session session;
  session.model = load_autoencoder_from(container);
  session.sgd.momentum = session.model.config.momentum;
  session.sgd.weight_decay = session.model.config.weight_decay;
  session.next_epoch = container.meta["next_epoch"].get<Index>();
  session.best_epoch = container.meta["best_epoch"].get<Index>();
  session.best_val_mee = container.meta["best_val_mee"].get<Real>();
  session.history = history_from_json(container.meta["history"]);
  const auto names = detail::parameter_names(session.model.config);
  if (container.has("velocity." + names[0])) {
    session.sgd.velocity.resize(names.size());
    for (std::size_t i = 0; i < names.size(); ++i)
      session.sgd.velocity[i] = container.tensor("velocity." + names[i]).data;
  }
  if (session.best_epoch >= 0) {
    for (const auto& name : names)
      session.best_parameters.push_back(container.tensor("best." + name));
  }
  return session;
}

}  // namespace mgcn
