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

#include "mgcn/autoencoder.hpp"
#include "mgcn/checkpoint.hpp"
#include "mgcn/conv2d.hpp"
#include "mgcn/core.hpp"
#include "mgcn/layers.hpp"
#include "mgcn/optim.hpp"
#include "mgcn/render.hpp"
#include "mgcn/rng.hpp"
#include "mgcn/synthdata.hpp"
#include "mgcn/tensor.hpp"

namespace mgcn {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

// Image-to-latent encoder: a small trainable convolutional backbone whose
// final feature vector is fused with 1x1-reduced intermediate feature maps
// ("taps"), everything flowing through dropout + dense + ReLU into the same
// latent space the mesh autoencoder uses. The backbone stands in for a large
// pretrained extractor and is trained jointly with the fusion head.
struct Encoder2DConfig {
  Index image_size = 64;                             // square grayscale inputs
  std::vector<Index> backbone_widths = {16, 32, 64, 128};  // stride-2 3x3 blocks
  std::vector<Index> tap_blocks = {0, 1};            // blocks whose outputs are tapped
  Index tap_channels = 8;                            // 1x1 reduction width per tap
  Index global_dim = 128;                            // per-branch dense output width
  Index latent_size = 64;
  Index epochs = 300;
  Index batch_size = 16;
  Real learning_rate = 0.01;
  Real momentum = 0.9;
  Real weight_decay = 0.0;
  Real dropout = 0.25;
  std::uint64_t seed = 0;
};

inline void validate_encoder2d_config(const Encoder2DConfig& c) {
  if (c.image_size < 2) throw ConfigMismatch("image_size must be >= 2");
  if (c.backbone_widths.empty()) throw ConfigMismatch("backbone needs at least one block");
  for (Index w : c.backbone_widths)
    if (w < 1) throw ConfigMismatch("backbone widths must be >= 1");
  Index extent = c.image_size;
  for (std::size_t b = 0; b < c.backbone_widths.size(); ++b) {
    extent = conv2d_output_extent(extent, 3, 2, 1);
    if (extent < 1) throw ConfigMismatch("image collapses before the last backbone block");
  }
  const Index blocks = static_cast<Index>(c.backbone_widths.size());
  for (std::size_t t = 0; t < c.tap_blocks.size(); ++t) {
    if (c.tap_blocks[t] < 0 || c.tap_blocks[t] >= blocks)
      throw ConfigMismatch("tap index out of range");
    if (t > 0 && c.tap_blocks[t] <= c.tap_blocks[t - 1])
      throw ConfigMismatch("tap indices must be strictly increasing");
  }
  if (c.tap_channels < 1) throw ConfigMismatch("tap_channels must be >= 1");
  if (c.global_dim < 1) throw ConfigMismatch("global_dim must be >= 1");
  if (c.latent_size < 1) throw ConfigMismatch("latent_size must be >= 1");
  if (c.epochs < 1) throw ConfigMismatch("epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigMismatch("batch_size must be >= 1");
  if (!(c.learning_rate > 0)) throw ConfigMismatch("learning_rate must be positive");
  if (c.momentum < 0 || c.momentum >= 1.0) throw ConfigMismatch("momentum must be in [0, 1)");
  if (c.weight_decay < 0) throw ConfigMismatch("weight_decay must be >= 0");
  if (c.dropout < 0 || c.dropout >= 1.0) throw ConfigMismatch("dropout must be in [0, 1)");
}

inline void to_json(nlohmann::json& j, const Encoder2DConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"backbone_widths", c.backbone_widths},
                     {"tap_blocks", c.tap_blocks},
                     {"tap_channels", c.tap_channels},
                     {"global_dim", c.global_dim},
                     {"latent_size", c.latent_size},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"dropout", c.dropout},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, Encoder2DConfig& c) {
  j.at("image_size").get_to(c.image_size);
  j.at("backbone_widths").get_to(c.backbone_widths);
  j.at("tap_blocks").get_to(c.tap_blocks);
  j.at("tap_channels").get_to(c.tap_channels);
  j.at("global_dim").get_to(c.global_dim);
  j.at("latent_size").get_to(c.latent_size);
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("momentum").get_to(c.momentum);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("dropout").get_to(c.dropout);
  j.at("seed").get_to(c.seed);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct Encoder2DModel {
  Encoder2DConfig config;
  std::vector<Conv2DLayer> backbone;    // stride-2 3x3 blocks, ReLU after each
  std::vector<Conv2DLayer> tap_reduce;  // 1x1 channel reductions, one per tap
  std::vector<DenseLayer> tap_dense;    // flattened reduced map -> global_dim
  DenseLayer global_dense;              // flattened final map -> global_dim
  DenseLayer fuse;                      // concatenated branches -> latent

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& l : backbone) {
      out.push_back(&l.weights);
      out.push_back(&l.bias);
    }
    for (auto& l : tap_reduce) {
      out.push_back(&l.weights);
      out.push_back(&l.bias);
    }
    for (auto& l : tap_dense) {
      out.push_back(&l.weights);
      out.push_back(&l.bias);
    }
    out.push_back(&global_dense.weights);
    out.push_back(&global_dense.bias);
    out.push_back(&fuse.weights);
    out.push_back(&fuse.bias);
    return out;
  }

  std::vector<const Tensor*> parameters() const {
    auto mutable_params = const_cast<Encoder2DModel*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
  }
};

namespace detail {

// Spatial extent of each block's output, finest first.
inline std::vector<Index> backbone_extents(const Encoder2DConfig& config) {
  std::vector<Index> extents;
  Index extent = config.image_size;
  for (std::size_t b = 0; b < config.backbone_widths.size(); ++b) {
    extent = conv2d_output_extent(extent, 3, 2, 1);
    extents.push_back(extent);
  }
  return extents;
}

inline void wire_encoder2d(Encoder2DModel& model) {
  const Encoder2DConfig& c = model.config;
  const std::vector<Index> extents = backbone_extents(c);

  model.backbone.clear();
  for (std::size_t b = 0; b < c.backbone_widths.size(); ++b) {
    const Index in = (b == 0) ? 1 : c.backbone_widths[b - 1];
    model.backbone.emplace_back(in, c.backbone_widths[b], 3, 2, 1);
  }
  model.tap_reduce.clear();
  model.tap_dense.clear();
  for (Index tb : c.tap_blocks) {
    const Index extent = extents[static_cast<std::size_t>(tb)];
    model.tap_reduce.emplace_back(c.backbone_widths[static_cast<std::size_t>(tb)], c.tap_channels,
                                  1, 1, 0);
    model.tap_dense.emplace_back(c.tap_channels * extent * extent, c.global_dim);
  }
  const Index final_extent = extents.back();
  model.global_dense =
      DenseLayer(c.backbone_widths.back() * final_extent * final_extent, c.global_dim);
  const Index branches = 1 + static_cast<Index>(c.tap_blocks.size());
  model.fuse = DenseLayer(branches * c.global_dim, c.latent_size);
}

}  // namespace detail

inline Encoder2DModel build_encoder2d(const Encoder2DConfig& config) {
  validate_encoder2d_config(config);
  Encoder2DModel model;
  model.config = config;
  detail::wire_encoder2d(model);
  Rng rng(mix_seed(config.seed, 0xe2d));
  for (auto& l : model.backbone) l.init(rng);
  for (auto& l : model.tap_reduce) l.init(rng);
  for (auto& l : model.tap_dense) l.init(rng);
  model.global_dense.init(rng);
  model.fuse.init(rng);
  return model;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor image_to_tensor(const Encoder2DModel& model, const GrayImage& image) {
  if (image.width != model.config.image_size || image.height != model.config.image_size)
    throw ShapeMismatch("encoder expects a " + std::to_string(model.config.image_size) + "x" +
                        std::to_string(model.config.image_size) + " image, got " +
                        std::to_string(image.width) + "x" + std::to_string(image.height));
  Tensor x({1, image.height, image.width});
  x.data = image.pixels;
  return x;
}

// Intermediates of one training-mode forward pass.
struct E2Trace {
  std::vector<Tensor> acts;       // acts[0] = input image, acts[b+1] = block b output
  std::vector<Tensor> block_pre;  // conv output before ReLU
  Tensor global_mask, global_dropped, global_pre;
  std::vector<Tensor> reduce_pre;                      // per tap, before ReLU
  std::vector<Tensor> tap_mask, tap_dropped, tap_pre;  // per tap dense stage
  Tensor concat, fuse_mask, fuse_dropped, fuse_pre;
};

// Shared forward pass. In training mode `rng` drives the dropout masks; in
// inference mode dropout is the identity and `rng` may be null.
inline Tensor encoder2d_forward(const Encoder2DModel& model, const Tensor& image, bool training,
                                Rng* rng, E2Trace* trace) {
  const Encoder2DConfig& c = model.config;
  const Real p = c.dropout;
  Rng unused(0);
  Rng& gen = rng ? *rng : unused;

  std::vector<Tensor> acts;
  acts.push_back(image);
  std::vector<Tensor> block_pre;
  for (const Conv2DLayer& block : model.backbone) {
    Tensor pre = conv2d_forward(block, acts.back());
    acts.push_back(relu_forward(pre));
    block_pre.push_back(std::move(pre));
  }

  // Global branch: dropout -> dense -> ReLU on the flattened final map.
  Tensor global_flat = acts.back().reshaped({static_cast<Index>(acts.back().data.size())});
  Tensor global_mask;
  Tensor global_dropped =
      dropout_forward(global_flat, p, gen, training, trace ? &global_mask : nullptr);
  Tensor global_pre = dense_forward(model.global_dense, global_dropped);
  Tensor global_out = relu_forward(global_pre);

  // Tap branches: 1x1 reduce -> ReLU -> flatten -> dropout -> dense -> ReLU.
  std::vector<Tensor> reduce_pre, tap_mask, tap_dropped, tap_pre;
  std::vector<Tensor> tap_out;
  for (std::size_t t = 0; t < c.tap_blocks.size(); ++t) {
    const Tensor& tapped = acts[static_cast<std::size_t>(c.tap_blocks[t]) + 1];
    Tensor rpre = conv2d_forward(model.tap_reduce[t], tapped);
    Tensor flat = relu_forward(rpre).reshaped({static_cast<Index>(rpre.data.size())});
    Tensor mask;
    Tensor dropped = dropout_forward(flat, p, gen, training, trace ? &mask : nullptr);
    Tensor dpre = dense_forward(model.tap_dense[t], dropped);
    tap_out.push_back(relu_forward(dpre));
    if (trace) {
      reduce_pre.push_back(std::move(rpre));
      tap_mask.push_back(std::move(mask));
      tap_dropped.push_back(std::move(dropped));
      tap_pre.push_back(std::move(dpre));
    }
  }

  // Fusion: concat(global, taps) -> dropout -> dense -> ReLU -> latent.
  const Index branches = 1 + static_cast<Index>(c.tap_blocks.size());
  Tensor concat({branches * c.global_dim});
  std::copy(global_out.data.begin(), global_out.data.end(), concat.data.begin());
  for (std::size_t t = 0; t < tap_out.size(); ++t)
    std::copy(tap_out[t].data.begin(), tap_out[t].data.end(),
              concat.data.begin() + static_cast<std::ptrdiff_t>((t + 1) * static_cast<std::size_t>(c.global_dim)));
  Tensor fuse_mask;
  Tensor fuse_dropped = dropout_forward(concat, p, gen, training, trace ? &fuse_mask : nullptr);
  Tensor fuse_pre = dense_forward(model.fuse, fuse_dropped);
  Tensor latent = relu_forward(fuse_pre);

  if (trace) {
    trace->acts = std::move(acts);
    trace->block_pre = std::move(block_pre);
    trace->global_mask = std::move(global_mask);
    trace->global_dropped = std::move(global_dropped);
    trace->global_pre = std::move(global_pre);
    trace->reduce_pre = std::move(reduce_pre);
    trace->tap_mask = std::move(tap_mask);
    trace->tap_dropped = std::move(tap_dropped);
    trace->tap_pre = std::move(tap_pre);
    trace->concat = std::move(concat);
    trace->fuse_mask = std::move(fuse_mask);
    trace->fuse_dropped = std::move(fuse_dropped);
    trace->fuse_pre = std::move(fuse_pre);
  }
  return latent;
}

// Accumulates parameter gradients (aligned with model.parameters()) given
// d loss / d latent.
inline void encoder2d_backward(const Encoder2DModel& model, const E2Trace& trace,
                               const Tensor& loss_grad, std::vector<Tensor>& grads) {
  const Encoder2DConfig& c = model.config;
  const std::size_t blocks = model.backbone.size();
  const std::size_t taps = model.tap_reduce.size();
  const std::size_t slot_reduce = blocks * 2;
  const std::size_t slot_tap_dense = slot_reduce + taps * 2;
  const std::size_t slot_global = slot_tap_dense + taps * 2;
  const std::size_t slot_fuse = slot_global + 2;

  auto add_into = [](Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
  };

  // Fusion head.
  Tensor u = relu_backward(trace.fuse_pre, loss_grad);
  DenseGrads fg = dense_backward(model.fuse, trace.fuse_dropped, u);
  add_into(grads[slot_fuse], fg.weights);
  add_into(grads[slot_fuse + 1], fg.bias);
  Tensor dconcat = dropout_backward(trace.fuse_mask, fg.x);

  // Per-block gradient w.r.t. block outputs, accumulated from all consumers.
  std::vector<Tensor> dact(blocks);

  // Global branch.
  {
    Tensor part({c.global_dim});
    std::copy(dconcat.data.begin(), dconcat.data.begin() + static_cast<std::ptrdiff_t>(c.global_dim),
              part.data.begin());
    Tensor ug = relu_backward(trace.global_pre, part);
    DenseGrads gg = dense_backward(model.global_dense, trace.global_dropped, ug);
    add_into(grads[slot_global], gg.weights);
    add_into(grads[slot_global + 1], gg.bias);
    Tensor dflat = dropout_backward(trace.global_mask, gg.x);
    dact[blocks - 1] = dflat.reshaped(trace.acts.back().shape);
  }

  // Tap branches.
  for (std::size_t t = 0; t < taps; ++t) {
    Tensor part({c.global_dim});
    const std::ptrdiff_t begin = static_cast<std::ptrdiff_t>((t + 1) * static_cast<std::size_t>(c.global_dim));
    std::copy(dconcat.data.begin() + begin,
              dconcat.data.begin() + begin + static_cast<std::ptrdiff_t>(c.global_dim),
              part.data.begin());
    Tensor ut = relu_backward(trace.tap_pre[t], part);
    DenseGrads tg = dense_backward(model.tap_dense[t], trace.tap_dropped[t], ut);
    add_into(grads[slot_tap_dense + t * 2], tg.weights);
    add_into(grads[slot_tap_dense + t * 2 + 1], tg.bias);
    Tensor dflat = dropout_backward(trace.tap_mask[t], tg.x);
    Tensor drelu = relu_backward(trace.reduce_pre[t], dflat.reshaped(trace.reduce_pre[t].shape));
    const std::size_t tb = static_cast<std::size_t>(c.tap_blocks[t]);
    Conv2DGrads rg = conv2d_backward(model.tap_reduce[t], trace.acts[tb + 1], drelu);
    add_into(grads[slot_reduce + t * 2], rg.weights);
    add_into(grads[slot_reduce + t * 2 + 1], rg.bias);
    if (dact[tb].data.empty())
      dact[tb] = std::move(rg.x);
    else
      add_into(dact[tb], rg.x);
  }

  // Backbone, walking from the deepest block to the image.
  Tensor d = std::move(dact[blocks - 1]);
  for (std::size_t b = blocks; b-- > 0;) {
    Tensor upre = relu_backward(trace.block_pre[b], d);
    Conv2DGrads bg = conv2d_backward(model.backbone[b], trace.acts[b], upre);
    add_into(grads[b * 2], bg.weights);
    add_into(grads[b * 2 + 1], bg.bias);
    d = std::move(bg.x);
    if (b > 0 && !dact[b - 1].data.empty()) add_into(d, dact[b - 1]);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Inference API
// ---------------------------------------------------------------------------

inline std::vector<Real> encode2d(const Encoder2DModel& model, const GrayImage& image) {
  Tensor x = detail::image_to_tensor(model, image);
  return detail::encoder2d_forward(model, x, false, nullptr, nullptr).data;
}

// decode(frozen_decoder, encode2d(image)): the full 2D-to-3D path.
inline std::vector<Vec3> reconstruct_from_image(const Encoder2DModel& encoder,
                                                const AutoencoderModel& frozen_decoder,
                                                const GrayImage& image) {
  if (encoder.config.latent_size != frozen_decoder.config.latent_size)
    throw ConfigMismatch("encoder and decoder latent sizes differ");
  return decode(frozen_decoder, encode2d(encoder, image));
}

// ---------------------------------------------------------------------------
// Stage-2 training
// ---------------------------------------------------------------------------

// One supervised pair for stage 2: a rendered image, the latent the frozen 3D
// encoder assigns to its shape, and the shape itself (used for validation
// reconstruction error only).
struct Stage2Sample {
  GrayImage image;
  std::vector<Real> target_latent;
  std::vector<Vec3> shape;
};

inline std::vector<Stage2Sample> make_stage2_samples(const std::vector<DataSample>& data,
                                                     const AutoencoderModel& frozen) {
  std::vector<Stage2Sample> samples;
  samples.reserve(data.size());
  for (const DataSample& d : data)
    samples.push_back({d.image, encode3d(frozen, d.shape), d.shape});
  return samples;
}

inline std::vector<Tensor> zero_gradients(const Encoder2DModel& model) {
  std::vector<Tensor> grads;
  for (const Tensor* p : model.parameters()) grads.emplace_back(p->shape);
  return grads;
}

struct Stage2Batch {
  Real mean_loss = 0;
  std::vector<Tensor> grads;
};

// Latent L1 forward/backward over a batch. Dropout masks are keyed by
// (seed, epoch, sample index), so results are bit-identical for any thread
// count and any batch composition.
inline Stage2Batch stage2_batch(const Encoder2DModel& model,
                                const std::vector<Stage2Sample>& samples,
                                const std::vector<std::size_t>& indices, Index epoch,
                                Index threads = 1) {
  if (indices.empty()) throw EmptyDataset("stage2_batch needs at least one sample");
  for (std::size_t idx : indices) {
    if (idx >= samples.size()) throw ShapeMismatch("batch index out of range");
    if (static_cast<Index>(samples[idx].target_latent.size()) != model.config.latent_size)
      throw ShapeMismatch("target latent has the wrong size");
    if (samples[idx].image.width != model.config.image_size ||
        samples[idx].image.height != model.config.image_size)
      throw ShapeMismatch("image size does not match the encoder config");
  }
  const std::size_t count = indices.size();
  std::vector<std::vector<Tensor>> sample_grads(count);
  std::vector<Real> sample_loss(count, 0.0);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      const Stage2Sample& sample = samples[indices[s]];
      Tensor x = detail::image_to_tensor(model, sample.image);
      Rng rng(mix_seed(mix_seed(model.config.seed, 0x2d0b, static_cast<std::uint64_t>(epoch)),
                       static_cast<std::uint64_t>(indices[s])));
      detail::E2Trace trace;
      Tensor latent = detail::encoder2d_forward(model, x, true, &rng, &trace);
      Tensor target({model.config.latent_size});
      target.data = sample.target_latent;
      L1Result l1 = l1_loss(latent, target);
      sample_loss[s] = l1.loss;
      sample_grads[s] = zero_gradients(model);
      detail::encoder2d_backward(model, trace, l1.grad, sample_grads[s]);
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

  Stage2Batch out;
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

struct Stage2Session {
  Encoder2DModel model;
  SgdState sgd;
  std::vector<Tensor> best_parameters;
  Real best_val_mee = std::numeric_limits<Real>::infinity();
  Index best_epoch = -1;
  Index next_epoch = 0;
  TrainHistory history;
};

inline Stage2Session make_stage2_session(const Encoder2DConfig& config) {
  Stage2Session session;
  session.model = build_encoder2d(config);
  session.sgd.momentum = config.momentum;
  session.sgd.weight_decay = config.weight_decay;
  return session;
}

struct Stage2RunOptions {
  Index max_epochs = -1;
  Index threads = 1;
  bool record_wall_time = true;
  std::function<void(const Stage2Session&)> after_epoch;
};

// Mean reconstruction error (millimetres) of the 2D-to-3D path over
// validation pairs, using the frozen stage-1 decoder.
inline Real validation_mee2d(const Encoder2DModel& model, const AutoencoderModel& frozen,
                             const std::vector<Stage2Sample>& val_samples) {
  if (val_samples.empty()) throw EmptyDataset("validation set is empty");
  Real acc = 0;
  for (const Stage2Sample& s : val_samples)
    acc += mean_euclidean_error(decode(frozen, encode2d(model, s.image)), s.shape);
  return acc / static_cast<Real>(val_samples.size());
}

// Trains the 2D encoder against precomputed target latents. The decoder is
// only read (validation reconstructions); its parameters never change here.
inline void run_stage2(Stage2Session& session, const std::vector<Stage2Sample>& train_samples,
                       const std::vector<Stage2Sample>& val_samples,
                       const AutoencoderModel& frozen, const Stage2RunOptions& options = {}) {
  Encoder2DModel& model = session.model;
  const Encoder2DConfig& config = model.config;
  if (train_samples.empty()) throw EmptyDataset("stage-2 training set is empty");
  if (val_samples.empty()) throw EmptyDataset("stage-2 validation set is empty");
  if (config.latent_size != frozen.config.latent_size)
    throw ConfigMismatch("encoder and decoder latent sizes differ");
  auto check = [&](const std::vector<Stage2Sample>& samples, const char* which) {
    for (const Stage2Sample& s : samples) {
      if (s.image.width != config.image_size || s.image.height != config.image_size)
        throw ShapeMismatch(std::string(which) + " image size does not match the encoder config");
      if (static_cast<Index>(s.target_latent.size()) != config.latent_size)
        throw ShapeMismatch(std::string(which) + " target latent has the wrong size");
    }
  };
  check(train_samples, "training");
  check(val_samples, "validation");
  for (const Stage2Sample& s : val_samples)
    if (static_cast<Index>(s.shape.size()) != frozen.finest_count())
      throw ShapeMismatch("validation shape has wrong vertex count");

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
    Rng rng(mix_seed(config.seed, 0x2d5f, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(train_samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    session.sgd.learning_rate = config.learning_rate;  // constant schedule
    Real loss_sum = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      Stage2Batch result = stage2_batch(model, train_samples, batch, epoch, options.threads);
      if (!std::isfinite(result.mean_loss)) diverge(epoch);
      loss_sum += result.mean_loss * static_cast<Real>(batch.size());
      sgd_step(session.sgd, params, result.grads);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<Real>(train_samples.size());
    record.val_mee = validation_mee2d(model, frozen, val_samples);
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

inline void finalize_stage2(Stage2Session& session) {
  if (session.best_epoch < 0) return;
  auto dst = session.model.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = session.best_parameters[i];
}

struct Stage2Result {
  Encoder2DModel model;
  TrainHistory history;
};

inline Stage2Result train_stage2(const std::vector<Stage2Sample>& train_samples,
                                 const std::vector<Stage2Sample>& val_samples,
                                 const Encoder2DConfig& config, const AutoencoderModel& frozen,
                                 const Stage2RunOptions& options = {}) {
  Stage2Session session = make_stage2_session(config);
  run_stage2(session, train_samples, val_samples, frozen, options);
  finalize_stage2(session);
  return {std::move(session.model), std::move(session.history)};
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> parameter_names(const Encoder2DConfig& config) {
  std::vector<std::string> names;
  for (std::size_t b = 0; b < config.backbone_widths.size(); ++b) {
    names.push_back("backbone" + std::to_string(b) + ".weights");
    names.push_back("backbone" + std::to_string(b) + ".bias");
  }
  for (std::size_t t = 0; t < config.tap_blocks.size(); ++t) {
    names.push_back("tap_reduce" + std::to_string(t) + ".weights");
    names.push_back("tap_reduce" + std::to_string(t) + ".bias");
  }
  for (std::size_t t = 0; t < config.tap_blocks.size(); ++t) {
    names.push_back("tap_dense" + std::to_string(t) + ".weights");
    names.push_back("tap_dense" + std::to_string(t) + ".bias");
  }
  names.push_back("global.weights");
  names.push_back("global.bias");
  names.push_back("fuse.weights");
  names.push_back("fuse.bias");
  return names;
}

inline void put_encoder2d(Container& container, const Encoder2DModel& model) {
  container.meta["kind"] = "encoder2d";
  container.meta["config"] = model.config;
  const auto names = parameter_names(model.config);
  const auto params = model.parameters();
  for (std::size_t i = 0; i < names.size(); ++i) container.put("param." + names[i], *params[i]);
}

}  // namespace detail

inline void save_encoder2d(const Encoder2DModel& model, const std::string& path) {
  Container container;
  detail::put_encoder2d(container, model);
  save_container(path, container);
}

inline Encoder2DModel load_encoder2d_from(const Container& container) {
  if (!container.meta.contains("kind") || container.meta["kind"] != "encoder2d")
    throw ParseError("container does not hold a 2D encoder");
  Encoder2DModel model;
  model.config = container.meta["config"].get<Encoder2DConfig>();
  validate_encoder2d_config(model.config);
  detail::wire_encoder2d(model);
  const auto names = detail::parameter_names(model.config);
  auto params = model.parameters();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Tensor& stored = container.tensor("param." + names[i]);
    if (stored.shape != params[i]->shape)
      throw ParseError("checkpoint tensor 'param." + names[i] + "' has the wrong shape");
    *params[i] = stored;
  }
  return model;
}

inline Encoder2DModel load_encoder2d(const std::string& path) {
  return load_encoder2d_from(load_container(path));
}

inline void save_stage2_session(const Stage2Session& session, const std::string& path) {
  Container container;
  detail::put_encoder2d(container, session.model);
  container.meta["session"] = true;
  container.meta["next_epoch"] = session.next_epoch;
  container.meta["best_epoch"] = session.best_epoch;
  container.meta["best_val_mee"] = session.best_val_mee;
  container.meta["history"] = history_json(session.history);
  const auto names = detail::parameter_names(session.model.config);
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

inline Stage2Session load_stage2_session(const std::string& path) {
  Container container = load_container(path);
  if (!container.meta.contains("session"))
    throw ParseError(path + ": not a training-session checkpoint");
  Stage2Session session;
  session.model = load_encoder2d_from(container);
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
