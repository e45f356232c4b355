#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "mgcn/autoencoder.hpp"
#include "mgcn/encoder2d.hpp"
#include "mgcn/primitives.hpp"
#include "test_util.hpp"

namespace mgcn {
namespace {

using testutil::expect_gradients_match;

Encoder2DConfig tiny_config() {
  Encoder2DConfig c;
  c.image_size = 16;
  c.backbone_widths = {4, 6, 8};
  c.tap_blocks = {0, 1};
  c.tap_channels = 2;
  c.global_dim = 10;
  c.latent_size = 5;
  c.epochs = 4;
  c.batch_size = 2;
  c.learning_rate = 0.01;
  c.momentum = 0.9;
  c.weight_decay = 0.0;
  c.dropout = 0.25;
  c.seed = 3;
  return c;
}

AutoencoderConfig frozen_config(Index latent) {
  AutoencoderConfig c;
  c.latent_size = latent;
  c.cheb_order = 2;
  c.sampling_factor = 3;
  c.encoder_levels = 2;
  c.widths = {3, 4};
  c.epochs = 1;
  c.batch_size = 1;
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  c.seed = 11;
  return c;
}

// Untrained 42-vertex mesh autoencoder: good enough to supply latent targets
// and a decoder for validation.
AutoencoderModel make_frozen(Index latent) {
  return build_model(frozen_config(latent), build_hierarchy(icosphere(1, 50.0), 3, 2));
}

GrayImage random_image(Index size, Rng& rng) {
  GrayImage img;
  img.width = size;
  img.height = size;
  img.pixels.resize(static_cast<std::size_t>(size * size));
  for (Real& p : img.pixels) p = rng.uniform(0.0, 1.0);
  return img;
}

std::vector<Vec3> random_shape(const TriangleMesh& base, Rng& rng) {
  std::vector<Vec3> shape = base.vertices;
  for (Vec3& v : shape) {
    v.x += rng.uniform(-3.0, 3.0);
    v.y += rng.uniform(-3.0, 3.0);
    v.z += rng.uniform(-3.0, 3.0);
  }
  return shape;
}

std::vector<Stage2Sample> random_samples(const AutoencoderModel& frozen, Index image_size,
                                         Index count, std::uint64_t seed) {
  const TriangleMesh base = icosphere(1, 50.0);
  Rng rng(seed);
  std::vector<Stage2Sample> out;
  for (Index i = 0; i < count; ++i) {
    Stage2Sample s;
    s.shape = random_shape(base, rng);
    s.image = random_image(image_size, rng);
    s.target_latent = encode3d(frozen, s.shape);
    out.push_back(std::move(s));
  }
  return out;
}

bool params_equal(const Encoder2DModel& a, const Encoder2DModel& b) {
  auto pa = a.parameters();
  auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->shape != pb[i]->shape) return false;
    if (pa[i]->data != pb[i]->data) return false;
  }
  return true;
}

std::string temp_path(const std::string& name) {
  return testing::TempDir() + "/" + name;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Encoder2DConfigTest, ValidationRejectsBadValues) {
  auto expect_bad = [](Encoder2DConfig c) {
    EXPECT_THROW(validate_encoder2d_config(c), ConfigMismatch);
  };
  Encoder2DConfig bad = tiny_config();
  bad.backbone_widths.clear();
  expect_bad(bad);
  bad = tiny_config();
  bad.tap_blocks = {0, 3};  // only 3 blocks exist
  expect_bad(bad);
  bad = tiny_config();
  bad.tap_blocks = {1, 1};
  expect_bad(bad);
  bad = tiny_config();
  bad.tap_channels = 0;
  expect_bad(bad);
  bad = tiny_config();
  bad.dropout = 1.0;
  expect_bad(bad);
  bad = tiny_config();
  bad.momentum = 1.0;
  expect_bad(bad);
  bad = tiny_config();
  bad.learning_rate = 0.0;
  expect_bad(bad);
  bad = tiny_config();
  bad.image_size = 1;
  expect_bad(bad);
}

TEST(Encoder2DConfigTest, JsonRoundTrip) {
  Encoder2DConfig c = tiny_config();
  c.seed = 42;
  nlohmann::json j = c;
  Encoder2DConfig back = j.get<Encoder2DConfig>();
  EXPECT_EQ(back.image_size, c.image_size);
  EXPECT_EQ(back.backbone_widths, c.backbone_widths);
  EXPECT_EQ(back.tap_blocks, c.tap_blocks);
  EXPECT_EQ(back.tap_channels, c.tap_channels);
  EXPECT_EQ(back.global_dim, c.global_dim);
  EXPECT_EQ(back.latent_size, c.latent_size);
  EXPECT_EQ(back.dropout, c.dropout);
  EXPECT_EQ(back.seed, c.seed);
}

TEST(Encoder2DModelTest, BuildShapesLayersCorrectly) {
  Encoder2DModel model = build_encoder2d(tiny_config());
  ASSERT_EQ(model.backbone.size(), 3u);
  EXPECT_EQ(model.backbone[0].in_channels, 1);
  EXPECT_EQ(model.backbone[0].out_channels, 4);
  EXPECT_EQ(model.backbone[2].in_channels, 6);
  EXPECT_EQ(model.backbone[2].out_channels, 8);
  ASSERT_EQ(model.tap_reduce.size(), 2u);
  EXPECT_EQ(model.tap_reduce[0].kernel, 1);
  EXPECT_EQ(model.tap_reduce[0].in_channels, 4);
  EXPECT_EQ(model.tap_reduce[1].in_channels, 6);
  // 16x16 input halves through three blocks: 8, 4, 2.
  ASSERT_EQ(model.tap_dense.size(), 2u);
  EXPECT_EQ(model.tap_dense[0].in_features, 2 * 8 * 8);
  EXPECT_EQ(model.tap_dense[1].in_features, 2 * 4 * 4);
  EXPECT_EQ(model.global_dense.in_features, 8 * 2 * 2);
  EXPECT_EQ(model.fuse.in_features, 3 * 10);  // global + two taps
  EXPECT_EQ(model.fuse.out_features, 5);
  EXPECT_EQ(model.parameters().size(), 18u);
}

TEST(Encoder2DModelTest, EncodeIsDeterministicAndSized) {
  Encoder2DModel model = build_encoder2d(tiny_config());
  Rng rng(31);
  GrayImage image = random_image(16, rng);
  std::vector<Real> a = encode2d(model, image);
  std::vector<Real> b = encode2d(model, image);
  ASSERT_EQ(a.size(), 5u);
  EXPECT_EQ(a, b);
  for (Real v : a) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);  // latent sits behind a ReLU
  }
  GrayImage wrong = random_image(8, rng);
  EXPECT_THROW(encode2d(model, wrong), ShapeMismatch);
}

TEST(Encoder2DModelTest, FusionWidthDoesNotDependOnImageSize) {
  Encoder2DConfig small = tiny_config();
  Encoder2DConfig large = tiny_config();
  large.image_size = 32;
  Encoder2DModel a = build_encoder2d(small);
  Encoder2DModel b = build_encoder2d(large);
  EXPECT_EQ(a.fuse.in_features, b.fuse.in_features);
  EXPECT_EQ(a.fuse.out_features, b.fuse.out_features);
  // The per-branch dense layers absorb the resolution change instead.
  EXPECT_NE(a.tap_dense[0].in_features, b.tap_dense[0].in_features);
  Rng rng(32);
  EXPECT_EQ(encode2d(b, random_image(32, rng)).size(), 5u);
}

TEST(Encoder2DModelTest, GradientsMatchFiniteDifferences) {
  AutoencoderModel frozen = make_frozen(5);
  Encoder2DModel model = build_encoder2d(tiny_config());
  // Freshly built conv layers have zero biases, so pixels whose inputs were
  // all ReLU-clipped produce pre-activations of exactly zero -- kink points
  // where finite differences are undefined. Randomize the biases to probe
  // the gradient at a generic point instead.
  Rng bias_rng(48);
  for (Tensor* p : model.parameters())
    if (p->rank() == 1) testutil::fill_random(*p, bias_rng, -0.2, 0.2);
  std::vector<Stage2Sample> samples = random_samples(frozen, 16, 2, 33);
  const std::vector<std::size_t> indices = {0, 1};

  // Dropout masks are keyed by (seed, epoch, sample), not drawn from shared
  // state, so the objective is a fixed deterministic function of the
  // parameters and finite differences see the same masks on every call.
  auto objective = [&]() { return stage2_batch(model, samples, indices, 0).mean_loss; };
  Stage2Batch batch = stage2_batch(model, samples, indices, 0);
  auto params = model.parameters();
  ASSERT_EQ(batch.grads.size(), params.size());
  for (std::size_t p = 0; p < params.size(); ++p)
    expect_gradients_match(params[p]->data, batch.grads[p].data, objective);
}

TEST(Encoder2DModelTest, TapPathCarriesGradientPastDeadBackbone) {
  Encoder2DConfig cfg = tiny_config();
  cfg.tap_blocks = {0};
  cfg.dropout = 0.0;
  AutoencoderModel frozen = make_frozen(5);
  std::vector<Stage2Sample> samples = random_samples(frozen, 16, 1, 34);

  auto dead_deeper_blocks = [](Encoder2DModel& m) {
    for (std::size_t b = 1; b < m.backbone.size(); ++b) {
      m.backbone[b].weights.fill(0.0);
      m.backbone[b].bias.fill(0.0);
    }
  };
  auto grad_magnitude = [](const Tensor& g) {
    Real acc = 0;
    for (Real v : g.data) acc += std::abs(v);
    return acc;
  };

  // With the deeper blocks zeroed the global branch sees a constant zero
  // map, so any gradient reaching block 0 must have come through the tap.
  Encoder2DModel tapped = build_encoder2d(cfg);
  dead_deeper_blocks(tapped);
  Stage2Batch with_tap = stage2_batch(tapped, samples, {0}, 0);
  EXPECT_GT(grad_magnitude(with_tap.grads[0]), 0.0);

  Encoder2DConfig no_tap_cfg = cfg;
  no_tap_cfg.tap_blocks = {};
  Encoder2DModel untapped = build_encoder2d(no_tap_cfg);
  dead_deeper_blocks(untapped);
  Stage2Batch without_tap = stage2_batch(untapped, samples, {0}, 0);
  EXPECT_EQ(grad_magnitude(without_tap.grads[0]), 0.0);
}

TEST(Encoder2DModelTest, DropoutActiveOnlyDuringTraining) {
  AutoencoderModel frozen = make_frozen(5);
  std::vector<Stage2Sample> samples = random_samples(frozen, 16, 1, 35);

  auto inference_loss = [&](const Encoder2DModel& m) {
    Tensor latent({m.config.latent_size});
    latent.data = encode2d(m, samples[0].image);
    Tensor target({m.config.latent_size});
    target.data = samples[0].target_latent;
    return l1_loss(latent, target).loss;
  };

  Encoder2DConfig plain = tiny_config();
  plain.dropout = 0.0;
  Encoder2DModel no_dropout = build_encoder2d(plain);
  Stage2Batch batch = stage2_batch(no_dropout, samples, {0}, 0);
  EXPECT_EQ(batch.mean_loss, inference_loss(no_dropout));

  Encoder2DModel with_dropout = build_encoder2d(tiny_config());
  Stage2Batch noisy = stage2_batch(with_dropout, samples, {0}, 0);
  EXPECT_NE(noisy.mean_loss, inference_loss(with_dropout));
}

TEST(Stage2Test, LatentTargetsComeFromFrozenEncoder) {
  AutoencoderModel frozen = make_frozen(5);
  const TriangleMesh base = icosphere(1, 50.0);
  Rng rng(36);
  std::vector<DataSample> data(2);
  for (DataSample& d : data) {
    d.shape = random_shape(base, rng);
    d.image = random_image(16, rng);
  }
  std::vector<Stage2Sample> samples = make_stage2_samples(data, frozen);
  ASSERT_EQ(samples.size(), 2u);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(samples[i].target_latent, encode3d(frozen, data[i].shape));
    EXPECT_EQ(samples[i].shape.size(), data[i].shape.size());
    EXPECT_EQ(samples[i].image.pixels, data[i].image.pixels);
  }
}

TEST(Stage2Test, OverfitsOneSample) {
  AutoencoderModel frozen = make_frozen(4);
  Encoder2DConfig cfg;
  cfg.image_size = 16;
  cfg.backbone_widths = {4, 6};
  cfg.tap_blocks = {0};
  cfg.tap_channels = 2;
  cfg.global_dim = 8;
  cfg.latent_size = 4;
  cfg.epochs = 300;
  cfg.batch_size = 1;
  cfg.learning_rate = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  cfg.dropout = 0.0;  // memorizing one pair, so no regularization
  cfg.seed = 5;
  std::vector<Stage2Sample> samples = random_samples(frozen, 16, 1, 37);

  Stage2Result result = train_stage2(samples, samples, cfg, frozen);
  ASSERT_EQ(result.history.records.size(), 300u);
  const Real initial = result.history.records.front().train_loss;
  const Real last = result.history.records.back().train_loss;
  EXPECT_LT(last, 0.1 * initial);
}

TEST(Stage2Test, TrainingIsBitReproducibleAndThreadInvariant) {
  AutoencoderModel frozen = make_frozen(5);
  Encoder2DConfig cfg = tiny_config();
  cfg.epochs = 3;
  std::vector<Stage2Sample> train = random_samples(frozen, 16, 4, 38);
  std::vector<Stage2Sample> val = random_samples(frozen, 16, 2, 39);

  Stage2Result a = train_stage2(train, val, cfg, frozen);
  Stage2Result b = train_stage2(train, val, cfg, frozen);
  Stage2RunOptions threaded;
  threaded.threads = 3;
  Stage2Result c = train_stage2(train, val, cfg, frozen, threaded);

  ASSERT_EQ(a.history.records.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(a.history.records[e].train_loss, b.history.records[e].train_loss);
    EXPECT_EQ(a.history.records[e].val_mee, b.history.records[e].val_mee);
    EXPECT_EQ(a.history.records[e].train_loss, c.history.records[e].train_loss);
    EXPECT_EQ(a.history.records[e].val_mee, c.history.records[e].val_mee);
  }
  EXPECT_TRUE(params_equal(a.model, b.model));
  EXPECT_TRUE(params_equal(a.model, c.model));
}

TEST(Stage2Test, FrozenDecoderBytesUnchangedByTraining) {
  AutoencoderModel frozen = make_frozen(5);
  const std::string before = temp_path("frozen_before.mgcn");
  const std::string after = temp_path("frozen_after.mgcn");
  save_autoencoder(frozen, before);

  Encoder2DConfig cfg = tiny_config();
  cfg.epochs = 2;
  std::vector<Stage2Sample> train = random_samples(frozen, 16, 3, 40);
  train_stage2(train, train, cfg, frozen);

  save_autoencoder(frozen, after);
  EXPECT_EQ(read_bytes(before), read_bytes(after));
}

TEST(Stage2Test, BestCheckpointTracksValidationMinimum) {
  AutoencoderModel frozen = make_frozen(5);
  Encoder2DConfig cfg = tiny_config();
  cfg.epochs = 5;
  std::vector<Stage2Sample> train = random_samples(frozen, 16, 4, 41);
  std::vector<Stage2Sample> val = random_samples(frozen, 16, 2, 42);

  Stage2Session session = make_stage2_session(cfg);
  run_stage2(session, train, val, frozen);
  Real best = session.history.records[0].val_mee;
  Index best_epoch = 0;
  for (const EpochRecord& r : session.history.records) {
    if (r.val_mee < best) {
      best = r.val_mee;
      best_epoch = r.epoch;
    }
  }
  EXPECT_EQ(session.best_val_mee, best);
  EXPECT_EQ(session.best_epoch, best_epoch);

  finalize_stage2(session);
  EXPECT_EQ(validation_mee2d(session.model, frozen, val), best);
}

TEST(Stage2Test, ResumedRunMatchesUninterrupted) {
  AutoencoderModel frozen = make_frozen(5);
  Encoder2DConfig cfg = tiny_config();
  cfg.epochs = 4;
  std::vector<Stage2Sample> train = random_samples(frozen, 16, 4, 43);
  std::vector<Stage2Sample> val = random_samples(frozen, 16, 2, 44);
  Stage2RunOptions no_clock;
  no_clock.record_wall_time = false;

  Stage2Session straight = make_stage2_session(cfg);
  run_stage2(straight, train, val, frozen, no_clock);

  Stage2Session first = make_stage2_session(cfg);
  Stage2RunOptions half = no_clock;
  half.max_epochs = 2;
  run_stage2(first, train, val, frozen, half);
  const std::string path = temp_path("stage2_session.mgcn");
  save_stage2_session(first, path);
  Stage2Session resumed = load_stage2_session(path);
  run_stage2(resumed, train, val, frozen, no_clock);

  ASSERT_EQ(resumed.history.records.size(), straight.history.records.size());
  for (std::size_t e = 0; e < straight.history.records.size(); ++e) {
    EXPECT_EQ(resumed.history.records[e].train_loss, straight.history.records[e].train_loss);
    EXPECT_EQ(resumed.history.records[e].val_mee, straight.history.records[e].val_mee);
  }
  EXPECT_TRUE(params_equal(resumed.model, straight.model));
  EXPECT_EQ(resumed.best_val_mee, straight.best_val_mee);
  EXPECT_EQ(resumed.best_epoch, straight.best_epoch);
}

TEST(Stage2Test, ModelCheckpointRoundTrip) {
  Encoder2DModel model = build_encoder2d(tiny_config());
  const std::string path = temp_path("encoder2d.mgcn");
  save_encoder2d(model, path);
  Encoder2DModel back = load_encoder2d(path);
  EXPECT_TRUE(params_equal(model, back));
  Rng rng(45);
  GrayImage image = random_image(16, rng);
  EXPECT_EQ(encode2d(model, image), encode2d(back, image));

  // A 3D-autoencoder checkpoint is not a 2D-encoder checkpoint.
  AutoencoderModel frozen = make_frozen(5);
  const std::string wrong = temp_path("not_encoder2d.mgcn");
  save_autoencoder(frozen, wrong);
  EXPECT_THROW(load_encoder2d(wrong), ParseError);
  // A bare model checkpoint is not a training session.
  EXPECT_THROW(load_stage2_session(path), ParseError);
}

TEST(Stage2Test, RejectsBadDatasets) {
  AutoencoderModel frozen = make_frozen(5);
  Encoder2DConfig cfg = tiny_config();
  cfg.epochs = 1;
  std::vector<Stage2Sample> good = random_samples(frozen, 16, 2, 46);
  std::vector<Stage2Sample> empty;

  Stage2Session session = make_stage2_session(cfg);
  EXPECT_THROW(run_stage2(session, empty, good, frozen), EmptyDataset);
  EXPECT_THROW(run_stage2(session, good, empty, frozen), EmptyDataset);

  std::vector<Stage2Sample> bad_latent = good;
  bad_latent[0].target_latent.pop_back();
  EXPECT_THROW(run_stage2(session, bad_latent, good, frozen), ShapeMismatch);

  std::vector<Stage2Sample> bad_image = good;
  Rng rng(47);
  bad_image[1].image = random_image(8, rng);
  EXPECT_THROW(run_stage2(session, bad_image, good, frozen), ShapeMismatch);

  std::vector<Stage2Sample> bad_shape = good;
  bad_shape[0].shape.pop_back();
  EXPECT_THROW(run_stage2(session, good, bad_shape, frozen), ShapeMismatch);

  AutoencoderModel narrow = make_frozen(4);
  EXPECT_THROW(run_stage2(session, good, good, narrow), ConfigMismatch);

  Encoder2DModel model = build_encoder2d(cfg);
  EXPECT_THROW(stage2_batch(model, good, {}, 0), EmptyDataset);
  EXPECT_THROW(stage2_batch(model, good, {5}, 0), ShapeMismatch);
}

}  // namespace
}  // namespace mgcn
