// mgcn: command-line driver for the mesh autoencoder pipeline.
//
//   generate     synthesize a paired 3D-shape / 2D-render dataset
//   train-ae     stage 1: train the 3D mesh autoencoder
//   train-2d     stage 2: train the image encoder against frozen stage-1 latents
//   reconstruct  run one image through encoder + decoder and write the mesh
//   evaluate     landmark-align two meshes and report surface distances
//   ablate       sweep one hyperparameter and tabulate validation error
//
// Exit codes: 0 ok, 1 unexpected failure, 2 bad config or input data,
// 3 file IO failure, 4 missing upstream artifact or shape mismatch,
// 5 training diverged.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mgcn/autoencoder.hpp"
#include "mgcn/config.hpp"
#include "mgcn/dataset_io.hpp"
#include "mgcn/decimate.hpp"
#include "mgcn/encoder2d.hpp"
#include "mgcn/eval.hpp"
#include "mgcn/mesh.hpp"
#include "mgcn/primitives.hpp"
#include "mgcn/render.hpp"
#include "mgcn/shapemodel.hpp"
#include "mgcn/synthdata.hpp"

namespace mgcn {
namespace {

// A required upstream output (dataset, checkpoint) that has not been
// produced yet; distinct from IoError so it maps to its own exit code.
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

struct CommonOptions {
  std::string config_path;
  std::string output_dir;  // overrides the config's output_dir when set
  Index threads = 0;       // 0: fall back to MGCN_THREADS, then 1
  bool deterministic = false;
  Index epoch_limit = -1;
};

Index resolve_threads(const CommonOptions& options) {
  if (options.threads > 0) return options.threads;
  if (const char* env = std::getenv("MGCN_THREADS")) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw ConfigError(std::string("MGCN_THREADS must be a positive integer, got \"") + env +
                        "\"");
    return static_cast<Index>(v);
  }
  return 1;
}

RunConfig load_config(const CommonOptions& options) {
  if (options.config_path.empty()) throw ConfigError("this command needs --config");
  RunConfig config = load_run_config(options.config_path);
  if (!options.output_dir.empty()) config.output_dir = options.output_dir;
  return config;
}

void require_artifact(const std::string& path, const std::string& hint) {
  if (!std::filesystem::exists(path)) throw MissingArtifact(path + " is missing; " + hint);
}

void emit(const nlohmann::json& summary) { std::cout << summary.dump(2) << "\n"; }

// The base mesh is either a file path (relative paths resolve against the
// config file) or the builtin "icosphere:<subdivisions>:<radius>", which also
// assigns six axis-extreme landmarks so downstream evaluation has names to
// align on.
TriangleMesh resolve_base_mesh(const RunConfig& config, const std::string& config_path) {
  const std::string& source = config.hierarchy.base_mesh;
  if (source.empty())
    throw ConfigError("hierarchy.base_mesh must name a mesh file or icosphere:<level>:<radius>");

  if (source.rfind("icosphere:", 0) == 0) {
    long long level = -1;
    double radius = 0;
    if (std::sscanf(source.c_str(), "icosphere:%lld:%lf", &level, &radius) != 2 || level < 0 ||
        level > 6 || !(radius > 0))
      throw ConfigError("bad base mesh \"" + source +
                        "\"; expected icosphere:<0..6>:<radius_mm>");
    TriangleMesh mesh = icosphere(static_cast<int>(level), radius);
    const Vec3 axes[6] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    const char* names[6] = {"plus_x", "minus_x", "plus_y", "minus_y", "plus_z", "minus_z"};
    for (int a = 0; a < 6; ++a) {
      Index best = 0;
      for (Index v = 1; v < mesh.vertex_count(); ++v)
        if (dot(mesh.vertices[static_cast<std::size_t>(v)], axes[a]) >
            dot(mesh.vertices[static_cast<std::size_t>(best)], axes[a]))
          best = v;
      mesh.landmarks.push_back({names[a], best});
    }
    return mesh;
  }

  std::filesystem::path path = source;
  if (path.is_relative())
    path = std::filesystem::path(config_path).parent_path() / path;
  return load_mesh(path.string());
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

void cmd_generate(const CommonOptions& options) {
  const RunConfig config = load_config(options);
  const TriangleMesh base = resolve_base_mesh(config, options.config_path);

  const LinearShapeModel model = build_toy_shape_model(
      base, config.data.num_modes, config.data.model_seed, config.data.sigma0, config.data.decay);
  const auto train =
      generate_dataset(model, config.data.train_count, config.render, config.data.train_seed);
  const auto val =
      generate_dataset(model, config.data.val_count, config.render, config.data.val_seed);

  const std::string data_dir = config.output_dir + "/data";
  write_dataset(train, base, config.render, config.data.train_seed, data_dir + "/train");
  write_dataset(val, base, config.render, config.data.val_seed, data_dir + "/val");
  save_shape_model(model, data_dir + "/shape_model.mgcn");

  emit({{"command", "generate"},
        {"train_count", train.size()},
        {"val_count", val.size()},
        {"vertices", base.vertex_count()},
        {"data_dir", data_dir}});
}

// ---------------------------------------------------------------------------
// train-ae / train-2d
// ---------------------------------------------------------------------------

struct LoadedData {
  DiskDataset train;
  DiskDataset val;
};

LoadedData load_datasets(const RunConfig& config) {
  const std::string data_dir = config.output_dir + "/data";
  require_artifact(data_dir + "/train/manifest.json", "run `mgcn generate` first");
  require_artifact(data_dir + "/val/manifest.json", "run `mgcn generate` first");
  LoadedData data{load_dataset(data_dir + "/train"), load_dataset(data_dir + "/val")};
  if (data.val.base.vertex_count() != data.train.base.vertex_count())
    throw ShapeMismatch("train and val datasets disagree on the base mesh");
  return data;
}

void write_history(const RunConfig& config, const std::string& name,
                   const TrainHistory& history) {
  const std::string dir = config.output_dir + "/history";
  detail::ensure_directory(dir);
  detail::atomic_write(dir + "/" + name, history_json(history).dump(2) + "\n");
}

void cmd_train_ae(const CommonOptions& options) {
  const RunConfig config = load_config(options);
  const LoadedData data = load_datasets(config);

  const MeshHierarchy hierarchy =
      build_hierarchy(data.train.base, config.autoencoder.sampling_factor,
                      config.hierarchy.depth, config.hierarchy.seed);

  const std::string ck_dir = config.output_dir + "/checkpoints";
  detail::ensure_directory(ck_dir);
  const std::string session_path = ck_dir + "/stage1_session.mgcn";

  Stage1Session session;
  if (std::filesystem::exists(session_path)) {
    session = load_stage1_session(session_path);
    if (nlohmann::json(session.model.config) != nlohmann::json(config.autoencoder))
      throw ConfigMismatch("existing stage-1 session was trained with a different config; "
                           "remove " + session_path + " to restart");
  } else {
    session = make_stage1_session(config.autoencoder, hierarchy);
  }

  Stage1RunOptions run_options;
  run_options.threads = resolve_threads(options);
  run_options.record_wall_time = !options.deterministic;
  run_options.max_epochs = options.epoch_limit;
  run_options.after_epoch = [&](const Stage1Session& s) { save_stage1_session(s, session_path); };

  run_stage1(session, dataset_shapes(data.train), dataset_shapes(data.val), run_options);
  finalize_stage1(session);

  const std::string model_path = ck_dir + "/autoencoder.mgcn";
  save_autoencoder(session.model, model_path);
  write_history(config, "stage1_history.json", session.history);

  emit({{"command", "train-ae"},
        {"epochs_run", session.history.records.size()},
        {"best_epoch", session.best_epoch},
        {"best_val_mee", session.best_val_mee},
        {"checkpoint", model_path}});
}

void cmd_train_2d(const CommonOptions& options) {
  const RunConfig config = load_config(options);
  const std::string ck_dir = config.output_dir + "/checkpoints";
  require_artifact(ck_dir + "/autoencoder.mgcn",
                   "stage 2 needs the stage-1 checkpoint; run `mgcn train-ae` first");

  const LoadedData data = load_datasets(config);
  const AutoencoderModel frozen = load_autoencoder(ck_dir + "/autoencoder.mgcn");
  const std::vector<Stage2Sample> train_samples = make_stage2_samples(data.train.samples, frozen);
  const std::vector<Stage2Sample> val_samples = make_stage2_samples(data.val.samples, frozen);

  const std::string session_path = ck_dir + "/stage2_session.mgcn";
  Stage2Session session;
  if (std::filesystem::exists(session_path)) {
    session = load_stage2_session(session_path);
    if (nlohmann::json(session.model.config) != nlohmann::json(config.encoder2d))
      throw ConfigMismatch("existing stage-2 session was trained with a different config; "
                           "remove " + session_path + " to restart");
  } else {
    session = make_stage2_session(config.encoder2d);
  }

  Stage2RunOptions run_options;
  run_options.threads = resolve_threads(options);
  run_options.record_wall_time = !options.deterministic;
  run_options.max_epochs = options.epoch_limit;
  run_options.after_epoch = [&](const Stage2Session& s) { save_stage2_session(s, session_path); };

  run_stage2(session, train_samples, val_samples, frozen, run_options);
  finalize_stage2(session);

  const std::string model_path = ck_dir + "/encoder2d.mgcn";
  save_encoder2d(session.model, model_path);
  write_history(config, "stage2_history.json", session.history);

  emit({{"command", "train-2d"},
        {"epochs_run", session.history.records.size()},
        {"best_epoch", session.best_epoch},
        {"best_val_mee", session.best_val_mee},
        {"checkpoint", model_path}});
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

struct ReconstructOptions {
  std::string encoder_path;
  std::string decoder_path;
  std::string image_path;
  std::string out_path;
};

void cmd_reconstruct(const CommonOptions& options, ReconstructOptions paths) {
  if (paths.encoder_path.empty() || paths.decoder_path.empty()) {
    const RunConfig config = load_config(options);
    const std::string ck_dir = config.output_dir + "/checkpoints";
    if (paths.encoder_path.empty()) paths.encoder_path = ck_dir + "/encoder2d.mgcn";
    if (paths.decoder_path.empty()) paths.decoder_path = ck_dir + "/autoencoder.mgcn";
  }
  require_artifact(paths.encoder_path, "run `mgcn train-2d` first or pass --encoder");
  require_artifact(paths.decoder_path, "run `mgcn train-ae` first or pass --decoder");

  const Encoder2DModel encoder = load_encoder2d(paths.encoder_path);
  const AutoencoderModel decoder = load_autoencoder(paths.decoder_path);
  const GrayImage image = load_pgm(paths.image_path);
  if (image.width != encoder.config.image_size || image.height != encoder.config.image_size)
    throw ConfigError("image is " + std::to_string(image.width) + "x" +
                      std::to_string(image.height) + " but the encoder expects " +
                      std::to_string(encoder.config.image_size) + "x" +
                      std::to_string(encoder.config.image_size));

  const auto start = std::chrono::steady_clock::now();
  const std::vector<Real> latent = encode2d(encoder, image);
  const std::vector<Vec3> vertices = decode(decoder, latent);
  const Real seconds =
      options.deterministic
          ? 0.0
          : std::chrono::duration<Real>(std::chrono::steady_clock::now() - start).count();

  TriangleMesh mesh = decoder.hierarchy.levels.front();
  mesh.vertices = vertices;
  save_mesh(mesh, paths.out_path);

  emit({{"command", "reconstruct"},
        {"latent", latent},
        {"vertex_count", mesh.vertex_count()},
        {"seconds", seconds},
        {"output", paths.out_path}});
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOptions {
  std::string recon_path;
  std::string scan_path;
  std::string recon_landmarks;
  std::string scan_landmarks;
  std::string report_path;
  std::string error_map_path;
  std::optional<Real> margin;
  std::optional<Real> cap;
  bool with_scale = false;
};

std::vector<Vec3> landmark_points(const TriangleMesh& mesh, const std::vector<Landmark>& marks,
                                  const std::vector<std::string>& names, const std::string& who) {
  std::vector<Vec3> points;
  for (const std::string& name : names) {
    for (const Landmark& lm : marks) {
      if (lm.name != name) continue;
      if (lm.vertex_index < 0 || lm.vertex_index >= mesh.vertex_count())
        throw ParseError("landmark \"" + name + "\" indexes past the " + who + " mesh");
      points.push_back(mesh.vertices[static_cast<std::size_t>(lm.vertex_index)]);
      break;
    }
  }
  return points;
}

void cmd_evaluate(const CommonOptions& options, const EvaluateOptions& eval_options) {
  EvalConfig defaults;
  if (!options.config_path.empty()) defaults = load_config(options).eval;
  const Real margin = eval_options.margin.value_or(defaults.mask_margin);
  const Real cap = eval_options.cap.value_or(defaults.error_map_cap);
  const bool with_scale = eval_options.with_scale || defaults.with_scale;

  const TriangleMesh recon = load_mesh(eval_options.recon_path);
  const TriangleMesh scan = load_mesh(eval_options.scan_path);
  const std::vector<Landmark> recon_marks = load_landmarks(eval_options.recon_landmarks);
  const std::vector<Landmark> scan_marks = load_landmarks(eval_options.scan_landmarks);

  std::vector<std::string> shared_names;
  for (const Landmark& lm : recon_marks)
    for (const Landmark& other : scan_marks)
      if (lm.name == other.name) {
        shared_names.push_back(lm.name);
        break;
      }
  if (shared_names.size() < 3)
    throw DegenerateLandmarks("need at least 3 shared landmark names, found " +
                              std::to_string(shared_names.size()));

  const std::vector<Vec3> recon_points = landmark_points(recon, recon_marks, shared_names, "reconstruction");
  const std::vector<Vec3> scan_points = landmark_points(scan, scan_marks, shared_names, "scan");

  const RigidTransform transform = procrustes_align(recon_points, scan_points, with_scale);
  const TriangleMesh aligned = apply_transform(transform, recon);
  const RegionMask mask = region_mask_from_landmarks(aligned, scan_points, margin);

  EvaluationReport report = bidirectional_error(aligned, scan, mask);
  report.alignment = transform;
  report.reconstruction_id = std::filesystem::path(eval_options.recon_path).stem().string();
  report.scan_id = std::filesystem::path(eval_options.scan_path).stem().string();

  detail::atomic_write(eval_options.report_path, report_json(report).dump(2) + "\n");
  std::string map_path = eval_options.error_map_path;
  if (map_path.empty())
    map_path =
        (std::filesystem::path(eval_options.report_path).parent_path() / "error_map.ply").string();
  export_error_map(aligned, report.recon_to_scan, map_path, cap);

  emit({{"command", "evaluate"},
        {"combined", report.combined},
        {"masked_mean", report.masked_mean},
        {"masked_count", mask.count()},
        {"landmarks_used", shared_names.size()},
        {"report", eval_options.report_path},
        {"error_map", map_path}});
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct SweepRequest {
  std::string parameter;                  // "latent_size", "cheb_order", "taps"
  std::vector<Index> values;              // latent/cheb sweeps
  std::vector<std::vector<Index>> groups; // tap sweep
  std::vector<std::string> labels;        // CSV value column
};

SweepRequest parse_sweep(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos)
    throw ConfigError("--sweep must look like latent_sizes=4,16 | cheb_orders=2,6 | "
                      "tap_sets=none;0+1");
  const std::string kind = text.substr(0, eq);
  const std::string rest = text.substr(eq + 1);
  if (rest.empty()) throw ConfigError("--sweep lists no values");

  auto split = [](const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
      const auto end = s.find(sep, start);
      if (end == std::string::npos) {
        out.push_back(s.substr(start));
        break;
      }
      out.push_back(s.substr(start, end - start));
      start = end + 1;
    }
    return out;
  };
  auto to_index = [](const std::string& s) {
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (s.empty() || end != s.c_str() + s.size())
      throw ConfigError("bad sweep value \"" + s + "\"");
    return static_cast<Index>(v);
  };

  SweepRequest request;
  if (kind == "latent_sizes" || kind == "cheb_orders") {
    request.parameter = (kind == "latent_sizes") ? "latent_size" : "cheb_order";
    for (const std::string& item : split(rest, ',')) {
      request.values.push_back(to_index(item));
      request.labels.push_back(item);
    }
  } else if (kind == "tap_sets") {
    request.parameter = "taps";
    for (const std::string& group : split(rest, ';')) {
      std::vector<Index> taps;
      if (group != "none")
        for (const std::string& item : split(group, '+')) taps.push_back(to_index(item));
      request.groups.push_back(taps);
      request.labels.push_back(group);
    }
  } else {
    throw ConfigError("unknown sweep \"" + kind +
                      "\"; expected latent_sizes, cheb_orders, or tap_sets");
  }
  return request;
}

struct SweepRow {
  std::string label;
  Real mean = 0;
  Real stddev = 0;
  std::size_t count = 0;
};

SweepRow summarize(const std::string& label, const std::vector<Real>& mees) {
  SweepRow row;
  row.label = label;
  row.count = mees.size();
  for (Real v : mees) row.mean += v;
  row.mean /= static_cast<Real>(mees.size());
  if (mees.size() > 1) {
    Real acc = 0;
    for (Real v : mees) acc += (v - row.mean) * (v - row.mean);
    row.stddev = std::sqrt(acc / static_cast<Real>(mees.size() - 1));
  }
  return row;
}

void cmd_ablate(const CommonOptions& options, const std::string& sweep_text,
                std::string csv_path) {
  const RunConfig config = load_config(options);
  const SweepRequest request = parse_sweep(sweep_text);
  const LoadedData data = load_datasets(config);
  if (csv_path.empty()) csv_path = config.output_dir + "/ablation.csv";

  const Index threads = resolve_threads(options);
  std::vector<SweepRow> rows;

  if (request.parameter == "taps") {
    const std::string frozen_path = config.output_dir + "/checkpoints/autoencoder.mgcn";
    require_artifact(frozen_path, "tap ablation needs a stage-1 checkpoint");
    const AutoencoderModel frozen = load_autoencoder(frozen_path);
    const auto train_samples = make_stage2_samples(data.train.samples, frozen);
    const auto val_samples = make_stage2_samples(data.val.samples, frozen);

    for (std::size_t g = 0; g < request.groups.size(); ++g) {
      Encoder2DConfig swept = config.encoder2d;
      swept.tap_blocks = request.groups[g];
      validate_encoder2d_config(swept);
      Stage2RunOptions run_options;
      run_options.threads = threads;
      run_options.record_wall_time = !options.deterministic;
      run_options.max_epochs = options.epoch_limit;
      const Stage2Result result =
          train_stage2(train_samples, val_samples, swept, frozen, run_options);
      std::vector<Real> mees;
      for (const Stage2Sample& sample : val_samples)
        mees.push_back(mean_euclidean_error(
            reconstruct_from_image(result.model, frozen, sample.image), sample.shape));
      rows.push_back(summarize(request.labels[g], mees));
    }
  } else {
    const MeshHierarchy hierarchy =
        build_hierarchy(data.train.base, config.autoencoder.sampling_factor,
                        config.hierarchy.depth, config.hierarchy.seed);
    const auto train_shapes = dataset_shapes(data.train);
    const auto val_shapes = dataset_shapes(data.val);

    for (std::size_t i = 0; i < request.values.size(); ++i) {
      AutoencoderConfig swept = config.autoencoder;
      if (request.parameter == "latent_size")
        swept.latent_size = request.values[i];
      else
        swept.cheb_order = request.values[i];
      validate_autoencoder_config(swept);
      Stage1RunOptions run_options;
      run_options.threads = threads;
      run_options.record_wall_time = !options.deterministic;
      run_options.max_epochs = options.epoch_limit;
      const Stage1Result result =
          train_stage1(train_shapes, val_shapes, swept, hierarchy, run_options);
      std::vector<Real> mees;
      for (const auto& shape : val_shapes)
        mees.push_back(
            mean_euclidean_error(decode(result.model, encode3d(result.model, shape)), shape));
      rows.push_back(summarize(request.labels[i], mees));
    }
  }

  std::string csv = "parameter,value,val_mee_mean,val_mee_std,val_count\n";
  for (const SweepRow& row : rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%s,%s,%.17g,%.17g,%zu\n", request.parameter.c_str(),
                  row.label.c_str(), row.mean, row.stddev, row.count);
    csv += line;
  }
  detail::ensure_directory(std::filesystem::path(csv_path).parent_path().string());
  detail::atomic_write(csv_path, csv);
  std::cout << csv;
}

}  // namespace
}  // namespace mgcn

int main(int argc, char** argv) {
  using namespace mgcn;

  CLI::App app{"mesh graph-convolutional autoencoder pipeline"};
  app.require_subcommand(1);

  CommonOptions common;
  ReconstructOptions recon_options;
  EvaluateOptions eval_options;
  std::string sweep_text;
  std::string csv_path;
  Real margin_flag = -1;
  Real cap_flag = -1;

  auto add_common = [&](CLI::App* cmd, bool with_training_flags) {
    cmd->add_option("--config", common.config_path, "run configuration JSON");
    cmd->add_option("--output-dir", common.output_dir, "override the config's output_dir");
    cmd->add_flag("--deterministic", common.deterministic,
                  "pin recorded wall times to zero for bit-stable artifacts");
    if (with_training_flags) {
      cmd->add_option("--threads", common.threads, "worker threads (default: MGCN_THREADS or 1)");
      cmd->add_option("--epoch-limit", common.epoch_limit,
                      "run at most this many epochs in this invocation");
    }
  };

  CLI::App* generate = app.add_subcommand("generate", "synthesize the paired dataset");
  add_common(generate, false);

  CLI::App* train_ae = app.add_subcommand("train-ae", "train the 3D mesh autoencoder");
  add_common(train_ae, true);

  CLI::App* train_2d = app.add_subcommand("train-2d", "train the 2D image encoder");
  add_common(train_2d, true);

  CLI::App* reconstruct = app.add_subcommand("reconstruct", "image -> latent -> mesh");
  add_common(reconstruct, false);
  reconstruct->add_option("--image", recon_options.image_path, "input PGM image")->required();
  reconstruct->add_option("--out", recon_options.out_path, "output mesh path")->required();
  reconstruct->add_option("--encoder", recon_options.encoder_path,
                          "encoder checkpoint (default: <output_dir>/checkpoints/encoder2d.mgcn)");
  reconstruct->add_option("--decoder", recon_options.decoder_path,
                          "decoder checkpoint (default: <output_dir>/checkpoints/autoencoder.mgcn)");

  CLI::App* evaluate = app.add_subcommand("evaluate", "align and score two meshes");
  add_common(evaluate, false);
  evaluate->add_option("--recon", eval_options.recon_path, "reconstruction mesh")->required();
  evaluate->add_option("--scan", eval_options.scan_path, "ground-truth scan mesh")->required();
  evaluate->add_option("--recon-landmarks", eval_options.recon_landmarks,
                       "landmark JSON for the reconstruction")
      ->required();
  evaluate->add_option("--scan-landmarks", eval_options.scan_landmarks,
                       "landmark JSON for the scan")
      ->required();
  evaluate->add_option("--out", eval_options.report_path, "report JSON path")->required();
  evaluate->add_option("--error-map", eval_options.error_map_path,
                       "error-map PLY path (default: error_map.ply beside the report)");
  evaluate->add_option("--margin", margin_flag, "mask margin in mm around the landmark hull");
  evaluate->add_option("--cap", cap_flag, "error-map color cap in mm");
  evaluate->add_flag("--with-scale", eval_options.with_scale,
                     "similarity alignment instead of rigid");

  CLI::App* ablate = app.add_subcommand("ablate", "hyperparameter sweep -> CSV");
  add_common(ablate, true);
  ablate->add_option("--sweep", sweep_text,
                     "latent_sizes=4,16 | cheb_orders=2,6 | tap_sets=none;0+1")
      ->required();
  ablate->add_option("--out", csv_path, "CSV path (default: <output_dir>/ablation.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (evaluate->parsed()) {
      if (evaluate->count("--margin") > 0) eval_options.margin = margin_flag;
      if (evaluate->count("--cap") > 0) eval_options.cap = cap_flag;
    }
    if (generate->parsed()) cmd_generate(common);
    else if (train_ae->parsed()) cmd_train_ae(common);
    else if (train_2d->parsed()) cmd_train_2d(common);
    else if (reconstruct->parsed()) cmd_reconstruct(common, recon_options);
    else if (evaluate->parsed()) cmd_evaluate(common, eval_options);
    else if (ablate->parsed()) cmd_ablate(common, sweep_text, csv_path);
    return 0;
  } catch (const DivergedLoss& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ShapeMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const EmptyDataset& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
