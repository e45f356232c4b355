#pragma once

#include <fstream>
#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "mgcn/autoencoder.hpp"
#include "mgcn/core.hpp"
#include "mgcn/encoder2d.hpp"
#include "mgcn/render.hpp"

namespace mgcn {

// ---------------------------------------------------------------------------
// Run configuration: one JSON document drives the whole pipeline
// ---------------------------------------------------------------------------

struct HierarchyConfig {
  std::string base_mesh;  // mesh path, or "icosphere:<subdivisions>:<radius>"
  Index depth = 5;        // decimation levels below the base mesh
  std::uint64_t seed = 0; // decimation tie-break seed
};

struct DataConfig {
  Index train_count = 500;
  Index val_count = 50;
  Index num_modes = 8;
  Real sigma0 = 3.0;  // stddev of the first deformation mode, mm
  Real decay = 0.8;   // geometric decay of mode stddevs
  std::uint64_t model_seed = 0;
  std::uint64_t train_seed = 1;
  std::uint64_t val_seed = 2;
};

struct EvalConfig {
  Real mask_margin = 10.0;   // mm around the landmark hull
  Real error_map_cap = 5.0;  // mm mapped to full red
  bool with_scale = false;   // similarity instead of rigid alignment
};

struct RunConfig {
  HierarchyConfig hierarchy;
  AutoencoderConfig autoencoder;
  Encoder2DConfig encoder2d;
  DataConfig data;
  RenderConfig render;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
};

inline void to_json(nlohmann::json& j, const HierarchyConfig& c) {
  j = nlohmann::json{{"base_mesh", c.base_mesh}, {"depth", c.depth}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, HierarchyConfig& c) {
  j.at("base_mesh").get_to(c.base_mesh);
  j.at("depth").get_to(c.depth);
  j.at("seed").get_to(c.seed);
}

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json{{"train_count", c.train_count}, {"val_count", c.val_count},
                     {"num_modes", c.num_modes},     {"sigma0", c.sigma0},
                     {"decay", c.decay},             {"model_seed", c.model_seed},
                     {"train_seed", c.train_seed},   {"val_seed", c.val_seed}};
}

inline void from_json(const nlohmann::json& j, DataConfig& c) {
  j.at("train_count").get_to(c.train_count);
  j.at("val_count").get_to(c.val_count);
  j.at("num_modes").get_to(c.num_modes);
  j.at("sigma0").get_to(c.sigma0);
  j.at("decay").get_to(c.decay);
  j.at("model_seed").get_to(c.model_seed);
  j.at("train_seed").get_to(c.train_seed);
  j.at("val_seed").get_to(c.val_seed);
}

inline void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = nlohmann::json{{"mask_margin", c.mask_margin},
                     {"error_map_cap", c.error_map_cap},
                     {"with_scale", c.with_scale}};
}

inline void from_json(const nlohmann::json& j, EvalConfig& c) {
  j.at("mask_margin").get_to(c.mask_margin);
  j.at("error_map_cap").get_to(c.error_map_cap);
  j.at("with_scale").get_to(c.with_scale);
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"hierarchy", c.hierarchy}, {"autoencoder", c.autoencoder},
                     {"encoder2d", c.encoder2d}, {"data", c.data},
                     {"render", c.render},       {"eval", c.eval},
                     {"seed", c.seed},           {"output_dir", c.output_dir}};
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::string& where,
                                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ParseError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* key : allowed)
      if (it.key() == key) {
        known = true;
        break;
      }
    if (!known) throw ParseError("unknown key \"" + it.key() + "\" in " + where);
  }
}

}  // namespace detail

// Parses a full run configuration. Sections may be omitted (defaults apply),
// but a section that is present must be complete, and unknown keys are
// rejected everywhere so typos cannot silently fall back to defaults.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, "run config",
                              {"hierarchy", "autoencoder", "encoder2d", "data", "render", "eval",
                               "seed", "output_dir"});
  RunConfig config;
  if (j.contains("hierarchy")) {
    detail::reject_unknown_keys(j["hierarchy"], "hierarchy", {"base_mesh", "depth", "seed"});
    j["hierarchy"].get_to(config.hierarchy);
  }
  if (j.contains("autoencoder")) {
    detail::reject_unknown_keys(j["autoencoder"], "autoencoder",
                                {"latent_size", "cheb_order", "sampling_factor", "encoder_levels",
                                 "widths", "epochs", "batch_size", "learning_rate", "lr_decay",
                                 "momentum", "weight_decay", "seed"});
    j["autoencoder"].get_to(config.autoencoder);
  }
  if (j.contains("encoder2d")) {
    detail::reject_unknown_keys(j["encoder2d"], "encoder2d",
                                {"image_size", "backbone_widths", "tap_blocks", "tap_channels",
                                 "global_dim", "latent_size", "epochs", "batch_size",
                                 "learning_rate", "momentum", "weight_decay", "dropout", "seed"});
    j["encoder2d"].get_to(config.encoder2d);
  }
  if (j.contains("data")) {
    detail::reject_unknown_keys(j["data"], "data",
                                {"train_count", "val_count", "num_modes", "sigma0", "decay",
                                 "model_seed", "train_seed", "val_seed"});
    j["data"].get_to(config.data);
  }
  if (j.contains("render")) {
    detail::reject_unknown_keys(j["render"], "render",
                                {"width", "height", "camera", "light_direction", "albedo", "mode",
                                 "depth_scale"});
    if (j["render"].contains("camera"))
      detail::reject_unknown_keys(j["render"]["camera"], "render.camera",
                                  {"focal", "cx", "cy", "rotation", "translation"});
    j["render"].get_to(config.render);
  }
  if (j.contains("eval")) {
    detail::reject_unknown_keys(j["eval"], "eval",
                                {"mask_margin", "error_map_cap", "with_scale"});
    j["eval"].get_to(config.eval);
  }
  if (j.contains("seed")) j["seed"].get_to(config.seed);
  if (j.contains("output_dir")) j["output_dir"].get_to(config.output_dir);
  return config;
}

inline void validate_run_config(const RunConfig& config) {
  validate_autoencoder_config(config.autoencoder);
  validate_encoder2d_config(config.encoder2d);
  validate_render_config(config.render);
  if (config.hierarchy.depth < config.autoencoder.encoder_levels)
    throw ConfigMismatch("hierarchy depth " + std::to_string(config.hierarchy.depth) +
                         " cannot support " + std::to_string(config.autoencoder.encoder_levels) +
                         " encoder levels");
  if (config.data.train_count < 1 || config.data.val_count < 1)
    throw ConfigMismatch("train_count and val_count must be >= 1");
  if (config.data.num_modes < 0) throw ConfigMismatch("num_modes must be >= 0");
  if (!(config.data.sigma0 > 0)) throw ConfigMismatch("sigma0 must be positive");
  if (!(config.data.decay > 0) || config.data.decay > 1.0)
    throw ConfigMismatch("decay must be in (0, 1]");
  if (config.encoder2d.image_size != config.render.width ||
      config.encoder2d.image_size != config.render.height)
    throw ConfigMismatch("encoder2d.image_size must match the render resolution");
  if (config.encoder2d.latent_size != config.autoencoder.latent_size)
    throw ConfigMismatch("encoder2d and autoencoder latent sizes must match");
  if (config.eval.mask_margin < 0) throw ConfigMismatch("mask_margin must be >= 0");
  if (!(config.eval.error_map_cap > 0)) throw ConfigMismatch("error_map_cap must be positive");
  if (config.output_dir.empty()) throw ConfigMismatch("output_dir must not be empty");
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  RunConfig config;
  try {
    in >> j;
    config = parse_run_config(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  validate_run_config(config);
  return config;
}

}  // namespace mgcn
