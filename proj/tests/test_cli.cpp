// Integration tests that drive the mgcn binary the way a user would: real
// processes, real files, and assertions on exit codes and produced bytes.
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#ifndef MGCN_CLI_PATH
#error "MGCN_CLI_PATH must point at the built mgcn binary"
#endif

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunResult {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

std::string fresh_dir(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(in) << "cannot open " << path;
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Runs `mgcn <args>` through the shell, capturing output and the exit code.
// `env_prefix` lets a test export variables for just that invocation.
RunResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  const std::string capture =
      std::string(::testing::TempDir()) + "/cli_capture_" + std::to_string(counter++) + ".txt";
  const std::string cmd =
      env_prefix + std::string(MGCN_CLI_PATH) + " " + args + " > " + capture + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult result;
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.output = read_bytes(capture);
  return result;
}

// A pipeline small enough that every stage finishes in a couple of seconds:
// 42-vertex icosphere, 6 training shapes, 16x16 renders, two epochs per stage.
json tiny_config(const std::string& output_dir) {
  return json{
      {"hierarchy", {{"base_mesh", "icosphere:1:50"}, {"depth", 2}, {"seed", 0}}},
      {"autoencoder",
       {{"latent_size", 5},
        {"cheb_order", 3},
        {"sampling_factor", 3},
        {"encoder_levels", 2},
        {"widths", {4, 6}},
        {"epochs", 2},
        {"batch_size", 4},
        {"learning_rate", 0.05},
        {"lr_decay", 0.99},
        {"momentum", 0.9},
        {"weight_decay", 0.0005},
        {"seed", 1}}},
      {"encoder2d",
       {{"image_size", 16},
        {"backbone_widths", {4, 6}},
        {"tap_blocks", {0}},
        {"tap_channels", 2},
        {"global_dim", 8},
        {"latent_size", 5},
        {"epochs", 2},
        {"batch_size", 4},
        {"learning_rate", 0.01},
        {"momentum", 0.9},
        {"weight_decay", 0.0},
        {"dropout", 0.25},
        {"seed", 2}}},
      {"data",
       {{"train_count", 6},
        {"val_count", 3},
        {"num_modes", 4},
        {"sigma0", 3.0},
        {"decay", 0.8},
        {"model_seed", 3},
        {"train_seed", 4},
        {"val_seed", 5}}},
      {"render",
       {{"width", 16},
        {"height", 16},
        {"camera",
         {{"focal", 25.0},
          {"cx", 8.0},
          {"cy", 8.0},
          {"rotation", {1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0}},
          {"translation", {0.0, 0.0, 220.0}}}},
        {"light_direction", {0.0, 0.0, -1.0}},
        {"albedo", 0.9},
        {"mode", "grayscale_lambertian"},
        {"depth_scale", 1000.0}}},
      {"eval", {{"mask_margin", 60.0}, {"error_map_cap", 5.0}, {"with_scale", false}}},
      {"seed", 7},
      {"output_dir", output_dir}};
}

std::string write_config(const std::string& dir, const json& config) {
  const std::string path = dir + "/config.json";
  std::ofstream(path) << config.dump(2);
  return path;
}

// Byte-compares every regular file under two directory trees.
void expect_identical_trees(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> in_a;
  for (const auto& entry : fs::recursive_directory_iterator(a))
    if (entry.is_regular_file()) in_a.push_back(fs::relative(entry.path(), a));
  ASSERT_FALSE(in_a.empty());
  std::size_t in_b = 0;
  for (const auto& entry : fs::recursive_directory_iterator(b))
    if (entry.is_regular_file()) ++in_b;
  EXPECT_EQ(in_a.size(), in_b);
  for (const fs::path& rel : in_a)
    EXPECT_EQ(read_bytes(a / rel), read_bytes(b / rel)) << rel;
}

json last_json_block(const std::string& text) {
  const std::size_t start = text.find('{');
  if (start == std::string::npos) {
    ADD_FAILURE() << "no JSON in output:\n" << text;
    return json::object();
  }
  return json::parse(text.substr(start));
}

// Shared fixture: one generate + train-ae + train-2d run reused by every test
// that only reads the resulting artifacts.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new std::string(fresh_dir("cli_pipeline"));
    config_ = new std::string(write_config(*dir_, tiny_config(*dir_ + "/out")));
    const std::string base = "--config " + *config_ + " --deterministic";
    ASSERT_EQ(run_cli("generate " + base).code, 0);
    ASSERT_EQ(run_cli("train-ae " + base).code, 0);
    ASSERT_EQ(run_cli("train-2d " + base).code, 0);
  }

  static void TearDownTestSuite() {
    delete dir_;
    delete config_;
    dir_ = nullptr;
    config_ = nullptr;
  }

  static const std::string& dir() { return *dir_; }
  static const std::string& config() { return *config_; }
  static std::string out() { return *dir_ + "/out"; }

 private:
  static std::string* dir_;
  static std::string* config_;
};

std::string* CliPipeline::dir_ = nullptr;
std::string* CliPipeline::config_ = nullptr;

TEST_F(CliPipeline, StagesLeaveTheExpectedArtifacts) {
  EXPECT_TRUE(fs::exists(out() + "/data/shape_model.mgcn"));
  EXPECT_TRUE(fs::exists(out() + "/data/train/manifest.json"));
  EXPECT_TRUE(fs::exists(out() + "/data/train/base_landmarks.json"));
  EXPECT_TRUE(fs::exists(out() + "/data/val/images/sample_00002.pgm"));
  EXPECT_TRUE(fs::exists(out() + "/checkpoints/autoencoder.mgcn"));
  EXPECT_TRUE(fs::exists(out() + "/checkpoints/encoder2d.mgcn"));
  EXPECT_TRUE(fs::exists(out() + "/history/stage1_history.json"));
  EXPECT_TRUE(fs::exists(out() + "/history/stage2_history.json"));

  const json history = json::parse(read_bytes(out() + "/history/stage1_history.json"));
  EXPECT_EQ(history.at("epochs").size(), 2u);
  // --deterministic pins recorded wall times to zero.
  for (const auto& record : history.at("epochs"))
    EXPECT_EQ(record.at("wall_seconds").get<double>(), 0.0);
}

TEST_F(CliPipeline, ReconstructIsDeterministic) {
  const std::string image = out() + "/data/val/images/sample_00000.pgm";
  const std::string args = "reconstruct --config " + config() + " --deterministic --image " +
                           image + " --out " + dir() + "/recon";
  const RunResult first = run_cli(args + "_a.obj");
  ASSERT_EQ(first.code, 0) << first.output;
  const RunResult second = run_cli(args + "_b.obj");
  ASSERT_EQ(second.code, 0) << second.output;
  EXPECT_EQ(read_bytes(dir() + "/recon_a.obj"), read_bytes(dir() + "/recon_b.obj"));

  const json summary = last_json_block(first.output);
  EXPECT_EQ(summary.at("latent").size(), 5u);
  EXPECT_EQ(summary.at("vertex_count").get<int>(), 42);
  EXPECT_EQ(summary.at("seconds").get<double>(), 0.0);
}

TEST_F(CliPipeline, EvaluateAMeshAgainstItselfScoresZero) {
  const std::string scan = out() + "/data/val/shapes/sample_00001.obj";
  const std::string landmarks = out() + "/data/val/base_landmarks.json";
  const std::string report = dir() + "/self_report.json";
  const RunResult result =
      run_cli("evaluate --config " + config() + " --recon " + scan + " --scan " + scan +
              " --recon-landmarks " + landmarks + " --scan-landmarks " + landmarks + " --out " +
              report);
  ASSERT_EQ(result.code, 0) << result.output;

  const json summary = last_json_block(result.output);
  EXPECT_NEAR(summary.at("combined").get<double>(), 0.0, 1e-9);
  EXPECT_EQ(summary.at("landmarks_used").get<int>(), 6);
  EXPECT_TRUE(fs::exists(report));
  EXPECT_TRUE(fs::exists(fs::path(report).parent_path() / "error_map.ply"));

  const json full = json::parse(read_bytes(report));
  EXPECT_TRUE(full.contains("transform"));
  EXPECT_TRUE(full.contains("histogram"));
  EXPECT_TRUE(full.contains("directional_means"));
}

TEST_F(CliPipeline, EvaluateScoresAReconstruction) {
  const std::string image = out() + "/data/val/images/sample_00001.pgm";
  const std::string recon = dir() + "/recon_scored.obj";
  ASSERT_EQ(run_cli("reconstruct --config " + config() + " --image " + image + " --out " + recon)
                .code,
            0);

  const std::string landmarks = out() + "/data/val/base_landmarks.json";
  const RunResult result =
      run_cli("evaluate --config " + config() + " --recon " + recon + " --scan " + out() +
              "/data/val/shapes/sample_00001.obj --recon-landmarks " + landmarks +
              " --scan-landmarks " + landmarks + " --out " + dir() + "/recon_report.json");
  ASSERT_EQ(result.code, 0) << result.output;
  const json summary = last_json_block(result.output);
  EXPECT_TRUE(std::isfinite(summary.at("combined").get<double>()));
  EXPECT_GE(summary.at("combined").get<double>(), 0.0);
  EXPECT_EQ(summary.at("masked_count").get<int>(), 42);  // margin 60 covers the whole sphere
}

TEST_F(CliPipeline, AblateSweepsStageOneAndWritesCsv) {
  const std::string csv = dir() + "/latent_sweep.csv";
  const RunResult result = run_cli("ablate --config " + config() +
                                   " --deterministic --sweep latent_sizes=2,5 --out " + csv);
  ASSERT_EQ(result.code, 0) << result.output;

  std::istringstream lines(read_bytes(csv));
  std::string header, row2, row5, extra;
  ASSERT_TRUE(std::getline(lines, header));
  EXPECT_EQ(header, "parameter,value,val_mee_mean,val_mee_std,val_count");
  ASSERT_TRUE(std::getline(lines, row2));
  ASSERT_TRUE(std::getline(lines, row5));
  EXPECT_FALSE(std::getline(lines, extra));
  EXPECT_EQ(row2.rfind("latent_size,2,", 0), 0u);
  EXPECT_EQ(row5.rfind("latent_size,5,", 0), 0u);
  EXPECT_EQ(row2.substr(row2.size() - 2), ",3");  // three validation samples
  // The CSV is also printed to stdout.
  EXPECT_NE(result.output.find(header), std::string::npos);
}

TEST_F(CliPipeline, AblateSweepsFusionTapsUsingTheFrozenDecoder) {
  const std::string csv = dir() + "/tap_sweep.csv";
  const RunResult result = run_cli("ablate --config " + config() +
                                   " --deterministic --sweep \"tap_sets=none;0\" --out " + csv);
  ASSERT_EQ(result.code, 0) << result.output;

  std::istringstream lines(read_bytes(csv));
  std::string header, none_row, tap_row;
  ASSERT_TRUE(std::getline(lines, header));
  EXPECT_EQ(header, "parameter,value,val_mee_mean,val_mee_std,val_count");
  ASSERT_TRUE(std::getline(lines, none_row));
  ASSERT_TRUE(std::getline(lines, tap_row));
  EXPECT_EQ(none_row.rfind("taps,none,", 0), 0u);
  EXPECT_EQ(tap_row.rfind("taps,0,", 0), 0u);
}

TEST(CliGenerate, ReRunsAreByteIdentical) {
  const std::string dir_a = fresh_dir("cli_gen_a");
  const std::string dir_b = fresh_dir("cli_gen_b");
  const std::string cfg_a = write_config(dir_a, tiny_config(dir_a + "/out"));
  const std::string cfg_b = write_config(dir_b, tiny_config(dir_b + "/out"));
  ASSERT_EQ(run_cli("generate --config " + cfg_a + " --deterministic").code, 0);
  ASSERT_EQ(run_cli("generate --config " + cfg_b + " --deterministic").code, 0);
  expect_identical_trees(dir_a + "/out/data", dir_b + "/out/data");
}

TEST(CliResume, InterruptedTrainingReproducesTheUninterruptedRun) {
  const std::string dir_a = fresh_dir("cli_resume_a");
  const std::string dir_b = fresh_dir("cli_resume_b");
  const std::string cfg_a = write_config(dir_a, tiny_config(dir_a + "/out"));
  const std::string cfg_b = write_config(dir_b, tiny_config(dir_b + "/out"));

  ASSERT_EQ(run_cli("generate --config " + cfg_a + " --deterministic").code, 0);
  ASSERT_EQ(run_cli("generate --config " + cfg_b + " --deterministic").code, 0);

  // A: straight through. B: stop after one epoch, then resume to completion.
  ASSERT_EQ(run_cli("train-ae --config " + cfg_a + " --deterministic").code, 0);
  ASSERT_EQ(run_cli("train-ae --config " + cfg_b + " --deterministic --epoch-limit 1").code, 0);
  ASSERT_EQ(run_cli("train-ae --config " + cfg_b + " --deterministic").code, 0);

  EXPECT_EQ(read_bytes(dir_a + "/out/checkpoints/autoencoder.mgcn"),
            read_bytes(dir_b + "/out/checkpoints/autoencoder.mgcn"));
  EXPECT_EQ(read_bytes(dir_a + "/out/history/stage1_history.json"),
            read_bytes(dir_b + "/out/history/stage1_history.json"));
}

TEST(CliExitCodes, FollowTheDocumentedContract) {
  const std::string dir = fresh_dir("cli_exit_codes");

  // 3: the config file itself cannot be read.
  EXPECT_EQ(run_cli("generate --config " + dir + "/absent.json").code, 3);

  // 2: a config with an unknown key is rejected before any work happens.
  json bad = tiny_config(dir + "/out");
  bad["autoencoder"]["learning_rte"] = 0.01;
  const std::string bad_cfg = dir + "/bad.json";
  std::ofstream(bad_cfg) << bad.dump();
  const RunResult bad_key = run_cli("generate --config " + bad_cfg);
  EXPECT_EQ(bad_key.code, 2);
  EXPECT_NE(bad_key.output.find("learning_rte"), std::string::npos);

  // 4: training stages refuse to run before their inputs exist.
  const std::string cfg = write_config(dir, tiny_config(dir + "/out"));
  EXPECT_EQ(run_cli("train-ae --config " + cfg).code, 4);
  EXPECT_EQ(run_cli("train-2d --config " + cfg).code, 4);

  // 2: a malformed command line (unknown flag) is a usage error.
  EXPECT_EQ(run_cli("generate --config " + cfg + " --frobnicate").code, 2);
}

TEST(CliExitCodes, DivergenceAndBadImagesAreDistinguished) {
  const std::string dir = fresh_dir("cli_exit_runtime");
  json cfg_json = tiny_config(dir + "/out");
  const std::string cfg = write_config(dir, cfg_json);
  ASSERT_EQ(run_cli("generate --config " + cfg).code, 0);

  // 5: an absurd learning rate makes the loss non-finite immediately.
  json hot = cfg_json;
  hot["autoencoder"]["learning_rate"] = 1e9;
  const std::string hot_cfg = dir + "/hot.json";
  std::ofstream(hot_cfg) << hot.dump();
  const RunResult diverged = run_cli("train-ae --config " + hot_cfg);
  EXPECT_EQ(diverged.code, 5);
  EXPECT_NE(diverged.output.find("non-finite"), std::string::npos);

  // 2: an input image whose size disagrees with the trained encoder.
  ASSERT_EQ(run_cli("train-ae --config " + cfg).code, 0);
  ASSERT_EQ(run_cli("train-2d --config " + cfg).code, 0);
  const std::string small = dir + "/small.pgm";
  {
    std::ofstream pgm(small, std::ios::binary);
    pgm << "P5\n8 8\n65535\n";
    for (int i = 0; i < 8 * 8 * 2; ++i) pgm.put('\0');
  }
  const RunResult wrong_size =
      run_cli("reconstruct --config " + cfg + " --image " + small + " --out " + dir + "/r.obj");
  EXPECT_EQ(wrong_size.code, 2);
  EXPECT_NE(wrong_size.output.find("8x8"), std::string::npos);
}

TEST(CliThreads, EnvironmentVariableIsParsedAndValidated) {
  const std::string dir = fresh_dir("cli_threads");
  const std::string cfg = write_config(dir, tiny_config(dir + "/out"));
  ASSERT_EQ(run_cli("generate --config " + cfg).code, 0);

  // Garbage in MGCN_THREADS is a config error...
  EXPECT_EQ(run_cli("train-ae --config " + cfg, "MGCN_THREADS=abc ").code, 2);

  // ...a sane value trains, and an explicit --threads flag overrides it.
  EXPECT_EQ(run_cli("train-ae --config " + cfg + " --deterministic --threads 1",
                    "MGCN_THREADS=abc ")
                .code,
            0);
}

}  // namespace
