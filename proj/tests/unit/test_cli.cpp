#include "commands.hpp"
#include "experiment_config.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace pdisent;
using namespace pdisent::cli;

namespace {

const char* kTinyConfig = R"({
  "generation": {
    "base": {"num_identities": 6, "poses_per_identity": 4, "image_size": 8},
    "target": {"num_identities": 6, "image_size": 8, "yaw_step_deg": 5.0}
  },
  "arch": {"stage_channels": [4, 6], "rich_dim": 12, "id_dim": 8, "nonid_dim": 6, "recon_hidden": 10},
  "split": {"train_identities": 3, "validation_identities": 1, "test_identities": 2},
  "stage2": {"epochs": 2, "batch_size": 16},
  "finetune": {"epochs": 1, "batch_size": 16},
  "stage3": {"max_epochs": 2, "pairs_per_epoch": 32, "batch_size": 16},
  "eval": {"trials": 2},
  "ablation": {"seeds": [1]}
})";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pdisent_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text = kTinyConfig) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << text;
  return p;
}

// Runs the CLI and returns its exit status; stderr goes to <dir>/stderr.txt.
int run(const fs::path& dir, const std::string& args, const std::string& env = "") {
  const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" + PDISENT_CLI_PATH + "' " + args +
                          " > /dev/null 2> stderr.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const ExperimentConfig c = load_config("", {});
  EXPECT_EQ(c.target.num_identities, 80);
  EXPECT_EQ(c.base.num_identities, 200);
  EXPECT_EQ(c.ablation.test_identities, 20);
  const ExperimentConfig back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, OverridesParseJsonValues) {
  nlohmann::json j = nlohmann::json::object();
  apply_override(j, "stage2.epochs=3");
  apply_override(j, "eval.metric=euclidean");
  apply_override(j, "arch.stage_channels=[8,8]");
  const ExperimentConfig c = config_from_json(j);
  EXPECT_EQ(c.ablation.stage2.epochs, 3);
  EXPECT_EQ(c.ablation.eval.metric, Metric::Euclidean);
  EXPECT_EQ(c.arch.stage_channels, (std::vector<int>{8, 8}));
  EXPECT_THROW(apply_override(j, "stage2.epochs"), SchemaError);
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"stage2": {"epoch": 3}})")), SchemaError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"bogus": 1})")), SchemaError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"stage2": {"epochs": "many"}})")), SchemaError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"eval": {"protocol": "p3"}})")), SchemaError);
  EXPECT_THROW(load_config("/nonexistent/config.json", {}), MissingFileError);
}

TEST(Cli, SchemaErrorsExitTwo) {
  const fs::path dir = scratch("schema");
  write_config(dir, R"({"stage2": {"epochz": 1}})");
  EXPECT_EQ(run(dir, "generate -c config.json"), kSchema);
  EXPECT_NE(slurp(dir / "stderr.txt").find("error kind=schema exit=2"), std::string::npos);
  write_config(dir, "{ not json");
  EXPECT_EQ(run(dir, "generate -c config.json"), kSchema);
  EXPECT_EQ(run(dir, "generate --set nope.key=1"), kSchema);
  EXPECT_EQ(run(dir, "train --stage 7"), kSchema);
  EXPECT_EQ(run(dir, "frobnicate"), kSchema);
}

TEST(Cli, MissingInputsExitThree) {
  const fs::path dir = scratch("missing");
  EXPECT_EQ(run(dir, "generate -c absent.json"), kMissingFile);
  write_config(dir);
  fs::create_directories(dir / "out");
  std::ofstream(dir / "out" / "stage3.ckpt") << "x";
  EXPECT_EQ(run(dir, "eval -c config.json -o out"), kIo);  // unreadable checkpoint
  fs::remove(dir / "out" / "stage3.ckpt");
  EXPECT_EQ(run(dir, "eval -c config.json -o out"), kMissingFile);
  EXPECT_NE(slurp(dir / "stderr.txt").find("error kind=missing_file exit=3"), std::string::npos);
}

TEST(Cli, StageThreeWithoutStageTwoIsSchemaErrorAndWritesNothing) {
  const fs::path dir = scratch("stage3");
  write_config(dir);
  EXPECT_EQ(run(dir, "train --stage 3 -c config.json -o out"), kSchema);
  EXPECT_FALSE(fs::exists(dir / "out" / "stage3.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "out" / "train_stage3.config.json"));
  EXPECT_EQ(run(dir, "train --stage ssft -c config.json -o out"), kSchema);
}

TEST(Cli, CorruptCorpusIsIoError) {
  const fs::path dir = scratch("corrupt");
  write_config(dir);
  ASSERT_EQ(run(dir, "generate -c config.json -o out"), kOk);
  std::string bytes = slurp(dir / "out" / "base.pdc");
  bytes.resize(bytes.size() / 2);
  std::ofstream(dir / "out" / "base.pdc", std::ios::binary) << bytes;
  EXPECT_EQ(run(dir, "train --stage 2 -c config.json -o out"), kIo);
}

TEST(Cli, GradcheckThreshold) {
  const fs::path dir = scratch("gradcheck");
  EXPECT_EQ(run(dir, "gradcheck --set gradcheck.max_per_tensor=5 -o out"), kOk);
  EXPECT_TRUE(fs::exists(dir / "out" / "gradcheck.json"));
  EXPECT_EQ(run(dir, "gradcheck --set gradcheck.max_per_tensor=5 --threshold 0 -o out"), kInternal);
}

TEST(Cli, OutputRootEnvironment) {
  const fs::path dir = scratch("env");
  const fs::path root = dir / "root";
  EXPECT_EQ(run(dir, "gradcheck --set gradcheck.max_per_tensor=2 --set paths.output=rel", "PDISENT_OUTPUT_ROOT='" + root.string() + "'"), kOk);
  EXPECT_TRUE(fs::exists(root / "rel" / "gradcheck.json"));
  EXPECT_TRUE(fs::exists(root / "rel" / "gradcheck.config.json"));
}

TEST(Cli, PipelineIsByteDeterministic) {
  const fs::path dir = scratch("pipeline");
  write_config(dir);
  const char* steps[] = {"generate --pgm 2", "train --stage 2", "train --stage 3", "train --stage l2", "eval",
                         "eval --checkpoint {out}/l2.ckpt", "export --split test"};
  for (const char* out : {"a", "b"}) {
    for (std::string step : steps) {
      const auto at = step.find("{out}");
      if (at != std::string::npos) step.replace(at, 5, out);
      ASSERT_EQ(run(dir, step + " -c config.json -o " + out), kOk) << step << "\n" << slurp(dir / "stderr.txt");
    }
  }
  for (const char* file : {"base.pdc", "target.pdc", "corpus_hashes.json", "stage2.ckpt", "stage3.ckpt", "l2.ckpt",
                           "stage2_log.csv", "stage3_log.csv", "metrics_stage3.csv", "metrics_stage3.json",
                           "metrics_l2.csv", "embeddings_stage3.bin", "embeddings_stage3.csv"}) {
    ASSERT_TRUE(fs::exists(dir / "a" / file)) << file;
    EXPECT_EQ(slurp(dir / "a" / file), slurp(dir / "b" / file)) << file;
  }
  EXPECT_TRUE(fs::exists(dir / "a" / "pgm" / "base"));
  const std::string csv = slurp(dir / "a" / "metrics_stage3.csv");
  EXPECT_EQ(csv.rfind(protocol_csv_header() + "\nstage3,", 0), 0u);
  const auto snapshot = nlohmann::json::parse(slurp(dir / "a" / "train_stage3.config.json"));
  EXPECT_EQ(snapshot.at("split").at("test_identities"), 2);
  EXPECT_EQ(snapshot.at("stage3").at("gamma_self"), 1.0);
}
