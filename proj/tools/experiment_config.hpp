#pragma once

#include "pdisent/ablation.hpp"
#include "pdisent/dataset.hpp"
#include "pdisent/evaluation.hpp"
#include "pdisent/gradcheck.hpp"
#include "pdisent/network.hpp"
#include "pdisent/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdisent::cli {

/// Raised for unknown keys, wrong types or invalid values in a config.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required input (config, corpus, checkpoint) does not exist.
class MissingFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PathsConfig {
  std::string output = "runs/default";
  std::string base_corpus;        ///< empty: <output>/base.pdc
  std::string target_corpus;      ///< empty: <output>/target.pdc
  std::string stage2_checkpoint;  ///< empty: <output>/stage2.ckpt
  std::string ss_checkpoint;      ///< empty: <output>/ss.ckpt
  std::string checkpoint;         ///< model for eval/export; empty: <output>/stage3.ckpt
};

struct ExperimentConfig {
  GenerationConfig base;
  GenerationConfig target;
  std::uint64_t base_seed = 101;
  std::uint64_t target_seed = 202;
  ArchConfig arch;
  AblationConfig ablation;  ///< split sizes, stage2 / finetune / stage3 / eval sections and seeds
  Protocol protocol = Protocol::P1;
  GradCheckOptions gradcheck;
  PathsConfig paths;

  ExperimentConfig();
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Overlays `user` on the defaults. Unknown keys and type errors raise SchemaError.
ExperimentConfig config_from_json(const nlohmann::json& user);

/// Applies "a.b.c=value" overrides; value is parsed as JSON when possible and
/// taken as a string otherwise. The key must already exist.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Reads a config file (or defaults for an empty path), applies overrides and validates.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace pdisent::cli
