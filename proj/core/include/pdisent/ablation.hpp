#pragma once

#include "pdisent/dataset.hpp"
#include "pdisent/evaluation.hpp"
#include "pdisent/network.hpp"
#include "pdisent/training.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace pdisent {

inline constexpr std::array<const char*, 5> kAblationModels = {"SS", "SS-FT", "MSMT", "MSMT+L2", "MSMT+SR"};

/// Identity-disjoint partition of the target corpus: the sorted identity list
/// is cut into consecutive train / validation / test blocks.
struct TargetSplit {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
};

/// Throws std::invalid_argument when the corpus has fewer identities than requested.
TargetSplit split_target_identities(const Corpus& target, int train, int validation, int test);

struct AblationConfig {
  int train_identities = 50;
  int validation_identities = 10;
  int test_identities = 20;
  ArchConfig arch;             ///< num_classes is derived from the corpora
  Stage2Config stage2;         ///< SS and MSMT
  Stage2Config finetune;       ///< SS-FT (softmax only, all groups trainable)
  Stage3Config stage3;         ///< MSMT+SR and MSMT+L2 (loss field ignored)
  EvalConfig eval;
  std::vector<std::uint64_t> seeds{1, 2, 3};

  void validate() const;
};

void to_json(nlohmann::json& j, const AblationConfig& c);
void from_json(const nlohmann::json& j, AblationConfig& c);

struct AblationRow {
  std::string model;
  std::uint64_t seed = 0;
  ProtocolResult result;
  LeakageResult leakage;
};

struct AblationReport {
  std::vector<AblationRow> rows;           ///< per model and seed, ladder order within a seed
  std::map<std::string, ProtocolResult> mean;  ///< seed average per model (std across seeds)
  std::map<std::string, LeakageResult> mean_leakage;
  nlohmann::json metadata;

  /// Columns: model, seed, bin_15..bin_90, avg, std_15..std_90, std_avg. The
  /// seed-averaged rows use seed "mean".
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Trains and evaluates the five ladder rows for every seed on the same
/// corpora and identity split. Training failures are rethrown naming the row.
AblationReport run_ablation(const Corpus& base, const Corpus& target, const AblationConfig& config,
                            const ProgressFn& progress = {});

/// Averages per-seed results: bins and avg are means, stds are population
/// stds of the per-seed values.
ProtocolResult average_over_seeds(const std::vector<ProtocolResult>& results);

}  // namespace pdisent
