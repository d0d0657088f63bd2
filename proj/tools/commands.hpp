#pragma once

#include "experiment_config.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace pdisent::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kSchema = 2,
  kMissingFile = 3,
  kDivergence = 4,
  kIo = 5,
};

/// Environment variable that relative output directories are resolved against.
inline constexpr const char* kOutputRootEnv = "PDISENT_OUTPUT_ROOT";

std::filesystem::path output_dir(const ExperimentConfig& c);

struct GenerateOptions {
  int pgm_samples = 0;  ///< also dump the first N images of each corpus as PGM
};

enum class TrainStage { Stage2, Stage3, SS, SSFT, L2 };
/// "2", "3", "ss", "ssft" or "l2".
TrainStage parse_stage(const std::string& s);

enum class SplitChoice { Train, Validation, Test, All };
SplitChoice parse_split(const std::string& s);

void cmd_generate(const ExperimentConfig& c, const GenerateOptions& o);
void cmd_train(const ExperimentConfig& c, TrainStage stage);
void cmd_eval(const ExperimentConfig& c, const std::string& checkpoint);
void cmd_ablate(const ExperimentConfig& c);
void cmd_export(const ExperimentConfig& c, const std::string& checkpoint, SplitChoice split);
/// Returns the largest relative error over all checked losses.
double cmd_gradcheck(const ExperimentConfig& c);

}  // namespace pdisent::cli
