#pragma once

#include "pdisent/dataset.hpp"
#include "pdisent/losses.hpp"
#include "pdisent/network.hpp"
#include "pdisent/optimizer.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace pdisent {

/// Samples of one or more corpora flattened into training matrices, with
/// identity labels mapped into a shared label space.
struct LabeledSet {
  int image_size = 0;
  Eigen::MatrixXd images;     ///< (H*W x S)
  std::vector<int> labels;    ///< merged label space
  Eigen::MatrixXd pose;       ///< (7 x S), standardized over the merged set
  Eigen::MatrixXd landmarks;  ///< (2K x S)
  std::vector<double> yaw;    ///< raw radians
  std::array<double, 7> pose_mean{};
  std::array<double, 7> pose_std{};

  std::size_t size() const { return labels.size(); }
};

/// A corpus restricted to `identities`; identity identities[k] maps to label
/// label_offset + k.
struct SourceSpec {
  const Corpus* corpus = nullptr;
  std::vector<int> identities;
  int label_offset = 0;
};

/// Concatenates sources in order. Raw poses are recovered from each corpus
/// manifest and re-standardized over the merged samples.
LabeledSet assemble_labeled_set(std::span<const SourceSpec> sources);

struct Stage2Config {
  MultitaskWeights weights;
  double lr0 = 3e-4;
  double lr_decay = 0.25;
  int decay_every = 5;
  int epochs = 15;
  int batch_size = 32;
  std::uint64_t seed = 1;
  AdamConfig adam;
};

/// lr0 * lr_decay^floor(epoch / decay_every), epoch counted from 0.
double stage2_learning_rate(const Stage2Config& config, int epoch);

enum class FinetuneLoss { Reconstruction, L2 };

struct Stage3Config {
  FinetuneLoss loss = FinetuneLoss::Reconstruction;
  ReconstructionWeights weights;
  double l2_beta = 1.0;  ///< pair-distance weight for FinetuneLoss::L2
  double lr = 1e-4;
  int patience = 3;
  int max_epochs = 30;
  int pairs_per_epoch = 0;  ///< 0 means one pair per training sample
  int batch_size = 32;
  std::uint64_t seed = 1;
  AdamConfig adam;
};

void validate(const Stage2Config& c);
void validate(const Stage3Config& c);

const char* finetune_loss_name(FinetuneLoss l);

void to_json(nlohmann::json& j, const Stage2Config& c);
void from_json(const nlohmann::json& j, Stage2Config& c);
void to_json(nlohmann::json& j, const Stage3Config& c);
void from_json(const nlohmann::json& j, Stage3Config& c);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  LossTerms terms;
  double train_accuracy = std::numeric_limits<double>::quiet_NaN();
  double val_rank1 = std::numeric_limits<double>::quiet_NaN();
};

enum class LogKind { Stage2, Stage3Reconstruction, Stage3L2 };

struct TrainingLog {
  LogKind kind = LogKind::Stage2;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  ///< stage 3: epoch whose parameters were returned

  std::string to_csv() const;
  void write_csv(const std::string& path) const;
};

struct TrainResult {
  ModelParams params;
  TrainingLog log;
};

/// Optional per-epoch hook, e.g. progress output.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains every group from a fresh init (seeded by config.seed) on the
/// multi-task objective with shuffled mini-batches and the step-decay schedule.
/// Throws DivergenceError on a non-finite loss.
TrainResult train_stage2(const LabeledSet& data, const ArchConfig& arch, const Stage2Config& config,
                         const EpochCallback& on_epoch = {});
/// Same loop starting from existing parameters (all groups made trainable).
TrainResult train_stage2(const LabeledSet& data, ModelParams init, const Stage2Config& config,
                         const EpochCallback& on_epoch = {});

/// Validation score for early stopping; larger is better.
using Validator = std::function<double(const ModelParams&)>;

/// Pair fine-tuning on top of stage-2 parameters. The backbone, classifier and
/// pose/landmark heads are frozen; the reconstructor is re-initialized
/// (reconstruction loss) or left frozen (L2 loss). After every epoch the
/// validator is evaluated; training stops once `patience` consecutive epochs
/// fail to improve on the best score and the best-scoring parameters are
/// returned.
TrainResult train_stage3(const ModelParams& stage2, const LabeledSet& data, const Stage3Config& config,
                         const Validator& validator, const EpochCallback& on_epoch = {});

/// Rich embeddings (rich_dim x S) computed in chunks.
Eigen::MatrixXd rich_embeddings(const ModelParams& params, const Eigen::MatrixXd& images,
                                int chunk = 256);

/// Fraction of samples whose arg-max logit equals the label.
double identity_accuracy(const ModelParams& params, const LabeledSet& data);

}  // namespace pdisent
