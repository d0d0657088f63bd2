#pragma once

#include "pdisent/dataset.hpp"
#include "pdisent/network.hpp"
#include "pdisent/random.hpp"
#include "pdisent/training.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pdisent {

enum class Metric { Cosine, Euclidean };

const char* metric_name(Metric m);
/// "cosine" or "euclidean"; throws std::invalid_argument otherwise.
Metric parse_metric(const std::string& name);

using BinValues = std::array<double, kNumPoseBins>;

/// Pose-binned rank-1 accuracy. Bins without probes hold NaN and are left out
/// of avg, which is otherwise the unweighted mean of the bins.
struct ProtocolResult {
  BinValues bins{};
  double avg = 0.0;
  BinValues bin_std{};  ///< population std over trials (0 for a single evaluation)
  double avg_std = 0.0;
  std::array<std::size_t, kNumPoseBins> probe_counts{};
  std::vector<BinValues> trial_bins;
  std::vector<double> trial_avg;
};

/// Matches every probe column to its nearest gallery column (cosine similarity
/// or euclidean distance; ties go to the lowest gallery index). A zero vector
/// has cosine similarity 0 with everything. Embeddings are (dim x count).
/// Throws std::invalid_argument for an empty gallery or mismatched sizes.
ProtocolResult rank1(const Eigen::MatrixXd& gallery, std::span<const int> gallery_labels,
                     const Eigen::MatrixXd& probe, std::span<const int> probe_labels,
                     std::span<const double> probe_yaws, Metric metric = Metric::Cosine);

/// Mean and population std over per-trial results.
ProtocolResult aggregate_trials(const std::vector<ProtocolResult>& trials);

struct CorpusEmbeddings {
  Eigen::MatrixXd e_i;  ///< (id_dim x S)
  Eigen::MatrixXd e_n;  ///< (nonid_dim x S)
  std::vector<int> identity;
  std::vector<double> yaw;

  std::size_t size() const { return identity.size(); }
};

CorpusEmbeddings embed_corpus(const ModelParams& params, const Corpus& corpus, int chunk = 256);

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& m, std::span<const std::size_t> idx);

struct EvalConfig {
  int trials = 10;
  Metric metric = Metric::Cosine;
  std::uint64_t seed = 5;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

/// `trials` P1 gallery draws (from `rng`) each followed by rank1 on e_i.
ProtocolResult run_protocol_p1(const Corpus& corpus, const CorpusEmbeddings& emb, int trials, Rng& rng,
                               Metric metric = Metric::Cosine);
ProtocolResult run_protocol_p1(const Corpus& corpus, const ModelParams& params, int trials, Rng& rng,
                               Metric metric = Metric::Cosine);
/// Full near-frontal gallery, single evaluation.
ProtocolResult run_protocol_p2(const Corpus& corpus, const CorpusEmbeddings& emb, Metric metric = Metric::Cosine);
ProtocolResult run_protocol_p2(const Corpus& corpus, const ModelParams& params, Metric metric = Metric::Cosine);

/// Early-stopping score: P1 average rank-1 on `validation` with a fixed seed.
Validator make_rank1_validator(const Corpus& validation, const EvalConfig& config);

struct RidgeFit {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  double lambda = 0.0;  ///< effective penalty on the centered problem

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
};

/// Ridge regression y <- x (samples as rows) with centered features and
/// lambda = ridge * trace(Xc^T Xc) / dim.
RidgeFit fit_ridge(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double ridge);

struct LeakageResult {
  double mse_id = 0.0;
  double mse_nonid = 0.0;
  double ratio = 0.0;  ///< mse_id / mse_nonid
  double yaw_variance = 0.0;
};

/// Fits yaw <- e_i and yaw <- e_n on a seeded half of the samples and reports
/// held-out mean squared errors. Throws std::invalid_argument for fewer than
/// 50 samples or a constant yaw.
LeakageResult pose_leakage_probe(const Eigen::MatrixXd& e_i, const Eigen::MatrixXd& e_n,
                                 std::span<const double> yaw, std::uint64_t seed = 9, double ridge = 1e-3);

/// Writes e_i, e_n, identity and yaw per sample to `bin_path` (container) and
/// `csv_path`. Embeddings are stored as float32 in both.
void export_embeddings(const CorpusEmbeddings& emb, const std::string& bin_path, const std::string& csv_path);

std::string protocol_csv_header();
std::string protocol_csv_row(const std::string& model, const ProtocolResult& r);
void to_json(nlohmann::json& j, const ProtocolResult& r);
void to_json(nlohmann::json& j, const LeakageResult& r);

}  // namespace pdisent
