#pragma once

#include "pdisent/network.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace pdisent {

/// Weighted loss decomposition; every field is already multiplied by its
/// coefficient and averaged over the batch, and total is their sum.
struct LossTerms {
  double total = 0.0;
  double ce = 0.0;
  double pose = 0.0;
  double landmark = 0.0;
  double self = 0.0;
  double cross = 0.0;
  double l2 = 0.0;

  LossTerms& operator+=(const LossTerms& o);
  LossTerms operator*(double k) const;
};

struct MultitaskWeights {
  double identity = 1.0;
  double pose = 1.0;
  double landmark = 1.0;
};

struct ReconstructionWeights {
  double identity = 1.0;
  double self = 1.0;
  double cross = 1.0;
};

/// Mean over the batch of -log softmax(logits)[y] using a max-shifted
/// log-sum-exp, plus d/dlogits of that mean. Throws std::out_of_range for a
/// label outside [0, classes).
double cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> labels,
                     Eigen::MatrixXd* d_logits);

struct MultitaskLoss {
  LossTerms terms;
  BranchGrads grads;  ///< w.r.t. logits, e_p and e_l
};

/// mean_b [ -l_i log softmax(logits_b)[y_b] + l_p |y^p_b - e^p_b|^2 + l_l |y^l_b - e^l_b|^2 ]
MultitaskLoss loss_multitask(const EmbeddingBatch& out, std::span<const int> labels,
                             const Eigen::MatrixXd& pose_targets,
                             const Eigen::MatrixXd& landmark_targets, const MultitaskWeights& w);

struct ReconstructionLoss {
  LossTerms terms;
  Eigen::MatrixXd d_logits1;  ///< w.r.t. the reference logits
  Eigen::MatrixXd d_self;     ///< w.r.t. g(e_i1, e_n1)
  Eigen::MatrixXd d_cross;    ///< w.r.t. g(e_i2, e_n1)
};

/// mean over pairs of -g_i log softmax(W_c e_i1)[y1] + g_s |g(e_i1,e_n1) - e_r1|^2
/// + g_c |g(e_i2,e_n1) - e_r1|^2, with e_r1 a constant target.
ReconstructionLoss loss_reconstruction(const PairForward& pair, std::span<const int> labels1,
                                       const ReconstructionWeights& w);

struct L2PairLoss {
  LossTerms terms;
  Eigen::MatrixXd d_logits1, d_e_i1, d_e_i2;
};

/// mean over pairs of -ce_weight log softmax(W_c e_i1)[y1] + beta |e_i1 - e_i2|^2.
L2PairLoss loss_l2_pair(const EmbeddingBatch& first, const EmbeddingBatch& second,
                        std::span<const int> labels1, double ce_weight, double beta);

/// Loss value plus gradients for every unfrozen parameter group (frozen groups stay zero).
struct Objective {
  LossTerms terms;
  ModelParams grads;
  std::vector<int> predicted;  ///< arg-max logit per (reference) sample
};

Objective multitask_objective(const ModelParams& params, const Eigen::MatrixXd& images,
                              std::span<const int> labels, const Eigen::MatrixXd& pose_targets,
                              const Eigen::MatrixXd& landmark_targets, const MultitaskWeights& w);

/// Pair objectives take rich embeddings so a frozen backbone can be evaluated
/// once per image. Both throw ConfigurationError unless the backbone is frozen.
Objective reconstruction_objective(const ModelParams& params, const Eigen::MatrixXd& e_r1,
                                   const Eigen::MatrixXd& e_r2, std::span<const int> labels1,
                                   const ReconstructionWeights& w);
Objective l2_pair_objective(const ModelParams& params, const Eigen::MatrixXd& e_r1,
                            const Eigen::MatrixXd& e_r2, std::span<const int> labels1,
                            double ce_weight, double beta);

}  // namespace pdisent
