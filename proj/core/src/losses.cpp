#include "pdisent/losses.hpp"

#include "pdisent/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace pdisent {

using Eigen::MatrixXd;

LossTerms& LossTerms::operator+=(const LossTerms& o) {
  total += o.total;
  ce += o.ce;
  pose += o.pose;
  landmark += o.landmark;
  self += o.self;
  cross += o.cross;
  l2 += o.l2;
  return *this;
}

LossTerms LossTerms::operator*(double k) const {
  return {total * k, ce * k, pose * k, landmark * k, self * k, cross * k, l2 * k};
}

double cross_entropy(const MatrixXd& logits, std::span<const int> labels, MatrixXd* d_logits) {
  const Eigen::Index batch = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != batch)
    throw std::invalid_argument("cross_entropy: label count differs from batch size");
  if (d_logits) d_logits->resize(logits.rows(), batch);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= logits.rows())
      throw std::out_of_range("identity label " + std::to_string(y) + " outside [0, " +
                              std::to_string(logits.rows()) + ")");
    const double shift = logits.col(b).maxCoeff();
    const Eigen::VectorXd e = (logits.col(b).array() - shift).exp();
    const double sum = e.sum();
    loss += std::log(sum) + shift - logits(y, b);
    if (d_logits) {
      d_logits->col(b) = e / sum;
      (*d_logits)(y, b) -= 1.0;
    }
  }
  if (d_logits) *d_logits /= static_cast<double>(batch);
  return loss / static_cast<double>(batch);
}

namespace {

// weight * mean_b |pred_b - target_b|^2 and its gradient w.r.t. pred.
double squared_error(const MatrixXd& pred, const MatrixXd& target, double weight, MatrixXd* d_pred) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::invalid_argument("regression target shape " + std::to_string(target.rows()) + "x" +
                                std::to_string(target.cols()) + " differs from prediction " +
                                std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()));
  const double n = static_cast<double>(pred.cols());
  const MatrixXd diff = pred - target;
  if (d_pred) *d_pred = (2.0 * weight / n) * diff;
  return weight * diff.squaredNorm() / n;
}

std::vector<int> argmax_columns(const MatrixXd& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    Eigen::Index best = 0;
    logits.col(b).maxCoeff(&best);
    out[static_cast<std::size_t>(b)] = static_cast<int>(best);
  }
  return out;
}

void require_frozen_backbone(const ModelParams& params) {
  if (!params.frozen(Group::Backbone))
    throw ConfigurationError("pair fine-tuning requires the backbone to be frozen");
}

}  // namespace

MultitaskLoss loss_multitask(const EmbeddingBatch& out, std::span<const int> labels, const MatrixXd& pose_targets,
                             const MatrixXd& landmark_targets, const MultitaskWeights& w) {
  MultitaskLoss loss;
  loss.terms.ce = w.identity * cross_entropy(out.logits, labels, &loss.grads.d_logits);
  loss.grads.d_logits *= w.identity;
  loss.terms.pose = squared_error(out.e_p, pose_targets, w.pose, &loss.grads.d_e_p);
  loss.terms.landmark = squared_error(out.e_l, landmark_targets, w.landmark, &loss.grads.d_e_l);
  loss.terms.total = loss.terms.ce + loss.terms.pose + loss.terms.landmark;
  return loss;
}

ReconstructionLoss loss_reconstruction(const PairForward& pair, std::span<const int> labels1,
                                       const ReconstructionWeights& w) {
  ReconstructionLoss loss;
  const MatrixXd& target = pair.first.e_r;
  loss.terms.ce = w.identity * cross_entropy(pair.first.logits, labels1, &loss.d_logits1);
  loss.d_logits1 *= w.identity;
  loss.terms.self = squared_error(pair.self_recon, target, w.self, &loss.d_self);
  loss.terms.cross = squared_error(pair.cross_recon, target, w.cross, &loss.d_cross);
  loss.terms.total = loss.terms.ce + loss.terms.self + loss.terms.cross;
  return loss;
}

L2PairLoss loss_l2_pair(const EmbeddingBatch& first, const EmbeddingBatch& second, std::span<const int> labels1,
                        double ce_weight, double beta) {
  L2PairLoss loss;
  loss.terms.ce = ce_weight * cross_entropy(first.logits, labels1, &loss.d_logits1);
  loss.d_logits1 *= ce_weight;
  loss.terms.l2 = squared_error(first.e_i, second.e_i, beta, &loss.d_e_i1);
  loss.d_e_i2 = -loss.d_e_i1;
  loss.terms.total = loss.terms.ce + loss.terms.l2;
  return loss;
}

Objective multitask_objective(const ModelParams& params, const MatrixXd& images, std::span<const int> labels,
                              const MatrixXd& pose_targets, const MatrixXd& landmark_targets,
                              const MultitaskWeights& w) {
  BackboneTrace trace;
  const MatrixXd rich = forward_rich(params, images, &trace);
  const EmbeddingBatch out = forward_branches(params, rich);
  const MultitaskLoss loss = loss_multitask(out, labels, pose_targets, landmark_targets, w);
  Objective obj{loss.terms, params.zeros_like(), argmax_columns(out.logits)};
  const bool need_rich = !params.frozen(Group::Backbone);
  const MatrixXd d_rich = backward_branches(params, out, loss.grads, obj.grads, need_rich);
  if (need_rich) backward_rich(params, trace, d_rich, obj.grads);
  return obj;
}

Objective reconstruction_objective(const ModelParams& params, const MatrixXd& e_r1, const MatrixXd& e_r2,
                                   std::span<const int> labels1, const ReconstructionWeights& w) {
  require_frozen_backbone(params);
  const PairForward pair = forward_pair_from_rich(params, e_r1, e_r2);
  const ReconstructionLoss loss = loss_reconstruction(pair, labels1, w);
  Objective obj{loss.terms, params.zeros_like(), argmax_columns(pair.first.logits)};

  BranchGrads up1, up2;
  up1.d_logits = loss.d_logits1;
  up1.d_e_i = MatrixXd::Zero(pair.first.e_i.rows(), pair.first.size());
  up1.d_e_n = MatrixXd::Zero(pair.first.e_n.rows(), pair.first.size());
  up2.d_e_i = MatrixXd::Zero(pair.second.e_i.rows(), pair.second.size());

  backward_reconstruct(params, pair.first.e_i, pair.first.e_n, pair.self_trace, loss.d_self, obj.grads,
                       up1.d_e_i, up1.d_e_n);
  backward_reconstruct(params, pair.second.e_i, pair.first.e_n, pair.cross_trace, loss.d_cross, obj.grads,
                       up2.d_e_i, up1.d_e_n);
  backward_branches(params, pair.first, up1, obj.grads, false);
  backward_branches(params, pair.second, up2, obj.grads, false);
  return obj;
}

Objective l2_pair_objective(const ModelParams& params, const MatrixXd& e_r1, const MatrixXd& e_r2,
                            std::span<const int> labels1, double ce_weight, double beta) {
  require_frozen_backbone(params);
  const EmbeddingBatch first = forward_branches(params, e_r1);
  const EmbeddingBatch second = forward_branches(params, e_r2);
  const L2PairLoss loss = loss_l2_pair(first, second, labels1, ce_weight, beta);
  Objective obj{loss.terms, params.zeros_like(), argmax_columns(first.logits)};
  BranchGrads up1, up2;
  up1.d_logits = loss.d_logits1;
  up1.d_e_i = loss.d_e_i1;
  up2.d_e_i = loss.d_e_i2;
  backward_branches(params, first, up1, obj.grads, false);
  backward_branches(params, second, up2, obj.grads, false);
  return obj;
}

}  // namespace pdisent
