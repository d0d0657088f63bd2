#include "pdisent/errors.hpp"
#include "pdisent/gradcheck.hpp"
#include "pdisent/losses.hpp"
#include "pdisent/random.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pdisent;
using Eigen::MatrixXd;

namespace {

MatrixXd gaussian(int rows, int cols, Rng& rng, double scale = 1.0) {
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

double naive_ce(const MatrixXd& logits, const std::vector<int>& labels) {
  double sum = 0;
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    double z = 0;
    for (Eigen::Index k = 0; k < logits.rows(); ++k) z += std::exp(logits(k, b));
    sum += -(logits(labels[b], b) - std::log(z));
  }
  return sum / logits.cols();
}

}  // namespace

TEST(CrossEntropy, MatchesNaiveFormulaAndGradient) {
  Rng rng = make_rng(1);
  const MatrixXd logits = gaussian(5, 4, rng);
  const std::vector<int> labels{0, 3, 4, 3};
  MatrixXd grad;
  const double ce = cross_entropy(logits, labels, &grad);
  EXPECT_NEAR(ce, naive_ce(logits, labels), 1e-12);
  for (Eigen::Index b = 0; b < 4; ++b) {
    const Eigen::VectorXd e = logits.col(b).array().exp();
    Eigen::VectorXd expect = e / e.sum();
    expect(labels[b]) -= 1.0;
    EXPECT_LT((grad.col(b) - expect / 4.0).norm(), 1e-12);
  }
}

TEST(CrossEntropy, StableForHugeLogits) {
  MatrixXd logits(3, 1);
  logits << 1000.0, 999.0, -1000.0;
  const std::vector<int> label{1};
  const double ce = cross_entropy(logits, label, nullptr);
  EXPECT_TRUE(std::isfinite(ce));
  EXPECT_NEAR(ce, 1.0 + std::log1p(std::exp(-1.0)), 1e-12);
}

TEST(CrossEntropy, UniformLogitsGiveLogClasses) {
  const MatrixXd logits = MatrixXd::Zero(7, 2);
  const std::vector<int> labels{2, 6};
  EXPECT_NEAR(cross_entropy(logits, labels, nullptr), std::log(7.0), 1e-14);
}

TEST(CrossEntropy, RejectsBadLabels) {
  const MatrixXd logits = MatrixXd::Zero(3, 1);
  const std::vector<int> high{3}, negative{-1}, too_many{0, 1};
  EXPECT_THROW(cross_entropy(logits, high, nullptr), std::out_of_range);
  EXPECT_THROW(cross_entropy(logits, negative, nullptr), std::out_of_range);
  EXPECT_THROW(cross_entropy(logits, too_many, nullptr), std::invalid_argument);
}

TEST(MultitaskLoss, WeightedTerms) {
  Rng rng = make_rng(2);
  EmbeddingBatch out;
  out.logits = gaussian(4, 3, rng);
  out.e_p = gaussian(7, 3, rng);
  out.e_l = gaussian(6, 3, rng);
  const MatrixXd yp = gaussian(7, 3, rng), yl = gaussian(6, 3, rng);
  const std::vector<int> labels{0, 1, 2};
  const MultitaskLoss loss = loss_multitask(out, labels, yp, yl, {2.0, 0.5, 3.0});
  EXPECT_NEAR(loss.terms.ce, 2.0 * naive_ce(out.logits, labels), 1e-12);
  EXPECT_NEAR(loss.terms.pose, 0.5 * (yp - out.e_p).squaredNorm() / 3.0, 1e-12);
  EXPECT_NEAR(loss.terms.landmark, 3.0 * (yl - out.e_l).squaredNorm() / 3.0, 1e-12);
  EXPECT_NEAR(loss.terms.total, loss.terms.ce + loss.terms.pose + loss.terms.landmark, 1e-12);
  EXPECT_LT((loss.grads.d_e_p - 0.5 * 2.0 * (out.e_p - yp) / 3.0).norm(), 1e-12);

  const MultitaskLoss ce_only = loss_multitask(out, labels, yp, yl, {1.0, 0.0, 0.0});
  EXPECT_EQ(ce_only.terms.pose, 0.0);
  EXPECT_EQ(ce_only.terms.landmark, 0.0);
  EXPECT_NEAR(ce_only.terms.total, naive_ce(out.logits, labels), 1e-12);
}

TEST(ReconstructionLoss, TermsAndZeroWeights) {
  const ArchConfig arch = reduced_arch();
  const ModelParams p = init_params(arch, 3);
  Rng rng = make_rng(3);
  const MatrixXd r1 = gaussian(arch.rich_dim, 4, rng), r2 = gaussian(arch.rich_dim, 4, rng);
  const PairForward pf = forward_pair_from_rich(p, r1, r2);
  const std::vector<int> labels{0, 1, 2, 3};
  const ReconstructionLoss loss = loss_reconstruction(pf, labels, {1.0, 2.0, 0.5});
  EXPECT_NEAR(loss.terms.self, 2.0 * (pf.self_recon - r1).squaredNorm() / 4.0, 1e-12);
  EXPECT_NEAR(loss.terms.cross, 0.5 * (pf.cross_recon - r1).squaredNorm() / 4.0, 1e-12);
  EXPECT_NEAR(loss.terms.ce, naive_ce(pf.first.logits, labels), 1e-12);

  const ReconstructionLoss ce_only = loss_reconstruction(pf, labels, {1.0, 0.0, 0.0});
  EXPECT_EQ(ce_only.terms.self, 0.0);
  EXPECT_EQ(ce_only.terms.cross, 0.0);
  EXPECT_NEAR(ce_only.terms.total, ce_only.terms.ce, 0.0);
}

TEST(L2PairLoss, DistanceTerm) {
  const ArchConfig arch = reduced_arch();
  const ModelParams p = init_params(arch, 3);
  Rng rng = make_rng(4);
  const MatrixXd r1 = gaussian(arch.rich_dim, 3, rng), r2 = gaussian(arch.rich_dim, 3, rng);
  const EmbeddingBatch a = forward_branches(p, r1), b = forward_branches(p, r2);
  const std::vector<int> labels{0, 0, 1};
  const L2PairLoss loss = loss_l2_pair(a, b, labels, 1.0, 2.0);
  EXPECT_NEAR(loss.terms.l2, 2.0 * (a.e_i - b.e_i).squaredNorm() / 3.0, 1e-12);
  EXPECT_LT((loss.d_e_i1 + loss.d_e_i2).norm(), 1e-12);
  // identical embeddings: no distance penalty
  const L2PairLoss same = loss_l2_pair(a, a, labels, 1.0, 2.0);
  EXPECT_EQ(same.terms.l2, 0.0);
}

TEST(Objectives, PairObjectivesRequireFrozenBackbone) {
  const ArchConfig arch = reduced_arch();
  ModelParams p = init_params(arch, 1);
  const MatrixXd r = MatrixXd::Ones(arch.rich_dim, 2);
  const std::vector<int> labels{0, 1};
  EXPECT_THROW(reconstruction_objective(p, r, r, labels, {}), ConfigurationError);
  EXPECT_THROW(l2_pair_objective(p, r, r, labels, 1.0, 1.0), ConfigurationError);
  p.set_frozen(Group::Backbone, true);
  EXPECT_NO_THROW(reconstruction_objective(p, r, r, labels, {}));
}

TEST(Objectives, FrozenGroupsGetZeroGradientsAndPredictionsAreArgmax) {
  const ArchConfig arch = reduced_arch();
  ModelParams p = init_params(arch, 2);
  for (Group g : {Group::Backbone, Group::IdClassifier, Group::PoseHead, Group::LandmarkHead})
    p.set_frozen(g, true);
  Rng rng = make_rng(5);
  const MatrixXd r1 = gaussian(arch.rich_dim, 3, rng), r2 = gaussian(arch.rich_dim, 3, rng);
  const std::vector<int> labels{0, 1, 2};
  const Objective obj = reconstruction_objective(p, r1, r2, labels, {});
  for (Group g : {Group::Backbone, Group::IdClassifier, Group::PoseHead, Group::LandmarkHead})
    for (const auto& t : obj.grads.group(g).tensors)
      for (double v : t.data) EXPECT_EQ(v, 0.0);
  double touched = 0;
  for (const auto& t : obj.grads.group(Group::Identity).tensors) touched += t.vector().squaredNorm();
  EXPECT_GT(touched, 0.0);
  const EmbeddingBatch out = forward_branches(p, r1);
  ASSERT_EQ(obj.predicted.size(), 3u);
  for (int b = 0; b < 3; ++b) {
    Eigen::Index arg;
    out.logits.col(b).maxCoeff(&arg);
    EXPECT_EQ(obj.predicted[b], arg);
  }
}

TEST(Objectives, AnalyticGradientsMatchFiniteDifferences) {
  GradCheckOptions opts;
  opts.max_per_tensor = 40;
  for (const auto& check : check_training_losses(11, opts)) {
    EXPECT_GT(check.report.checked, 0u) << check.loss;
    EXPECT_LT(check.report.max_rel, 1e-4) << check.loss << " worst tensor " << check.report.worst_tensor;
  }
}
