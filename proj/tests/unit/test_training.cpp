#include "pdisent/errors.hpp"
#include "pdisent/gradcheck.hpp"
#include "pdisent/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace pdisent;

namespace {

struct Fixture {
  Corpus corpus;
  LabeledSet data;
  ArchConfig arch;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture f;
    GenerationConfig g;
    g.num_identities = 4;
    g.image_size = 8;
    g.yaw_step_deg = 15.0;
    f.corpus = generate_corpus(g, 12);
    const SourceSpec s{&f.corpus, f.corpus.identities(), 0};
    f.data = assemble_labeled_set(std::span(&s, 1));
    f.arch = reduced_arch();
    f.arch.landmark_dim = f.corpus.landmark_dim();
    return f;
  }();
  return f;
}

Stage2Config quick_stage2() {
  Stage2Config c;
  c.epochs = 3;
  c.batch_size = 8;
  c.lr0 = 3e-3;
  return c;
}

ModelParams stage2_params() {
  static const ModelParams p = train_stage2(fixture().data, fixture().arch, quick_stage2()).params;
  return p;
}

Stage3Config quick_stage3(FinetuneLoss loss) {
  Stage3Config c;
  c.loss = loss;
  c.max_epochs = 3;
  c.pairs_per_epoch = 16;
  c.batch_size = 8;
  c.lr = 1e-3;
  return c;
}

}  // namespace

TEST(Schedule, StepDecay) {
  Stage2Config c;
  EXPECT_DOUBLE_EQ(stage2_learning_rate(c, 0), 3e-4);
  EXPECT_DOUBLE_EQ(stage2_learning_rate(c, 4), 3e-4);
  EXPECT_DOUBLE_EQ(stage2_learning_rate(c, 5), 3e-4 * 0.25);
  EXPECT_DOUBLE_EQ(stage2_learning_rate(c, 10), 3e-4 * 0.0625);
  EXPECT_DOUBLE_EQ(stage2_learning_rate(c, 14), 3e-4 * 0.0625);
}

TEST(LabeledSet, MergesSourcesWithOffsets) {
  const Corpus& c = fixture().corpus;
  const std::vector<SourceSpec> sources{{&c, {1, 3}, 0}, {&c, {0}, 10}};
  const LabeledSet set = assemble_labeled_set(sources);
  ASSERT_EQ(set.size(), 3u * 13u);
  for (std::size_t i = 0; i < 13; ++i) EXPECT_EQ(set.labels[i], 0);
  for (std::size_t i = 13; i < 26; ++i) EXPECT_EQ(set.labels[i], 1);
  for (std::size_t i = 26; i < 39; ++i) EXPECT_EQ(set.labels[i], 10);
  EXPECT_LT(set.pose.rowwise().mean().cwiseAbs().maxCoeff(), 1e-9);
  for (int d = 0; d < 7; ++d) {
    const double var = (set.pose.row(d).array() - set.pose.row(d).mean()).square().mean();
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
}

TEST(Stage2, DeterministicAndLearns) {
  const Fixture& f = fixture();
  const TrainResult a = train_stage2(f.data, f.arch, quick_stage2());
  const TrainResult b = train_stage2(f.data, f.arch, quick_stage2());
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.log.epochs.size(), 3u);
  EXPECT_LT(a.log.epochs.back().terms.total, a.log.epochs.front().terms.total);
  EXPECT_NEAR(a.log.epochs[0].terms.total,
              a.log.epochs[0].terms.ce + a.log.epochs[0].terms.pose + a.log.epochs[0].terms.landmark, 1e-9);
  for (Group g : kAllGroups) EXPECT_FALSE(a.params.frozen(g));
}

TEST(Stage2, ReconstructorIsNotTrained) {
  const Fixture& f = fixture();
  const ModelParams init = init_params(f.arch, quick_stage2().seed);
  const TrainResult r = train_stage2(f.data, f.arch, quick_stage2());
  EXPECT_EQ(r.params.group_hash(Group::Reconstructor), init.group_hash(Group::Reconstructor));
  EXPECT_NE(r.params.group_hash(Group::Backbone), init.group_hash(Group::Backbone));
}

TEST(Stage2, DivergenceOnNonFiniteInput) {
  LabeledSet bad = fixture().data;
  bad.images(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train_stage2(bad, fixture().arch, quick_stage2()), DivergenceError);
}

TEST(Stage2, RejectsMismatchedData) {
  ArchConfig arch = fixture().arch;
  arch.image_size = 16;
  EXPECT_THROW(train_stage2(fixture().data, arch, quick_stage2()), ConfigurationError);
  arch = fixture().arch;
  arch.num_classes = 2;
  EXPECT_THROW(train_stage2(fixture().data, arch, quick_stage2()), ConfigurationError);
}

TEST(Stage3, ReconstructionFreezesBackboneAndHeads) {
  const ModelParams s2 = stage2_params();
  const TrainResult r = train_stage3(s2, fixture().data, quick_stage3(FinetuneLoss::Reconstruction), {});
  for (Group g : {Group::Backbone, Group::IdClassifier, Group::PoseHead, Group::LandmarkHead})
    EXPECT_EQ(r.params.group_hash(g), s2.group_hash(g)) << group_name(g);
  for (Group g : {Group::Identity, Group::NonIdentity, Group::Reconstructor})
    EXPECT_NE(r.params.group_hash(g), s2.group_hash(g)) << group_name(g);
  EXPECT_EQ(r.log.epochs.size(), 3u);
  EXPECT_EQ(r.log.best_epoch, 2);
}

TEST(Stage3, L2LeavesReconstructorAlone) {
  const ModelParams s2 = stage2_params();
  const TrainResult r = train_stage3(s2, fixture().data, quick_stage3(FinetuneLoss::L2), {});
  EXPECT_EQ(r.params.group_hash(Group::Reconstructor), s2.group_hash(Group::Reconstructor));
  EXPECT_EQ(r.params.group_hash(Group::Backbone), s2.group_hash(Group::Backbone));
  EXPECT_NE(r.params.group_hash(Group::Identity), s2.group_hash(Group::Identity));
  EXPECT_GT(r.log.epochs[0].terms.l2, 0.0);
}

TEST(Stage3, PatienceOneWithFlatValidationStopsAfterTwoEpochs) {
  auto c = quick_stage3(FinetuneLoss::Reconstruction);
  c.patience = 1;
  c.max_epochs = 10;
  const TrainResult r = train_stage3(stage2_params(), fixture().data, c, [](const ModelParams&) { return 0.5; });
  EXPECT_EQ(r.log.epochs.size(), 2u);
  EXPECT_EQ(r.log.best_epoch, 0);
}

TEST(Stage3, ReturnsBestValidationParameters) {
  auto c = quick_stage3(FinetuneLoss::L2);
  c.patience = 2;
  c.max_epochs = 10;
  const std::vector<double> scores{0.1, 0.5, 0.3, 0.2, 0.9};
  int calls = 0;
  const TrainResult r =
      train_stage3(stage2_params(), fixture().data, c, [&](const ModelParams&) { return scores[calls++]; });
  EXPECT_EQ(r.log.epochs.size(), 4u);
  EXPECT_EQ(r.log.best_epoch, 1);
  c.max_epochs = 2;
  const TrainResult two = train_stage3(stage2_params(), fixture().data, c, {});
  EXPECT_EQ(r.params, two.params);
}

TEST(Stage3, ZeroReconstructionWeightsLogZeroColumns) {
  auto c = quick_stage3(FinetuneLoss::Reconstruction);
  c.weights = {1.0, 0.0, 0.0};
  const TrainResult r = train_stage3(stage2_params(), fixture().data, c, {});
  for (const auto& e : r.log.epochs) {
    EXPECT_EQ(e.terms.self, 0.0);
    EXPECT_EQ(e.terms.cross, 0.0);
    EXPECT_GT(e.terms.ce, 0.0);
  }
}

TEST(Stage3, Deterministic) {
  const auto c = quick_stage3(FinetuneLoss::Reconstruction);
  EXPECT_EQ(train_stage3(stage2_params(), fixture().data, c, {}).params,
            train_stage3(stage2_params(), fixture().data, c, {}).params);
}

TEST(Configs, ValidationErrors) {
  Stage2Config s2;
  s2.lr0 = 0;
  EXPECT_THROW(validate(s2), ConfigurationError);
  s2 = {};
  s2.weights.pose = -1;
  EXPECT_THROW(validate(s2), ConfigurationError);
  Stage3Config s3;
  s3.patience = 0;
  EXPECT_THROW(validate(s3), ConfigurationError);
  s3 = {};
  s3.weights.cross = -0.5;
  EXPECT_THROW(validate(s3), ConfigurationError);
}

TEST(Configs, JsonRoundTrip) {
  Stage3Config c;
  c.loss = FinetuneLoss::L2;
  c.l2_beta = 0.25;
  c.patience = 7;
  nlohmann::json j = c;
  EXPECT_EQ(j.at("loss"), "l2");
  const auto back = j.get<Stage3Config>();
  EXPECT_EQ(back.loss, FinetuneLoss::L2);
  EXPECT_EQ(back.patience, 7);
  EXPECT_EQ(back.l2_beta, 0.25);
  j["loss"] = "triplet";
  EXPECT_THROW(j.get<Stage3Config>(), ConfigurationError);

  Stage2Config s;
  s.epochs = 4;
  s.weights.landmark = 0.0;
  const auto s_back = nlohmann::json(s).get<Stage2Config>();
  EXPECT_EQ(s_back.epochs, 4);
  EXPECT_EQ(s_back.weights.landmark, 0.0);
}

TEST(Log, CsvLayout) {
  auto c = quick_stage3(FinetuneLoss::Reconstruction);
  c.max_epochs = 2;
  const TrainResult r = train_stage3(stage2_params(), fixture().data, c, {});
  const std::string csv = r.log.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,lr,loss_total,loss_ce,loss_self,loss_cross,val_rank1");
  EXPECT_NE(csv.find(",nan\n"), std::string::npos);
  std::size_t lines = 0;
  for (char ch : csv) lines += ch == '\n';
  EXPECT_EQ(lines, 3u);
}

TEST(Accuracy, IdentityAccuracyInRange) {
  const double acc = identity_accuracy(stage2_params(), fixture().data);
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
}
