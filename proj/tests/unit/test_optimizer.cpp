#include "pdisent/errors.hpp"
#include "pdisent/gradcheck.hpp"
#include "pdisent/optimizer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace pdisent;

namespace {

ModelParams filled_grads(const ModelParams& p, double value) {
  ModelParams g = p.zeros_like();
  for (Group grp : kAllGroups)
    for (auto& t : g.group(grp).tensors) std::fill(t.data.begin(), t.data.end(), value);
  return g;
}

}  // namespace

TEST(Adam, MatchesReferenceRecurrence) {
  const ModelParams start = init_params(reduced_arch(), 1);
  ModelParams p = start;
  AdamOptimizer adam;
  const double lr = 0.01;
  const std::vector<double> grads{0.5, -2.0, 0.1};
  double m = 0, v = 0, x = start.tensor("identity.weight").data[3];
  for (std::size_t t = 0; t < grads.size(); ++t) {
    adam.step(p, filled_grads(p, grads[t]), lr);
    m = 0.9 * m + 0.1 * grads[t];
    v = 0.999 * v + 0.001 * grads[t] * grads[t];
    const double mh = m / (1 - std::pow(0.9, t + 1)), vh = v / (1 - std::pow(0.999, t + 1));
    x -= lr * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_NEAR(p.tensor("identity.weight").data[3], x, 1e-14);
  EXPECT_EQ(adam.step_count(), 3);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ModelParams p = init_params(reduced_arch(), 2);
  const ModelParams before = p;
  AdamOptimizer adam;
  adam.step(p, filled_grads(p, -3.0), 1e-3);
  const auto& a = p.tensor("classifier.weight").data;
  const auto& b = before.tensor("classifier.weight").data;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i] - b[i], 1e-3, 1e-10);
}

TEST(Adam, FrozenGroupsUntouchedAndStateless) {
  ModelParams p = init_params(reduced_arch(), 3);
  p.set_frozen(Group::Backbone, true);
  const ModelParams before = p;
  AdamOptimizer adam;
  adam.step(p, filled_grads(p, 1.0), 0.1);
  EXPECT_EQ(p.group(Group::Backbone), before.group(Group::Backbone));
  EXPECT_NE(p.group(Group::Identity), before.group(Group::Identity));
  EXPECT_FALSE(adam.has_state("backbone.fc.weight"));
  EXPECT_TRUE(adam.has_state("identity.weight"));
}

TEST(Adam, NonFiniteGradientThrowsBeforeUpdating) {
  ModelParams p = init_params(reduced_arch(), 4);
  const ModelParams before = p;
  ModelParams g = filled_grads(p, 1.0);
  g.tensor("reconstructor.fc2.bias").data[0] = std::numeric_limits<double>::quiet_NaN();
  AdamOptimizer adam;
  try {
    adam.step(p, g, 0.1);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("reconstructor.fc2.bias"), std::string::npos);
  }
  EXPECT_EQ(p, before);
}
