#include "pdisent/gradcheck.hpp"

#include <gtest/gtest.h>

using namespace pdisent;

namespace {

// L(w) = sum over unfrozen tensors of sum_k c_k w_k^2 with c_k = 1 + k mod 3.
double quadratic(const ModelParams& p) {
  double sum = 0;
  for (Group g : kAllGroups) {
    if (p.frozen(g)) continue;
    for (const auto& t : p.group(g).tensors)
      for (std::size_t k = 0; k < t.size(); ++k) sum += (1.0 + k % 3) * t.data[k] * t.data[k];
  }
  return sum;
}

ModelParams quadratic_grad(const ModelParams& p) {
  ModelParams g = p.zeros_like();
  for (Group grp : kAllGroups) {
    if (p.frozen(grp)) continue;
    auto& dst = g.group(grp).tensors;
    const auto& src = p.group(grp).tensors;
    for (std::size_t i = 0; i < src.size(); ++i)
      for (std::size_t k = 0; k < src[i].size(); ++k) dst[i].data[k] = 2.0 * (1.0 + k % 3) * src[i].data[k];
  }
  return g;
}

}  // namespace

TEST(RelativeError, Definition) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-8), 1e-8 / 1e-6);
}

TEST(GradientCheck, ExactGradientPassesWrongGradientFails) {
  ModelParams p = init_params(reduced_arch(), 1);
  p.set_frozen(Group::Backbone, true);
  GradCheckOptions opts;
  opts.max_per_tensor = 30;
  const GradCheckReport good = gradient_check(quadratic, p, quadratic_grad(p), opts);
  EXPECT_LT(good.max_rel, 1e-6);
  for (const auto& t : good.tensors) {
    EXPECT_EQ(t.tensor.rfind("backbone", 0), std::string::npos) << "frozen tensor was checked";
    EXPECT_LE(t.checked, 30u);
  }
  EXPECT_GT(good.checked, 0u);

  ModelParams wrong = quadratic_grad(p);
  wrong.tensor("identity.weight").data[0] += 1.0;
  opts.max_per_tensor = 1000000;
  const GradCheckReport bad = gradient_check(quadratic, p, wrong, opts);
  EXPECT_GT(bad.max_rel, 1e-3);
  EXPECT_EQ(bad.worst_tensor, "identity.weight");
}

TEST(GradientCheck, TrainingLossesBelowThreshold) {
  const auto checks = check_training_losses(3);
  ASSERT_EQ(checks.size(), 3u);
  for (const auto& c : checks) EXPECT_LT(c.report.max_rel, 1e-4) << c.loss;
}
