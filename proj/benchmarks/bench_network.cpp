#include "pdisent/losses.hpp"
#include "pdisent/network.hpp"
#include "pdisent/random.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace {

using namespace pdisent;

struct Batch {
  ModelParams params;
  Eigen::MatrixXd images, pose, landmarks;
  std::vector<int> labels;
};

Batch make_batch(int batch) {
  ArchConfig arch;
  arch.num_classes = 250;
  Batch b{init_params(arch, 1), {}, {}, {}, {}};
  Rng rng = make_rng(2);
  b.images = Eigen::MatrixXd::NullaryExpr(arch.image_size * arch.image_size, batch, [&] { return uniform_unit(rng); });
  b.pose = Eigen::MatrixXd::NullaryExpr(arch.pose_dim, batch, [&] { return standard_normal(rng); });
  b.landmarks = Eigen::MatrixXd::NullaryExpr(arch.landmark_dim, batch, [&] { return uniform_unit(rng); });
  for (int k = 0; k < batch; ++k) b.labels.push_back(static_cast<int>(uniform_index(rng, 250)));
  return b;
}

void BM_Forward(benchmark::State& state) {
  const Batch b = make_batch(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward(b.params, b.images));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_MultitaskStep(benchmark::State& state) {
  const Batch b = make_batch(static_cast<int>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(multitask_objective(b.params, b.images, b.labels, b.pose, b.landmarks, MultitaskWeights{}));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MultitaskStep)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_ReconstructionStep(benchmark::State& state) {
  Batch b = make_batch(static_cast<int>(state.range(0)));
  b.params.set_frozen(Group::Backbone, true);
  const Eigen::MatrixXd e_r = forward_rich(b.params, b.images);
  for (auto _ : state)
    benchmark::DoNotOptimize(reconstruction_objective(b.params, e_r, e_r, b.labels, ReconstructionWeights{}));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ReconstructionStep)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
