#include "pdisent/evaluation.hpp"
#include "pdisent/random.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace {

using namespace pdisent;

void BM_Rank1(benchmark::State& state) {
  const auto gallery = static_cast<int>(state.range(0));
  const int probes = 2000, dim = 256;
  Rng rng = make_rng(3);
  const Eigen::MatrixXd g = Eigen::MatrixXd::NullaryExpr(dim, gallery, [&] { return standard_normal(rng); });
  const Eigen::MatrixXd p = Eigen::MatrixXd::NullaryExpr(dim, probes, [&] { return standard_normal(rng); });
  std::vector<int> gl(static_cast<std::size_t>(gallery)), pl(probes);
  std::vector<double> yaw(probes);
  for (int k = 0; k < gallery; ++k) gl[static_cast<std::size_t>(k)] = k / 2;
  for (int k = 0; k < probes; ++k) {
    pl[static_cast<std::size_t>(k)] = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(gallery / 2)));
    yaw[static_cast<std::size_t>(k)] = 1.5 * (2.0 * uniform_unit(rng) - 1.0);
  }
  const Metric metric = state.range(1) ? Metric::Euclidean : Metric::Cosine;
  for (auto _ : state) benchmark::DoNotOptimize(rank1(g, gl, p, pl, yaw, metric));
  state.SetItemsProcessed(state.iterations() * probes);
}
BENCHMARK(BM_Rank1)->Args({40, 0})->Args({400, 0})->Args({400, 1})->Unit(benchmark::kMillisecond);

}  // namespace
