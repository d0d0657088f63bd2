#include "pdisent/morphable_shape.hpp"
#include "pdisent/random.hpp"
#include "pdisent/renderer.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace pdisent;

void BM_InstantiateShape(benchmark::State& state) {
  MorphableModelConfig cfg;
  cfg.num_vertices = static_cast<int>(state.range(0));
  const auto model = MorphableModel::generate(cfg);
  FaceParams p = model.neutral_params();
  p.rotation.yaw = 0.4;
  for (auto _ : state) benchmark::DoNotOptimize(instantiate_shape(model, p));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_InstantiateShape)->Arg(500)->Arg(1500)->Arg(4000);

void BM_RenderSample(benchmark::State& state) {
  const auto model = MorphableModel::generate(MorphableModelConfig{});
  const TextureModel tex = TextureModel::generate(model, 3);
  FaceParams p = model.neutral_params();
  const int size = static_cast<int>(state.range(0));
  p.scale = 0.4 * size;
  p.rotation.yaw = 0.7;
  for (auto _ : state) benchmark::DoNotOptimize(render_sample(model, tex, p, size));
}
BENCHMARK(BM_RenderSample)->Arg(32)->Arg(64);

void BM_RenderPoints(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  Rng rng = make_rng(1);
  Points2D pts(n, 2);
  Eigen::VectorXd depth(n);
  Texture tex;
  tex.intensity.resize(n);
  for (Eigen::Index v = 0; v < n; ++v) {
    pts(v, 0) = 32.0 * uniform_unit(rng);
    pts(v, 1) = 32.0 * uniform_unit(rng);
    depth(v) = uniform_unit(rng);
    tex.intensity(v) = uniform_unit(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(render(pts, depth, tex, 32));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RenderPoints)->Arg(1500)->Arg(6000);

}  // namespace
