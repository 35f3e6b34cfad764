#include <benchmark/benchmark.h>

#include <vector>

#include "steersig/agreement.hpp"
#include "steersig/forest.hpp"
#include "steersig/model.hpp"
#include "steersig/rng.hpp"
#include "steersig/steering.hpp"

using namespace steersig;

namespace {

std::vector<double> gaussian(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

void BM_ForwardStep(benchmark::State& state) {
  ModelConfig config;
  const Model model = init_random(config);
  std::vector<TokenId> context;
  for (std::int64_t i = 0; i < state.range(0); ++i) context.push_back(static_cast<TokenId>(i % 100));
  for (auto _ : state) benchmark::DoNotOptimize(forward_step(model, context));
}
BENCHMARK(BM_ForwardStep)->Arg(1)->Arg(16)->Arg(48);

void BM_SteerRotate(benchmark::State& state) {
  Rng rng(3);
  const auto h = gaussian(rng, static_cast<std::size_t>(state.range(0)));
  const auto s = gaussian(rng, h.size());
  for (auto _ : state) benchmark::DoNotOptimize(steer_rotate(h, s, 120.0));
}
BENCHMARK(BM_SteerRotate)->Arg(32)->Arg(4096);

void BM_FitForest(benchmark::State& state) {
  Rng rng(7);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  FeatureMatrix x(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = gaussian(rng, 46);
    y[i] = x[i][1] - 0.5 * x[i][10] + 0.1 * rng.normal();
  }
  ForestParams params;
  params.n_trees = 50;
  params.seed = 1;
  for (auto _ : state) benchmark::DoNotOptimize(fit_forest(x, y, params));
}
BENCHMARK(BM_FitForest)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);

void BM_Icc(benchmark::State& state) {
  Rng rng(11);
  std::vector<std::vector<double>> rows;
  for (std::int64_t i = 0; i < state.range(0); ++i) {
    const double t = rng.normal();
    rows.push_back({t + 0.3 * rng.normal(), t + 0.3 * rng.normal()});
  }
  const auto m = RatingsMatrix::from_rows(rows);
  for (auto _ : state) benchmark::DoNotOptimize(icc_two_way(m));
}
BENCHMARK(BM_Icc)->Arg(72)->Arg(1000);

}  // namespace
