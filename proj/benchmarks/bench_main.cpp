#include <benchmark/benchmark.h>

#include <vector>

#include "zoforge/objectives.hpp"
#include "zoforge/param_store.hpp"
#include "zoforge/train.hpp"
#include "zoforge/trajectory.hpp"

namespace {

using namespace zoforge;

ParamStore flat_store(std::size_t dim) {
  return ParamStore({GroupDesc{"theta", 0, dim}}, std::vector<double>(dim, 0.5));
}

void BM_PerturbInPlace(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  auto store = flat_store(dim);
  const NoiseSpec noise{Seed{7}, ZDist::gaussian};
  for (auto _ : state) {
    perturb_in_place(store, 1e-3, noise);
    benchmark::DoNotOptimize(store.values().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_PerturbInPlace)->RangeMultiplier(8)->Range(1 << 10, 1 << 20);

void BM_SpsaStep(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const QuadraticObjective q(low_rank_quadratic(dim, dim / 4));
  RunConfig run;
  run.master = Seed{7};
  run.steps = 1u << 30;
  OptimizerConfig opt;
  opt.lr.eta0 = 1e-3;
  auto theta = init_params(q, Seed{1}, 1.0);
  MezoState mezo(run, opt, q, theta);
  for (auto _ : state) benchmark::DoNotOptimize(mezo_step(theta, q, mezo, run));
}
BENCHMARK(BM_SpsaStep)->RangeMultiplier(8)->Range(1 << 8, 1 << 17);

Trajectory quadratic_trajectory(std::uint64_t steps, GradPrecision precision, ParamStore& theta0) {
  const QuadraticObjective q(low_rank_quadratic(64, 8));
  RunConfig run;
  run.master = Seed{7};
  run.steps = steps;
  run.precision = precision;
  OptimizerConfig opt;
  opt.lr.eta0 = 1e-2;
  theta0 = init_params(q, Seed{1}, 1.0);
  return train(run, opt, q, theta0).trajectory;
}

void BM_Encode(benchmark::State& state) {
  ParamStore theta0;
  const auto tr = quadratic_trajectory(static_cast<std::uint64_t>(state.range(0)), GradPrecision::bf16, theta0);
  for (auto _ : state) benchmark::DoNotOptimize(encode(tr));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_Encode)->Arg(1000)->Arg(20000);

void BM_Decode(benchmark::State& state) {
  ParamStore theta0;
  const auto bytes = encode(quadratic_trajectory(static_cast<std::uint64_t>(state.range(0)), GradPrecision::bf16, theta0));
  for (auto _ : state) benchmark::DoNotOptimize(decode(bytes));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_Decode)->Arg(1000)->Arg(20000);

void BM_Replay(benchmark::State& state) {
  ParamStore theta0;
  const auto tr = quadratic_trajectory(static_cast<std::uint64_t>(state.range(0)), GradPrecision::f64, theta0);
  for (auto _ : state) benchmark::DoNotOptimize(replay(tr, theta0));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_Replay)->Arg(1000)->Arg(5000);

}  // namespace
BENCHMARK_MAIN();
