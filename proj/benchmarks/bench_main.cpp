#include <benchmark/benchmark.h>

#include <optional>

#include "icc/debias.hpp"
#include "icc/discrete.hpp"
#include "icc/errors.hpp"
#include "icc/estimators.hpp"
#include "icc/hypothesis.hpp"
#include "icc/linear_dgp.hpp"
#include "icc/monotone.hpp"

using namespace icc;

static void BM_EstimateIcc(benchmark::State& state) {
  Dataset d = sample_linear(spec_sweep(), state.range(0), {1, 0});
  for (auto _ : state) benchmark::DoNotOptimize(estimate_icc(d, 1).beta);
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_EstimateIcc)->RangeMultiplier(4)->Range(1000, 64000)->Complexity();

static void BM_RankTest(benchmark::State& state) {
  Dataset d = sample_linear(spec_sweep(), 4000, {2, 0});
  for (auto _ : state) benchmark::DoNotOptimize(rank_test(d, 1, static_cast<int>(state.range(0)), {3, 0}).p_value);
}
BENCHMARK(BM_RankTest)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);

static void BM_ExactMomentModel(benchmark::State& state) {
  discrete::GeneratorConfig c;
  c.n_eta = 2;
  c.n_groups = 2;
  c.n_within = 3;
  c.n_w = 4;
  c.y_depends_on_w = false;
  c.treatment_independent_of_control = true;
  Rng rng({4, 0});
  const VectorXd pi = (VectorXd(2) << -1, 1).finished();
  std::optional<discrete::JointTable> joint;
  for (int attempt = 0; attempt < 50 && !joint; ++attempt) {
    discrete::JointTable j(discrete::random_model(rng, c));
    try {
      ExactMomentModel probe(j, pi);
      joint.emplace(j);
    } catch (const IdentificationError&) {
    }
  }
  if (!joint) {
    state.SkipWithError("no identified model");
    return;
  }
  for (auto _ : state) {
    ExactMomentModel em(*joint, pi);
    benchmark::DoNotOptimize(em.theta0());
  }
}
BENCHMARK(BM_ExactMomentModel);

static void BM_EstimateVt(benchmark::State& state) {
  Dataset d = sample_monotone(MonotoneDGP{}, state.range(0), {5, 0});
  auto cf = estimate_control(d, 1);
  for (auto _ : state) benchmark::DoNotOptimize(estimate_vt(d, cf).v.data());
}
BENCHMARK(BM_EstimateVt)->Arg(10000)->Arg(40000)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
