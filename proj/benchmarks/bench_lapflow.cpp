#include <benchmark/benchmark.h>

#include "lapflow/analysis.hpp"
#include "lapflow/flowtrain.hpp"
#include "lapflow/model.hpp"
#include "lapflow/odesolve.hpp"
#include "lapflow/pyramid.hpp"
#include "lapflow/sampler.hpp"

using namespace lapflow;

namespace {

ModelConfig desk_model(std::size_t K, std::size_t depth) {
  ModelConfig c;
  c.scales = K;
  c.width = 64;
  c.heads = 4;
  c.depth = depth;
  c.patch = 2;
  c.image_size = 16;
  return c;
}

FlowState<float> full_state(const ModelConfig& c, Rng& rng) {
  FlowState<float> s;
  s.t = 0.75;
  for (std::size_t k = 0; k < c.scales; ++k) {
    const std::size_t side = c.image_size >> k;
    s.levels.push_back(rng.normal_tensor<float>({c.channels, side, side}));
  }
  return s;
}

void BM_Decompose(benchmark::State& state) {
  const std::size_t n = state.range(0);
  Rng rng(1);
  const auto x = rng.normal_tensor<float>({3, n, n});
  for (auto _ : state) benchmark::DoNotOptimize(decompose(x, 3));
  state.SetItemsProcessed(state.iterations() * x.size());
}
BENCHMARK(BM_Decompose)->Arg(64)->Arg(256);

void BM_Reconstruct(benchmark::State& state) {
  const std::size_t n = state.range(0);
  Rng rng(1);
  const auto p = decompose(rng.normal_tensor<float>({3, n, n}), 3);
  for (auto _ : state) benchmark::DoNotOptimize(reconstruct(p));
}
BENCHMARK(BM_Reconstruct)->Arg(64)->Arg(256);

// Args: scales, depth, first active scale.
void BM_Velocity(benchmark::State& state) {
  const ModelConfig c = desk_model(state.range(0), state.range(1));
  MoTModel<float> m(c);
  Rng rng(2);
  m.randomize_all(rng, 0.02);
  FlowState<float> s = full_state(c, rng);
  s.first = state.range(2);
  for (std::size_t k = 0; k < s.first; ++k) s.levels[k] = Tensor<float>();
  for (auto _ : state) benchmark::DoNotOptimize(m.velocity(s));
}
BENCHMARK(BM_Velocity)->Args({1, 8, 0})->Args({2, 4, 0})->Args({2, 4, 1})->Unit(benchmark::kMicrosecond);

void BM_TrainStep(benchmark::State& state) {
  const std::size_t K = state.range(0);
  const ModelConfig c = desk_model(K, K == 1 ? 8 : 4);
  MoTModel<float> m(c);
  Rng rng(3);
  m.init(rng);
  TrainConfig tc;
  tc.batch_size = 16;
  Trainer trainer(m, std::make_shared<LapFlowObjective>(ScheduleSpec::uniform(K)), tc, 3);
  std::vector<Tensor<float>> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(rng.normal_tensor<float>({1, 16, 16}));
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(batch));
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_SampleDopri5(benchmark::State& state) {
  const std::size_t K = state.range(0);
  const ModelConfig c = desk_model(K, K == 1 ? 8 : 4);
  MoTModel<float> m(c);
  Rng rng(4);
  m.randomize_all(rng, 0.02);
  const ScheduleSpec spec = ScheduleSpec::uniform(K);
  SolverConfig solver;
  std::size_t nfe = 0;
  for (auto _ : state) {
    Rng r = rng.substream(nfe);
    const auto noise = noise_pyramid<float>(r, {1, 16, 16}, K);
    const auto out = lapflow_sample(m, spec, noise, {}, solver);
    nfe += out.nfe();
  }
  state.counters["nfe"] = benchmark::Counter(double(nfe), benchmark::Counter::kAvgIterations);
}
BENCHMARK(BM_SampleDopri5)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_Dopri5Exp(benchmark::State& state) {
  const OdeFn f = [](double, const std::vector<double>& y, std::vector<double>& dy) { dy = y; };
  SolverConfig cfg;
  cfg.rtol = cfg.atol = 1e-7;
  for (auto _ : state) benchmark::DoNotOptimize(odeint(f, 0.0, 1.0, {1.0}, cfg));
}
BENCHMARK(BM_Dopri5Exp);

void BM_SlicedWasserstein(benchmark::State& state) {
  Rng rng(5);
  std::vector<Tensor<float>> a, b;
  for (int i = 0; i < state.range(0); ++i) {
    a.push_back(rng.normal_tensor<float>({1, 16, 16}));
    b.push_back(rng.normal_tensor<float>({1, 16, 16}));
  }
  for (auto _ : state) benchmark::DoNotOptimize(sliced_wasserstein(a, b, 128, rng));
}
BENCHMARK(BM_SlicedWasserstein)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_Spectrum(benchmark::State& state) {
  Rng rng(6);
  std::vector<Tensor<float>> a;
  for (int i = 0; i < 256; ++i) a.push_back(rng.normal_tensor<float>({1, 64, 64}));
  for (auto _ : state) benchmark::DoNotOptimize(spectrum_stats(a));
}
BENCHMARK(BM_Spectrum)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
