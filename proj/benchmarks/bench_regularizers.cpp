#include <benchmark/benchmark.h>

#include "robust/regularizers.hpp"
#include "robust/trainer.hpp"

using namespace robust;

namespace {

MlpClassifier bench_model(std::size_t width) {
  Rng rng(1, "bench");
  return MlpClassifier({2, width, 3}, rng);
}

const Tensor kPoint = Tensor::vector({0.3, -0.7});

void BM_Jr(benchmark::State& state) {
  const MlpClassifier model = bench_model(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(jr(model, kPoint));
}
BENCHMARK(BM_Jr)->Arg(16)->Arg(64);

void BM_WeightedJr(benchmark::State& state) {
  const MlpClassifier model = bench_model(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(weighted_jr(model, kPoint, 0.1));
}
BENCHMARK(BM_WeightedJr)->Arg(16)->Arg(64);

void BM_Vat(benchmark::State& state) {
  const MlpClassifier model = bench_model(static_cast<std::size_t>(state.range(0)));
  PerturbationConfig cfg;
  Rng rng(2, "noise");
  for (auto _ : state) benchmark::DoNotOptimize(vat(model, kPoint, cfg, rng));
}
BENCHMARK(BM_Vat)->Arg(16)->Arg(64);

void BM_Pdm(benchmark::State& state) {
  const MlpClassifier model = bench_model(static_cast<std::size_t>(state.range(0)));
  PerturbationConfig cfg;
  Rng rng(3, "noise");
  for (auto _ : state) benchmark::DoNotOptimize(pdm(model, kPoint, cfg, rng));
}
BENCHMARK(BM_Pdm)->Arg(16)->Arg(64);

void BM_TatStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.dataset.n_classes = 3;
  cfg.hidden = {static_cast<std::size_t>(state.range(0))};
  Rng data_rng = data_stream(cfg.dataset, 1);
  const Dataset data = generate(cfg.dataset, data_rng);
  TrainState train_state(make_model(cfg, 1), cfg, 1);
  const std::span<const Example> batch(data.train.data(), 16);
  for (auto _ : state) benchmark::DoNotOptimize(tat_train_step(train_state, batch, cfg));
}
BENCHMARK(BM_TatStep)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
