#include <benchmark/benchmark.h>

#include <glcal/glcal.hpp>

namespace {

struct Batch {
  glcal::Matrix z;
  glcal::Labels labels;
};

Batch make_batch(int b, int n) {
  const auto s = glcal::synth_sample(glcal::SyntheticSpec::axis_aligned(n, 1.0, 1.0, 5), static_cast<std::size_t>(b));
  return {s.data.logits_double(), s.data.labels()};
}

// Args: batch size, classes.
void BM_Forward(benchmark::State& state) {
  const int b = static_cast<int>(state.range(0));
  const int n = static_cast<int>(state.range(1));
  const auto batch = make_batch(b, n);
  const std::vector<int> hidden{glcal::default_hidden_width(n)};
  const auto net = glcal::glorot_init(n, hidden, 1);
  for (auto _ : state) benchmark::DoNotOptimize(glcal::forward(net, batch.z));
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_Forward)->Args({1024, 10})->Args({1024, 100})->Args({40000, 5});

void BM_ForwardBackward(benchmark::State& state) {
  const int b = static_cast<int>(state.range(0));
  const int n = static_cast<int>(state.range(1));
  const auto batch = make_batch(b, n);
  const std::vector<int> hidden{glcal::default_hidden_width(n)};
  const auto net = glcal::glorot_init(n, hidden, 1);
  for (auto _ : state) {
    const auto tr = glcal::forward(net, batch.z);
    benchmark::DoNotOptimize(glcal::backward(net, tr, batch.labels));
  }
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_ForwardBackward)->Args({1024, 10})->Args({1024, 100})->Args({40000, 5});

void BM_FullBatchEpoch(benchmark::State& state) {
  const auto batch = make_batch(static_cast<int>(state.range(0)), 5);
  const glcal::LogitDataset data(batch.z.cast<float>(), batch.labels, 5);
  const std::vector<int> hidden{17};
  glcal::TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.patience = 1;
  const auto init = glcal::transparent_init(5, hidden, 0);
  for (auto _ : state) benchmark::DoNotOptimize(glcal::fit(init, data, data, cfg));
}
BENCHMARK(BM_FullBatchEpoch)->Arg(40000)->Unit(benchmark::kMillisecond);

}  // namespace
