#include <benchmark/benchmark.h>

#include <glcal/glcal.hpp>

namespace {

glcal::Prediction make_prediction(int b, int n) {
  const auto s = glcal::synth_sample(glcal::SyntheticSpec::axis_aligned(n, 1.0, 1.0, 3), static_cast<std::size_t>(b));
  return {glcal::softmax_rows(s.data.logits_double()), s.data.labels()};
}

void BM_Top1Ks(benchmark::State& state) {
  const auto p = make_prediction(static_cast<int>(state.range(0)), 10);
  for (auto _ : state) benchmark::DoNotOptimize(glcal::top1_ks(p));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Top1Ks)->Arg(1000)->Arg(10000)->Arg(100000);

void BM_WithinTopKs(benchmark::State& state) {
  const auto p = make_prediction(static_cast<int>(state.range(0)), 10);
  for (auto _ : state) benchmark::DoNotOptimize(glcal::within_topr_ks(p, 5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_WithinTopKs)->Arg(10000)->Arg(100000);

void BM_ClasswiseEce(benchmark::State& state) {
  const auto p = make_prediction(10000, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(glcal::classwise_ece(p, 15));
}
BENCHMARK(BM_ClasswiseEce)->Arg(10)->Arg(100);

void BM_FullReport(benchmark::State& state) {
  const auto p = make_prediction(static_cast<int>(state.range(0)), 10);
  for (auto _ : state) benchmark::DoNotOptimize(glcal::evaluate(p));
}
BENCHMARK(BM_FullReport)->Arg(10000);

}  // namespace
