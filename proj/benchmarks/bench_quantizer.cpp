#include <benchmark/benchmark.h>

#include "fedem/quantizer.hpp"

namespace {

Eigen::VectorXd bench_vector(int dim) {
  fedem::Rng rng(7);
  Eigen::VectorXd x(dim);
  for (int i = 0; i < dim; ++i) x[i] = rng.normal();
  return x;
}

void BM_QuantizeIdentity(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const auto spec = fedem::QuantizerSpec::identity();
  const Eigen::VectorXd x = bench_vector(dim);
  fedem::Rng rng(1);
  for (auto _ : state)
    benchmark::DoNotOptimize(fedem::quantize(spec, x, rng));
  state.SetItemsProcessed(state.iterations() * dim);
}

void BM_QuantizeDithering(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const auto spec = fedem::QuantizerSpec::dithering(2.0, 4);
  const Eigen::VectorXd x = bench_vector(dim);
  fedem::Rng rng(1);
  for (auto _ : state)
    benchmark::DoNotOptimize(fedem::quantize(spec, x, rng));
  state.SetItemsProcessed(state.iterations() * dim);
}

void BM_QuantizeBlock(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const auto spec = fedem::QuantizerSpec::uniform_blocks(2, 4, dim);
  const Eigen::VectorXd x = bench_vector(dim);
  fedem::Rng rng(1);
  for (auto _ : state)
    benchmark::DoNotOptimize(fedem::quantize(spec, x, rng));
  state.SetItemsProcessed(state.iterations() * dim);
}

}  // namespace

BENCHMARK(BM_QuantizeIdentity)->Arg(64)->Arg(1024);
BENCHMARK(BM_QuantizeDithering)->Arg(64)->Arg(1024);
BENCHMARK(BM_QuantizeBlock)->Arg(64)->Arg(1024);
