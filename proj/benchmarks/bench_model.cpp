#include <benchmark/benchmark.h>

#include <random>

#include "viewset/model.hpp"
#include "viewset/retrieval.hpp"
#include "viewset/training.hpp"

namespace {

using namespace viewset;

Matrix random_views(std::size_t m, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix x(m, dim);
  for (double& v : x.data()) v = nd(rng);
  return x;
}

ModelConfig bench_config(std::size_t d) {
  ModelConfig c;
  c.dim_in = d;
  c.dim_view = d;
  c.num_blocks = 2;
  c.num_heads = 8;
  c.num_classes = 40;
  c.decoder_hidden = d;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_views(n, n, 1), b = random_views(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

// Inference on one shape: M views, width D.
void BM_Predict(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  ViewSetModel model(bench_config(d), 0);
  const Matrix x = random_views(m, d, 3);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(x));
}
BENCHMARK(BM_Predict)->Args({12, 128})->Args({20, 128})->Args({20, 512})->Unit(benchmark::kMillisecond);

// One optimisation step: forward + backward + AdamW over a batch of view sets.
void BM_TrainStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 128, m = 20;
  ViewSetModel model(bench_config(d), 0);
  std::vector<Matrix> sets;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < batch; ++i) {
    sets.push_back(random_views(m, d, 10 + i));
    labels.push_back(i % 40);
  }
  std::vector<const Matrix*> ptrs;
  for (const auto& s : sets) ptrs.push_back(&s);
  AdamW opt(model.parameters(), 0.9, 0.999, 1e-8, 0.01);
  std::mt19937_64 rng(4);
  for (auto _ : state) {
    opt.zero_grad();
    ag::Var loss = ag::cross_entropy(model.forward(ptrs, Mode::Train, rng), labels);
    ag::backward(loss);
    opt.step(1e-4);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_TrainStep)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_RetrievalL1(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.5, 1.0);
  std::vector<retrieval::ScoredShape> corpus;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = u(rng);
    corpus.push_back({"s" + std::to_string(i), {p, 1 - p}});
  }
  for (auto _ : state) benchmark::DoNotOptimize(retrieval::build_l1(corpus[0], corpus));
}
BENCHMARK(BM_RetrievalL1)->Arg(2000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
