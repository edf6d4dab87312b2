#include <vector>

#include <benchmark/benchmark.h>

#include "steerlab/model/transformer.hpp"
#include "steerlab/numerics/rng.hpp"
#include "steerlab/probe/probe.hpp"
#include "steerlab/rcn/rcn.hpp"

using namespace steerlab;

namespace {

std::vector<model::TokenId> prompt_of(std::size_t n, std::size_t vocab) {
  std::vector<model::TokenId> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<model::TokenId>((7 * i + 3) % vocab);
  return p;
}

void BM_Forward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const model::ModelConfig cfg{4, d, 4 * d, 4, 256, 64};
  const auto w = model::build_random_model(cfg, 1);
  const auto prompt = prompt_of(32, cfg.vocab_size);
  for (auto _ : state) benchmark::DoNotOptimize(model::forward(w, prompt));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(prompt.size()));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(64)->Arg(128);

void BM_ForwardSteeredWithCapture(benchmark::State& state) {
  const model::ModelConfig cfg{4, 64, 256, 4, 256, 64};
  const auto w = model::build_random_model(cfg, 1);
  const auto prompt = prompt_of(32, cfg.vocab_size);
  model::SteeringSpec spec;
  spec.alpha = 0.5;
  for (std::uint32_t i = 0; i < 50; ++i) spec.entries.push_back({{i % 4, i * 5}, 1.0});
  spec.normalize();
  model::ForwardOptions fo;
  fo.steering = &spec;
  fo.capture_activations = true;
  for (auto _ : state) benchmark::DoNotOptimize(model::forward(w, prompt, fo));
}
BENCHMARK(BM_ForwardSteeredWithCapture);

void BM_MdScores(benchmark::State& state) {
  const auto n_pairs = static_cast<std::size_t>(state.range(0));
  numerics::SeededRng rng(2, 0);
  std::vector<traces::LabeledTrace> ts;
  std::vector<traces::ContrastivePair> pairs;
  for (std::size_t k = 0; k < n_pairs; ++k) {
    for (int j = 0; j < 2; ++j) {
      traces::LabeledTrace lt;
      lt.instance_id = k;
      lt.correct = j == 0;
      auto& t = lt.trace;
      t.n_layers = 4;
      t.d_mlp = 256;
      t.prompt_length = 8;
      t.tokens.assign(16, 0);
      t.activations.resize(16 * 4 * 256);
      for (float& a : t.activations) a = static_cast<float>(rng.normal());
      ts.push_back(std::move(lt));
    }
    pairs.push_back({k, 2 * k, 2 * k + 1});
  }
  for (auto _ : state) benchmark::DoNotOptimize(rcn::md_scores(ts, pairs));
}
BENCHMARK(BM_MdScores)->Arg(8)->Arg(64);

probe::FeatureMatrix random_matrix(std::size_t n, std::size_t width) {
  numerics::SeededRng rng(3, 0);
  probe::FeatureMatrix x;
  x.n_samples = n;
  x.n_features = width;
  for (std::size_t f = 0; f < width; ++f) x.feature_index.push_back(f);
  for (std::size_t i = 0; i < n * width; ++i) x.values.push_back(rng.normal());
  for (std::size_t i = 0; i < n; ++i) x.labels.push_back(static_cast<int>(i % 2));
  return x;
}

void BM_FStatistic(benchmark::State& state) {
  const auto x = random_matrix(256, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(probe::f_statistic(x));
}
BENCHMARK(BM_FStatistic)->Arg(256)->Arg(4096);

void BM_Auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  numerics::SeededRng rng(4, 0);
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = static_cast<double>(rng.uniform_int(100));
    y[i] = static_cast<int>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(probe::auroc(s, y));
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(100000);

}  // namespace
BENCHMARK_MAIN();
