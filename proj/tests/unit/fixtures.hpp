#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "steerlab/model/trace.hpp"
#include "steerlab/numerics/rng.hpp"
#include "steerlab/traces/traces.hpp"

namespace steerlab::fixtures {

// Activations drawn uniformly from [-1, 1]; a fraction of entries is forced to
// exactly zero so sign tests hit their boundary.
inline model::ActivationTrace random_trace(numerics::SeededRng& rng, std::size_t n_layers,
                                           std::size_t d_mlp, std::size_t n_tokens,
                                           std::size_t prompt_length, std::size_t d_model = 0,
                                           double zero_fraction = 0.0) {
  model::ActivationTrace t;
  t.n_layers = n_layers;
  t.d_mlp = d_mlp;
  t.d_model = d_model;
  t.prompt_length = prompt_length;
  for (std::size_t i = 0; i < n_tokens; ++i) t.tokens.push_back(static_cast<model::TokenId>(i % 7));
  t.activations.resize(n_tokens * n_layers * d_mlp);
  for (float& a : t.activations) {
    a = rng.uniform() < zero_fraction ? 0.0f : static_cast<float>(2.0 * rng.uniform() - 1.0);
  }
  if (d_model > 0) {
    t.hidden.resize(n_tokens * (n_layers + 1) * d_model);
    for (float& h : t.hidden) h = static_cast<float>(rng.normal());
  }
  return t;
}

struct PairFixture {
  std::vector<traces::LabeledTrace> traces;
  std::vector<traces::ContrastivePair> pairs;
};

// n_pairs (positive, negative) pairs over freshly drawn traces of varying length.
inline PairFixture random_pairs(std::uint64_t seed, std::size_t n_pairs, std::size_t n_layers,
                                std::size_t d_mlp, double zero_fraction = 0.0) {
  numerics::SeededRng rng(seed, 7);
  PairFixture f;
  for (std::size_t k = 0; k < n_pairs; ++k) {
    for (int pos = 1; pos >= 0; --pos) {
      traces::LabeledTrace lt;
      lt.instance_id = k;
      lt.seed = 2 * k + static_cast<std::uint64_t>(1 - pos);
      lt.correct = pos == 1;
      const std::size_t n_tokens = 2 + rng.uniform_int(5);
      lt.trace = random_trace(rng, n_layers, d_mlp, n_tokens, 1, 0, zero_fraction);
      f.traces.push_back(std::move(lt));
    }
    f.pairs.push_back({k, 2 * k, 2 * k + 1});
  }
  return f;
}

}  // namespace steerlab::fixtures
