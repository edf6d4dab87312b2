#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "steerlab/model/config.hpp"
#include "steerlab/model/trace.hpp"

namespace steerlab::traces {

using model::ActivationTrace;
using model::TokenId;

// One input x_i with its reference answer y_i. The oracle is exact token
// match: a generation is correct iff its suffix starts with `answer`.
struct TaskInstance {
  std::uint64_t id = 0;
  std::vector<TokenId> prompt;
  std::vector<TokenId> answer;
  std::string variant;  // "clean", "corrupt", "arith", ... (informational)

  bool judge(std::span<const TokenId> generated) const;

  bool operator==(const TaskInstance&) const = default;
};

struct LabeledTrace {
  std::uint64_t instance_id = 0;
  std::uint64_t seed = 0;
  bool correct = false;
  ActivationTrace trace;

  // Extracted answer: the generated suffix of the trace.
  std::span<const TokenId> answer() const noexcept {
    return std::span<const TokenId>(trace.tokens).subspan(trace.prompt_length);
  }

  bool operator==(const LabeledTrace&) const = default;
};

// Indices into the trace list the pair was built from.
struct ContrastivePair {
  std::uint64_t instance_id = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;

  bool operator==(const ContrastivePair&) const = default;
};

enum class TokenSpan { all, prompt, generated };

// Per-neuron mean activation over a token span, n_layers x d_mlp.
struct TraceSummary {
  std::size_t n_layers = 0;
  std::size_t d_mlp = 0;
  std::size_t n_tokens = 0;
  std::vector<double> means;

  double mean(std::size_t layer, std::size_t neuron) const noexcept {
    return means[layer * d_mlp + neuron];
  }
};

struct SampleConfig {
  std::size_t n = 8;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t max_new_tokens = 1;
  bool capture_hidden = false;
};

// Seed recorded for trace k of an instance; traces of one instance get
// increasing seeds so seed order equals sampling order.
std::uint64_t trace_seed(std::uint64_t base_seed, std::uint64_t instance_id, std::size_t k);

// n traces sampled from the model, each labeled by the instance oracle.
// Errors from generation are rethrown with the instance id attached.
std::vector<LabeledTrace> sample_traces(const model::Weights& w, const TaskInstance& inst,
                                        const SampleConfig& cfg);

struct Balance {
  std::size_t positives = 4;
  std::size_t negatives = 4;
};

// Per instance, positives and negatives sorted by seed are matched in order,
// min(#pos, #neg) pairs. With a balance, instances that do not have exactly
// the requested counts are dropped. Output ordered by instance id.
std::vector<ContrastivePair> build_pairs(std::span<const LabeledTrace> traces,
                                         std::optional<Balance> balance = std::nullopt);

TraceSummary trace_mean(const ActivationTrace& t, TokenSpan span = TokenSpan::all);

}  // namespace steerlab::traces
