#include "steerlab/traces/traces.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>

#include "steerlab/error.hpp"
#include "steerlab/model/transformer.hpp"
#include "steerlab/numerics/rng.hpp"

namespace steerlab::traces {

bool TaskInstance::judge(std::span<const TokenId> generated) const {
  if (generated.size() < answer.size()) return false;
  return std::equal(answer.begin(), answer.end(), generated.begin());
}

std::uint64_t trace_seed(std::uint64_t base_seed, std::uint64_t instance_id, std::size_t k) {
  // Top bit cleared so seed + k never wraps for any realistic k.
  const std::uint64_t base =
      numerics::splitmix64(base_seed ^ numerics::splitmix64(instance_id)) >> 1;
  return base + k;
}

std::vector<LabeledTrace> sample_traces(const model::Weights& w, const TaskInstance& inst,
                                        const SampleConfig& cfg) {
  if (cfg.n == 0) throw InvalidArgument("sample_traces: n must be >= 1");
  if (inst.prompt.empty()) {
    throw InvalidArgument(fmt::format("instance {} has an empty prompt", inst.id));
  }
  std::vector<LabeledTrace> out;
  out.reserve(cfg.n);
  for (std::size_t k = 0; k < cfg.n; ++k) {
    model::DecodeConfig dc;
    dc.temperature = cfg.temperature;
    dc.max_new_tokens = cfg.max_new_tokens;
    dc.seed = trace_seed(cfg.seed, inst.id, k);
    dc.stream = numerics::stream_id_of("sample");
    dc.capture = true;
    dc.capture_hidden = cfg.capture_hidden;
    model::Generation gen;
    try {
      gen = model::generate(w, inst.prompt, dc);
    } catch (const std::exception& e) {
      throw DataError(fmt::format("sampling failed for instance {}: {}", inst.id, e.what()));
    }
    LabeledTrace lt;
    lt.instance_id = inst.id;
    lt.seed = dc.seed;
    lt.correct = inst.judge(gen.generated());
    lt.trace = std::move(gen.trace);
    out.push_back(std::move(lt));
  }
  return out;
}

std::vector<ContrastivePair> build_pairs(std::span<const LabeledTrace> traces,
                                         std::optional<Balance> balance) {
  struct Sides {
    std::vector<std::size_t> pos, neg;
  };
  std::map<std::uint64_t, Sides> by_instance;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    auto& s = by_instance[traces[i].instance_id];
    (traces[i].correct ? s.pos : s.neg).push_back(i);
  }
  const auto by_seed = [&](std::size_t a, std::size_t b) {
    return traces[a].seed < traces[b].seed;
  };
  std::vector<ContrastivePair> pairs;
  for (auto& [id, s] : by_instance) {
    if (balance && (s.pos.size() != balance->positives || s.neg.size() != balance->negatives)) {
      continue;
    }
    std::stable_sort(s.pos.begin(), s.pos.end(), by_seed);
    std::stable_sort(s.neg.begin(), s.neg.end(), by_seed);
    const std::size_t n = std::min(s.pos.size(), s.neg.size());
    for (std::size_t k = 0; k < n; ++k) pairs.push_back({id, s.pos[k], s.neg[k]});
  }
  return pairs;
}

TraceSummary trace_mean(const ActivationTrace& t, TokenSpan span) {
  std::size_t begin = 0;
  std::size_t end = t.n_tokens();
  if (span == TokenSpan::prompt) end = t.prompt_length;
  if (span == TokenSpan::generated) begin = t.prompt_length;
  if (end <= begin) throw InvalidArgument("trace_mean: the selected token span is empty");

  TraceSummary s;
  s.n_layers = t.n_layers;
  s.d_mlp = t.d_mlp;
  s.n_tokens = end - begin;
  const std::size_t width = t.n_layers * t.d_mlp;
  s.means.assign(width, 0.0);
  for (std::size_t tok = begin; tok < end; ++tok) {
    const float* row = t.activations.data() + tok * width;
    for (std::size_t j = 0; j < width; ++j) s.means[j] += row[j];
  }
  const double denom = static_cast<double>(s.n_tokens);
  for (double& m : s.means) m /= denom;
  return s;
}

}  // namespace steerlab::traces
