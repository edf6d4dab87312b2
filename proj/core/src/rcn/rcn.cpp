#include "steerlab/rcn/rcn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "json.hpp"
#include "steerlab/error.hpp"
#include "steerlab/io/binary.hpp"
#include "steerlab/numerics/rng.hpp"

namespace steerlab::rcn {

using nlohmann::json;
using traces::LabeledTrace;
using traces::TraceSummary;

NeuronScoreTable md_scores(std::span<const LabeledTrace> traces,
                           std::span<const traces::ContrastivePair> pairs,
                           traces::TokenSpan span) {
  if (pairs.empty()) throw InvalidArgument("md_scores: no contrastive pairs");
  for (const auto& p : pairs) {
    if (p.positive >= traces.size() || p.negative >= traces.size()) {
      throw InvalidArgument(
          fmt::format("md_scores: pair for instance {} indexes past {} traces", p.instance_id,
                      traces.size()));
    }
  }
  const auto& first = traces[pairs.front().positive].trace;
  const std::size_t L = first.n_layers;
  const std::size_t D = first.d_mlp;

  // One summary per distinct trace; a trace can appear in several pairs.
  std::map<std::size_t, TraceSummary> cache;
  const auto summary = [&](std::size_t idx) -> const TraceSummary& {
    auto it = cache.find(idx);
    if (it != cache.end()) return it->second;
    const auto& t = traces[idx].trace;
    if (t.n_layers != L || t.d_mlp != D) {
      throw InvalidArgument(fmt::format(
          "md_scores: trace {} has shape {}x{}, expected {}x{}", idx, t.n_layers, t.d_mlp, L, D));
    }
    return cache.emplace(idx, traces::trace_mean(t, span)).first->second;
  };

  NeuronScoreTable out;
  out.n_layers = L;
  out.d_mlp = D;
  out.n_pairs = pairs.size();
  out.score.assign(L * D, 0.0);
  out.mean_pos.assign(L * D, 0.0);
  out.mean_neg.assign(L * D, 0.0);
  out.flips_all.assign(L * D, 1);
  for (const auto& p : pairs) {
    const auto& pos = summary(p.positive).means;
    const auto& neg = summary(p.negative).means;
    for (std::size_t j = 0; j < L * D; ++j) {
      out.score[j] += pos[j] - neg[j];
      out.mean_pos[j] += pos[j];
      out.mean_neg[j] += neg[j];
      if (!(pos[j] * neg[j] < 0.0)) out.flips_all[j] = 0;
    }
  }
  const double n = static_cast<double>(pairs.size());
  for (std::size_t j = 0; j < L * D; ++j) {
    out.score[j] /= n;
    out.mean_pos[j] /= n;
    out.mean_neg[j] /= n;
  }
  return out;
}

std::vector<NeuronId> polarity_filter(const NeuronScoreTable& table, PolarityMode mode) {
  std::vector<NeuronId> kept;
  for (std::size_t j = 0; j < table.size(); ++j) {
    const bool flip = mode == PolarityMode::pair_averaged
                          ? table.mean_pos[j] * table.mean_neg[j] < 0.0
                          : table.flips_all[j] != 0;
    if (flip) kept.push_back(NeuronId::from_flat(j, table.d_mlp));
  }
  return kept;
}

std::vector<NeuronId> all_neurons(const NeuronScoreTable& table) {
  std::vector<NeuronId> out(table.size());
  for (std::size_t j = 0; j < table.size(); ++j) out[j] = NeuronId::from_flat(j, table.d_mlp);
  return out;
}

Selection select_top_k(std::span<const NeuronId> candidates, std::span<const double> importance,
                       std::size_t d_mlp, std::size_t k) {
  if (k == 0) throw InvalidArgument("select_top_k: K must be >= 1");
  std::vector<NeuronId> ranked(candidates.begin(), candidates.end());
  for (const auto& id : ranked) {
    if (id.neuron >= d_mlp || id.flat(d_mlp) >= importance.size()) {
      throw InvalidArgument(fmt::format("select_top_k: candidate (layer {}, neuron {}) out of range",
                                        id.layer, id.neuron));
    }
  }
  std::sort(ranked.begin(), ranked.end(), [&](const NeuronId& a, const NeuronId& b) {
    const double ma = std::abs(importance[a.flat(d_mlp)]);
    const double mb = std::abs(importance[b.flat(d_mlp)]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  Selection sel;
  sel.requested = k;
  sel.candidates = ranked.size();
  sel.shortfall = ranked.size() < k;
  if (ranked.size() > k) ranked.resize(k);
  sel.neurons = std::move(ranked);
  return sel;
}

Selection select_top_k(std::span<const NeuronId> candidates, const NeuronScoreTable& table,
                       std::size_t k) {
  return select_top_k(candidates, table.score, table.d_mlp, k);
}

Selection select_neurons(const NeuronScoreTable& table, const SelectionConfig& cfg) {
  const auto candidates = cfg.polarity_filter ? polarity_filter(table, cfg.mode) : all_neurons(table);
  return select_top_k(candidates, table, cfg.k);
}

std::string_view to_string(ValueRule r) noexcept {
  switch (r) {
    case ValueRule::raw: return "raw";
    case ValueRule::sign_only: return "sign";
    case ValueRule::unit_norm_layer: return "unit-layer";
  }
  return "raw";
}

ValueRule value_rule_from_string(std::string_view s) {
  if (s == "raw") return ValueRule::raw;
  if (s == "sign") return ValueRule::sign_only;
  if (s == "unit-layer") return ValueRule::unit_norm_layer;
  throw InvalidArgument(fmt::format("unknown steering value rule \"{}\"", s));
}

SteeringSpec build_steering(std::span<const NeuronId> selected, const NeuronScoreTable& table,
                            double alpha, ValueRule rule) {
  if (selected.empty()) throw InvalidArgument("build_steering: empty selection");
  SteeringSpec spec;
  spec.alpha = alpha;
  spec.provenance = model::Provenance::md;
  for (const auto& id : selected) {
    if (id.layer >= table.n_layers || id.neuron >= table.d_mlp) {
      throw InvalidArgument(fmt::format("build_steering: (layer {}, neuron {}) out of range",
                                        id.layer, id.neuron));
    }
    double v = table.s(id);
    if (rule == ValueRule::sign_only) v = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    spec.entries.push_back({id, v});
  }
  spec.normalize();
  if (rule == ValueRule::unit_norm_layer) {
    std::vector<double> sq(table.n_layers, 0.0);
    for (const auto& e : spec.entries) sq[e.id.layer] += e.value * e.value;
    for (auto& e : spec.entries) {
      if (sq[e.id.layer] > 0.0) e.value /= std::sqrt(sq[e.id.layer]);
    }
  }
  return spec;
}

SteeringSpec random_steering(const model::ModelConfig& cfg, std::size_t k, std::uint64_t seed,
                             const NeuronScoreTable& table, double alpha) {
  const std::size_t total = cfg.n_neurons();
  if (k == 0 || k > total) {
    throw InvalidArgument(
        fmt::format("random_steering: K = {} must be in [1, {}] (L x d_mlp)", k, total));
  }
  if (table.n_layers != cfg.n_layers || table.d_mlp != cfg.d_mlp) {
    throw InvalidArgument("random_steering: score table shape does not match the model");
  }
  auto md = select_top_k(polarity_filter(table), table, k);
  if (md.neurons.empty()) md = select_top_k(all_neurons(table), table, k);
  double magnitude = 0.0;
  for (const auto& id : md.neurons) magnitude += std::abs(table.s(id));
  magnitude /= static_cast<double>(md.neurons.size());

  numerics::SeededRng rng(seed, numerics::stream_id_of("random_steering"));
  std::vector<std::size_t> pool(total);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  // Partial Fisher-Yates: the first k slots become the sample.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(total - i));
    std::swap(pool[i], pool[j]);
  }
  SteeringSpec spec;
  spec.alpha = alpha;
  spec.provenance = model::Provenance::random;
  for (std::size_t i = 0; i < k; ++i) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    spec.entries.push_back({NeuronId::from_flat(pool[i], cfg.d_mlp), sign * magnitude});
  }
  spec.normalize();
  return spec;
}

ProbeSteering probe_steering(const probe::ProbeModel& probe, std::size_t d_mlp, std::size_t k,
                             double alpha) {
  if (probe.weights.size() != probe.feature_indices.size()) {
    throw InvalidArgument("probe_steering: weight and feature index counts differ");
  }
  std::vector<NeuronId> nonzero;
  std::size_t max_flat = 0;
  for (std::size_t j = 0; j < probe.weights.size(); ++j) {
    max_flat = std::max(max_flat, probe.feature_indices[j]);
    if (probe.weights[j] != 0.0) nonzero.push_back(NeuronId::from_flat(probe.feature_indices[j], d_mlp));
  }
  if (nonzero.empty()) throw DataError("probe_steering: probe has no nonzero weights");
  std::vector<double> importance(max_flat + 1, 0.0);
  for (std::size_t j = 0; j < probe.weights.size(); ++j) {
    importance[probe.feature_indices[j]] = probe.weights[j];
  }
  const auto sel = select_top_k(nonzero, importance, d_mlp, k);
  ProbeSteering out;
  out.shortfall = sel.shortfall;
  out.spec.alpha = alpha;
  out.spec.provenance = model::Provenance::probe;
  for (const auto& id : sel.neurons) out.spec.entries.push_back({id, importance[id.flat(d_mlp)]});
  out.spec.normalize();
  return out;
}

std::string steering_to_json(const SteeringSpec& spec) {
  json j;
  j["format"] = kSteeringFormat;
  j["version"] = kSteeringVersion;
  j["alpha"] = spec.alpha;
  j["provenance"] = std::string(model::to_string(spec.provenance));
  j["entries"] = json::array();
  for (const auto& e : spec.entries) {
    j["entries"].push_back({{"layer", e.id.layer}, {"neuron", e.id.neuron}, {"value", e.value}});
  }
  return j.dump(2) + "\n";
}

SteeringSpec steering_from_json(std::string_view text, const model::ModelConfig* cfg) {
  SteeringSpec spec;
  try {
    const json j = json::parse(text);
    io::check_header("steering", j.at("format").get<std::string>(), kSteeringFormat,
                     j.at("version").get<std::uint32_t>(), kSteeringVersion);
    spec.alpha = j.at("alpha").get<double>();
    spec.provenance = model::provenance_from_string(j.at("provenance").get<std::string>());
    for (const auto& e : j.at("entries")) {
      spec.entries.push_back({{e.at("layer").get<std::uint32_t>(), e.at("neuron").get<std::uint32_t>()},
                              e.at("value").get<double>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("malformed steering spec: {}", e.what()));
  }
  spec.normalize();
  if (cfg != nullptr) spec.validate(*cfg);
  return spec;
}

void save_steering(const std::filesystem::path& path, const SteeringSpec& spec) {
  io::write_text(path, steering_to_json(spec));
}

SteeringSpec load_steering(const std::filesystem::path& path, const model::ModelConfig* cfg) {
  return steering_from_json(io::read_text(path), cfg);
}

}  // namespace steerlab::rcn
