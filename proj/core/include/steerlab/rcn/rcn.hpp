#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "steerlab/model/config.hpp"
#include "steerlab/model/steering.hpp"
#include "steerlab/probe/probe.hpp"
#include "steerlab/traces/traces.hpp"

namespace steerlab::rcn {

using model::NeuronId;
using model::SteeringSpec;

// Mean-difference scores over contrastive pairs, n_layers x d_mlp.
//   score     = (1/N) sum_k [mu(p_k+) - mu(p_k-)]
//   mean_pos  = (1/N) sum_k mu(p_k+)
//   mean_neg  = (1/N) sum_k mu(p_k-)
//   flips_all = 1 iff mu(p_k+) * mu(p_k-) < 0 for every pair k
struct NeuronScoreTable {
  std::size_t n_layers = 0;
  std::size_t d_mlp = 0;
  std::size_t n_pairs = 0;
  std::vector<double> score;
  std::vector<double> mean_pos;
  std::vector<double> mean_neg;
  std::vector<std::uint8_t> flips_all;

  std::size_t size() const noexcept { return score.size(); }
  double s(NeuronId id) const noexcept { return score[id.flat(d_mlp)]; }
};

NeuronScoreTable md_scores(std::span<const traces::LabeledTrace> traces,
                           std::span<const traces::ContrastivePair> pairs,
                           traces::TokenSpan span = traces::TokenSpan::all);

enum class PolarityMode {
  pair_averaged,  // E[mu+] * E[mu-] < 0
  every_pair,     // mu+ * mu- < 0 in each pair
};

// Neurons passing the sign-flip test, in (layer, neuron) order.
std::vector<NeuronId> polarity_filter(const NeuronScoreTable& table,
                                      PolarityMode mode = PolarityMode::pair_averaged);

// Every neuron of the table, in (layer, neuron) order.
std::vector<NeuronId> all_neurons(const NeuronScoreTable& table);

struct SelectionConfig {
  std::size_t k = 50;
  bool polarity_filter = true;
  PolarityMode mode = PolarityMode::pair_averaged;
};

struct Selection {
  std::vector<NeuronId> neurons;  // ranked: |S| desc, layer asc, neuron asc
  std::size_t requested = 0;
  std::size_t candidates = 0;
  bool shortfall = false;
};

// Ranks by |importance| with the fixed tie-break. `importance` is indexed by
// flat neuron id.
Selection select_top_k(std::span<const NeuronId> candidates, std::span<const double> importance,
                       std::size_t d_mlp, std::size_t k);
Selection select_top_k(std::span<const NeuronId> candidates, const NeuronScoreTable& table,
                       std::size_t k);

// Polarity filter (optional) followed by top-K.
Selection select_neurons(const NeuronScoreTable& table, const SelectionConfig& cfg);

enum class ValueRule {
  raw,             // S(l,i)
  sign_only,       // sign(S(l,i))
  unit_norm_layer, // S'_l rescaled to unit L2 norm within each layer
};

std::string_view to_string(ValueRule r) noexcept;
ValueRule value_rule_from_string(std::string_view s);

SteeringSpec build_steering(std::span<const NeuronId> selected, const NeuronScoreTable& table,
                            double alpha, ValueRule rule = ValueRule::raw);

// K distinct neurons drawn uniformly; values are a random sign times the mean
// |S| of the md top-K (polarity-filtered; unfiltered if nothing passes).
SteeringSpec random_steering(const model::ModelConfig& cfg, std::size_t k, std::uint64_t seed,
                             const NeuronScoreTable& table, double alpha);

struct ProbeSteering {
  SteeringSpec spec;
  bool shortfall = false;
};

// Top-K neurons by |probe weight| (nonzero weights only); entry value is the
// weight itself.
ProbeSteering probe_steering(const probe::ProbeModel& probe, std::size_t d_mlp, std::size_t k,
                             double alpha);

inline constexpr char kSteeringFormat[] = "steerlab.steering";
inline constexpr std::uint32_t kSteeringVersion = 1;

// {format, version, alpha, provenance, entries:[{layer, neuron, value}]}
std::string steering_to_json(const SteeringSpec& spec);
// Parses and normalizes; bounds are checked when a config is given.
SteeringSpec steering_from_json(std::string_view text, const model::ModelConfig* cfg = nullptr);

void save_steering(const std::filesystem::path& path, const SteeringSpec& spec);
SteeringSpec load_steering(const std::filesystem::path& path,
                           const model::ModelConfig* cfg = nullptr);

}  // namespace steerlab::rcn
