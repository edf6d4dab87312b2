#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "steerlab/gate/gate.hpp"
#include "steerlab/model/transformer.hpp"
#include "steerlab/probe/probe.hpp"
#include "steerlab/rcn/rcn.hpp"
#include "steerlab/tasks/tasks.hpp"
#include "steerlab/traces/traces.hpp"
#include "steerlab/trajectory/trajectory.hpp"

namespace steerlab::pipeline {

using model::SteeringSpec;
using model::Weights;
using tasks::TaskInstance;

// Contrastive data for identification: sampled traces plus matched pairs.
struct ContrastiveData {
  std::vector<traces::LabeledTrace> traces;
  std::vector<traces::ContrastivePair> pairs;
};

// Throws DataError naming the instances without both outcomes when no pair
// can be formed.
ContrastiveData generate_contrastive(const Weights& w, std::span<const TaskInstance> instances,
                                     const traces::SampleConfig& cfg,
                                     std::optional<traces::Balance> balance, std::size_t threads);

struct Identification {
  rcn::NeuronScoreTable table;
  rcn::Selection selection;
  SteeringSpec spec;
};

Identification identify(const ContrastiveData& data, const rcn::SelectionConfig& sel, double alpha,
                        rcn::ValueRule rule = rcn::ValueRule::raw);

// Header "layer,neuron,S,mu_pos,mu_neg,polarity_kept,selected".
std::string score_table_csv(const rcn::NeuronScoreTable& table, const rcn::Selection& sel,
                            rcn::PolarityMode mode = rcn::PolarityMode::pair_averaged);

struct InstanceOutcome {
  std::uint64_t id = 0;
  bool baseline_correct = false;
  bool steered = false;
  bool correct = false;
};

struct EvalReport {
  std::string label;
  double alpha = 0.0;
  std::size_t k = 0;
  std::size_t n_correct = 0;
  std::size_t n_baseline_correct = 0;
  std::size_t n_steered = 0;
  std::vector<InstanceOutcome> outcomes;  // instance order

  std::size_t n() const noexcept { return outcomes.size(); }
  double accuracy() const noexcept;
  double baseline_accuracy() const noexcept;
};

struct EvalOptions {
  std::size_t max_new_tokens = 1;
  model::SteerScope scope = model::SteerScope::all_positions;
  std::size_t threads = 1;
};

// Greedy decoding of every instance, unsteered and (where steer_mask allows,
// all instances when null) with `spec`.
EvalReport evaluate(const Weights& w, std::span<const TaskInstance> instances,
                    const SteeringSpec* spec, const std::vector<std::uint8_t>* steer_mask,
                    const EvalOptions& opts, std::string label = {});

// Greedy unsteered correctness per instance.
std::vector<std::uint8_t> baseline_correct(const Weights& w, std::span<const TaskInstance> instances,
                                           const EvalOptions& opts);

// Steer exactly where the base model is wrong.
std::vector<std::uint8_t> oracle_gate_mask(const Weights& w, std::span<const TaskInstance> instances,
                                           const EvalOptions& opts);

// Unsteered prompt-only activation trace.
model::ActivationTrace prompt_trace(const Weights& w, const TaskInstance& inst);

struct GateArtifacts {
  gate::GateModel model;
  gate::GateReport report;
};

// Labels from greedy base-model behaviour (1 = incorrect). Features selected
// on the training part only.
GateArtifacts train_gate_on(const Weights& w, std::span<const TaskInstance> train,
                            std::span<const TaskInstance> val, const gate::GateConfig& cfg,
                            std::size_t threads);

std::vector<double> gate_probabilities(const Weights& w, const gate::GateModel& g,
                                       std::span<const TaskInstance> instances, std::size_t threads);
std::vector<std::uint8_t> gate_mask(const Weights& w, const gate::GateModel& g,
                                    std::span<const TaskInstance> instances, std::size_t threads);

probe::CvResult probe_from_traces(std::span<const traces::LabeledTrace> traces,
                                  const probe::CvConfig& cfg);

struct TrajectoryRow {
  std::uint64_t id = 0;
  std::string condition;  // "unsteered" / "steered"
  bool correct = false;
  trajectory::TrajectoryFeatures features;
};

struct TrajectoryResult {
  std::vector<TrajectoryRow> rows;
  std::vector<trajectory::NeuronShift> shifts;  // steered minus unsteered, selected neurons
};

TrajectoryResult trajectory_study(const Weights& w, std::span<const TaskInstance> instances,
                                  const SteeringSpec& spec, const trajectory::TrajectoryConfig& tc,
                                  std::size_t max_new_tokens);

// Header "id,condition,correct,mean_magnitude,mean_angle,tokens".
std::string trajectory_csv(std::span<const TrajectoryRow> rows);

// Ablation arms sharing one split, one identification and one gate:
//   full     md scores, polarity filter, gate
//   wo_md    probe weights instead of md scores, polarity filter, gate
//   wo_as    md scores, no polarity filter, gate
//   wo_ai    md scores, polarity filter, always steer
//   random   magnitude-matched random neurons, always steer
struct AblationSetup {
  std::size_t k = 50;
  double alpha = 0.2;
  rcn::ValueRule value_rule = rcn::ValueRule::raw;
  rcn::PolarityMode polarity_mode = rcn::PolarityMode::pair_averaged;
  std::uint64_t random_seed = 0;
};

struct AblationInputs {
  const ContrastiveData* data = nullptr;
  const probe::ProbeModel* probe = nullptr;
  const std::vector<std::uint8_t>* gate_mask = nullptr;  // over test instances
};

std::vector<EvalReport> run_ablation(const Weights& w, std::span<const TaskInstance> test,
                                     const AblationInputs& in, const AblationSetup& setup,
                                     const EvalOptions& opts);

struct SweepRow {
  double alpha = 0.0;
  std::size_t k = 0;
  double accuracy = 0.0;
  std::size_t n_steered = 0;
  bool shortfall = false;
};

// Accuracy on `test` over the (alpha, K) grid; K values above the model
// size are capped and deduplicated.
std::vector<SweepRow> sweep(const Weights& w, std::span<const TaskInstance> test,
                            const rcn::NeuronScoreTable& table, std::span<const double> alphas,
                            std::span<const std::size_t> ks, const rcn::SelectionConfig& base,
                            rcn::ValueRule rule, const std::vector<std::uint8_t>* gate,
                            const EvalOptions& opts);

// Header "alpha,k,accuracy,n_steered,shortfall".
std::string sweep_csv(std::span<const SweepRow> rows);
// Header "label,alpha,k,n,correct,accuracy,baseline_accuracy,n_steered".
std::string summary_csv(std::span<const EvalReport> reports);
// Header "label,id,baseline_correct,steered,correct".
std::string outcomes_csv(std::span<const EvalReport> reports);

}  // namespace steerlab::pipeline
