#include "pipeline.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "steerlab/error.hpp"
#include "steerlab/numerics/parallel.hpp"

namespace steerlab::pipeline {

ContrastiveData generate_contrastive(const Weights& w, std::span<const TaskInstance> instances,
                                     const traces::SampleConfig& cfg,
                                     std::optional<traces::Balance> balance, std::size_t threads) {
  if (instances.empty()) throw DataError("no instances to sample contrastive traces from");
  std::vector<std::vector<traces::LabeledTrace>> per(instances.size());
  numerics::parallel_for(instances.size(), threads, [&](std::size_t i) {
    per[i] = traces::sample_traces(w, instances[i], cfg);
  });
  ContrastiveData out;
  for (auto& v : per) {
    for (auto& t : v) out.traces.push_back(std::move(t));
  }
  out.pairs = traces::build_pairs(out.traces, balance);
  if (out.pairs.empty()) {
    std::vector<std::string> lacking;
    for (const auto& v : per) {
      std::size_t pos = 0;
      for (const auto& t : v) pos += t.correct ? 1 : 0;
      const char* what = pos == 0 ? "all incorrect" : pos == v.size() ? "all correct" : "unbalanced";
      if (!v.empty()) lacking.push_back(fmt::format("{} ({})", v.front().instance_id, what));
    }
    throw DataError(fmt::format("no contrastive pairs: instances lacking contrast: {}",
                                fmt::join(lacking, ", ")));
  }
  return out;
}

Identification identify(const ContrastiveData& data, const rcn::SelectionConfig& sel, double alpha,
                        rcn::ValueRule rule) {
  Identification id;
  id.table = rcn::md_scores(data.traces, data.pairs);
  id.selection = rcn::select_neurons(id.table, sel);
  id.spec = rcn::build_steering(id.selection.neurons, id.table, alpha, rule);
  return id;
}

std::string score_table_csv(const rcn::NeuronScoreTable& table, const rcn::Selection& sel,
                            rcn::PolarityMode mode) {
  std::vector<std::uint8_t> kept(table.size(), 0), chosen(table.size(), 0);
  for (const auto& id : rcn::polarity_filter(table, mode)) kept[id.flat(table.d_mlp)] = 1;
  for (const auto& id : sel.neurons) chosen[id.flat(table.d_mlp)] = 1;
  std::string out = "layer,neuron,S,mu_pos,mu_neg,polarity_kept,selected\n";
  for (std::size_t f = 0; f < table.size(); ++f) {
    out += fmt::format("{},{},{},{},{},{},{}\n", f / table.d_mlp, f % table.d_mlp, table.score[f],
                       table.mean_pos[f], table.mean_neg[f], kept[f], chosen[f]);
  }
  return out;
}

double EvalReport::accuracy() const noexcept {
  return outcomes.empty() ? 0.0 : static_cast<double>(n_correct) / static_cast<double>(n());
}

double EvalReport::baseline_accuracy() const noexcept {
  return outcomes.empty() ? 0.0 : static_cast<double>(n_baseline_correct) / static_cast<double>(n());
}

namespace {

bool greedy_correct(const Weights& w, const TaskInstance& inst, const SteeringSpec* spec,
                    const EvalOptions& opts) {
  model::DecodeConfig dc;
  dc.max_new_tokens = opts.max_new_tokens;
  dc.capture = false;
  dc.scope = opts.scope;
  const auto g = model::generate(w, inst.prompt, dc, spec);
  return inst.judge(g.generated());
}

}  // namespace

std::vector<std::uint8_t> baseline_correct(const Weights& w, std::span<const TaskInstance> instances,
                                           const EvalOptions& opts) {
  std::vector<std::uint8_t> out(instances.size());
  numerics::parallel_for(instances.size(), opts.threads, [&](std::size_t i) {
    out[i] = greedy_correct(w, instances[i], nullptr, opts) ? 1 : 0;
  });
  return out;
}

std::vector<std::uint8_t> oracle_gate_mask(const Weights& w, std::span<const TaskInstance> instances,
                                           const EvalOptions& opts) {
  auto m = baseline_correct(w, instances, opts);
  for (auto& v : m) v = v ? 0 : 1;
  return m;
}

EvalReport evaluate(const Weights& w, std::span<const TaskInstance> instances,
                    const SteeringSpec* spec, const std::vector<std::uint8_t>* steer_mask,
                    const EvalOptions& opts, std::string label) {
  if (steer_mask && steer_mask->size() != instances.size()) {
    throw InvalidArgument(fmt::format("gate mask covers {} instances, {} evaluated", steer_mask->size(),
                                      instances.size()));
  }
  if (spec) spec->validate(w.config);
  EvalReport r;
  r.label = std::move(label);
  if (spec) {
    r.alpha = spec->alpha;
    r.k = spec->entries.size();
  }
  r.outcomes.resize(instances.size());
  numerics::parallel_for(instances.size(), opts.threads, [&](std::size_t i) {
    auto& o = r.outcomes[i];
    o.id = instances[i].id;
    o.baseline_correct = greedy_correct(w, instances[i], nullptr, opts);
    o.steered = spec != nullptr && (!steer_mask || (*steer_mask)[i] != 0);
    o.correct = o.steered ? greedy_correct(w, instances[i], spec, opts) : o.baseline_correct;
  });
  for (const auto& o : r.outcomes) {
    r.n_correct += o.correct ? 1 : 0;
    r.n_baseline_correct += o.baseline_correct ? 1 : 0;
    r.n_steered += o.steered ? 1 : 0;
  }
  return r;
}

model::ActivationTrace prompt_trace(const Weights& w, const TaskInstance& inst) {
  model::ForwardOptions o;
  o.prompt_length = inst.prompt.size();
  o.capture_activations = true;
  return *model::forward(w, inst.prompt, o).trace;
}

namespace {

struct GateInputs {
  std::vector<model::ActivationTrace> traces;
  std::vector<int> labels;
};

GateInputs gate_inputs(const Weights& w, std::span<const TaskInstance> instances,
                       std::size_t threads) {
  GateInputs g;
  g.traces.resize(instances.size());
  numerics::parallel_for(instances.size(), threads,
                         [&](std::size_t i) { g.traces[i] = prompt_trace(w, instances[i]); });
  EvalOptions eo;
  eo.threads = threads;
  const auto ok = baseline_correct(w, instances, eo);
  for (auto v : ok) g.labels.push_back(v ? 0 : 1);
  return g;
}

gate::GateDataset to_dataset(const GateInputs& in, std::span<const TaskInstance> instances,
                             const gate::FeatureSelection& fs) {
  gate::GateDataset d;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    d.samples.push_back({gate::gate_features(in.traces[i], fs.indices, fs.sigma), in.labels[i],
                         instances[i].id});
  }
  return d;
}

}  // namespace

GateArtifacts train_gate_on(const Weights& w, std::span<const TaskInstance> train,
                            std::span<const TaskInstance> val, const gate::GateConfig& cfg,
                            std::size_t threads) {
  cfg.validate();
  const auto tr = gate_inputs(w, train, threads);
  const auto va = gate_inputs(w, val, threads);
  const std::size_t count = std::min(cfg.feature_count, w.config.n_neurons());
  const auto fs = gate::select_gate_features(tr.traces, tr.labels, count);
  const auto init = gate::init_gate(fs.indices, fs.sigma, cfg.hidden, cfg.seed);
  auto res = gate::train_gate(to_dataset(tr, train, fs), to_dataset(va, val, fs), init, cfg);
  res.model.threshold = cfg.threshold;
  return {std::move(res.model), std::move(res.report)};
}

std::vector<double> gate_probabilities(const Weights& w, const gate::GateModel& g,
                                       std::span<const TaskInstance> instances, std::size_t threads) {
  std::vector<double> p(instances.size());
  numerics::parallel_for(instances.size(), threads, [&](std::size_t i) {
    const auto t = prompt_trace(w, instances[i]);
    p[i] = gate::gate_forward(g, gate::gate_features(t, g.feature_indices, g.sigma));
  });
  return p;
}

std::vector<std::uint8_t> gate_mask(const Weights& w, const gate::GateModel& g,
                                    std::span<const TaskInstance> instances, std::size_t threads) {
  const auto p = gate_probabilities(w, g, instances, threads);
  std::vector<std::uint8_t> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = gate::gate_decision(p[i], g.threshold) ? 1 : 0;
  return m;
}

probe::CvResult probe_from_traces(std::span<const traces::LabeledTrace> traces,
                                  const probe::CvConfig& cfg) {
  return probe::cross_validate(probe::build_feature_matrix(traces), cfg);
}

TrajectoryResult trajectory_study(const Weights& w, std::span<const TaskInstance> instances,
                                  const SteeringSpec& spec, const trajectory::TrajectoryConfig& tc,
                                  std::size_t max_new_tokens) {
  TrajectoryResult out;
  std::vector<traces::TraceSummary> before, after;
  std::vector<model::NeuronId> neurons;
  for (const auto& e : spec.entries) neurons.push_back(e.id);
  model::DecodeConfig dc;
  dc.max_new_tokens = max_new_tokens;
  dc.capture_hidden = true;
  for (const auto& inst : instances) {
    for (bool steered : {false, true}) {
      const auto g = model::generate(w, inst.prompt, dc, steered ? &spec : nullptr);
      TrajectoryRow row;
      row.id = inst.id;
      row.condition = steered ? "steered" : "unsteered";
      row.correct = inst.judge(g.generated());
      row.features = trajectory::trajectory_features(g.trace, tc);
      out.rows.push_back(std::move(row));
      (steered ? after : before).push_back(traces::trace_mean(g.trace, traces::TokenSpan::generated));
    }
  }
  if (!neurons.empty()) out.shifts = trajectory::activation_shift(before, after, neurons);
  return out;
}

std::string trajectory_csv(std::span<const TrajectoryRow> rows) {
  std::string out = "id,condition,correct,mean_magnitude,mean_angle,tokens\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{}\n", r.id, r.condition, r.correct ? 1 : 0,
                       r.features.mean_magnitude, r.features.mean_angle, r.features.count);
  }
  return out;
}

std::vector<EvalReport> run_ablation(const Weights& w, std::span<const TaskInstance> test,
                                     const AblationInputs& in, const AblationSetup& setup,
                                     const EvalOptions& opts) {
  if (!in.data) throw InvalidArgument("ablation needs contrastive data");
  if (!in.gate_mask) throw InvalidArgument("ablation needs gate decisions for the test split");
  const auto table = rcn::md_scores(in.data->traces, in.data->pairs);
  const auto spec_for = [&](bool filter) {
    const auto sel = rcn::select_neurons(table, {setup.k, filter, setup.polarity_mode});
    return rcn::build_steering(sel.neurons, table, setup.alpha, setup.value_rule);
  };
  const auto run = [&](const char* arm, auto&& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      throw DataError(fmt::format("ablation arm {} failed: {}", arm, e.what()));
    }
  };

  std::vector<EvalReport> out;
  const auto md = spec_for(true);
  out.push_back(run("full", [&] { return evaluate(w, test, &md, in.gate_mask, opts, "full"); }));
  out.push_back(run("wo_md", [&] {
    if (!in.probe) throw InvalidArgument("no probe supplied");
    const auto ps = rcn::probe_steering(*in.probe, w.config.d_mlp, setup.k, setup.alpha);
    return evaluate(w, test, &ps.spec, in.gate_mask, opts, "wo_md");
  }));
  out.push_back(run("wo_as", [&] {
    const auto s = spec_for(false);
    return evaluate(w, test, &s, in.gate_mask, opts, "wo_as");
  }));
  out.push_back(run("wo_ai", [&] { return evaluate(w, test, &md, nullptr, opts, "wo_ai"); }));
  out.push_back(run("random", [&] {
    const std::size_t k = std::min(setup.k, w.config.n_neurons());
    const auto s = rcn::random_steering(w.config, k, setup.random_seed, table, setup.alpha);
    return evaluate(w, test, &s, nullptr, opts, "random");
  }));
  return out;
}

std::vector<SweepRow> sweep(const Weights& w, std::span<const TaskInstance> test,
                            const rcn::NeuronScoreTable& table, std::span<const double> alphas,
                            std::span<const std::size_t> ks, const rcn::SelectionConfig& base,
                            rcn::ValueRule rule, const std::vector<std::uint8_t>* gate,
                            const EvalOptions& opts) {
  if (alphas.empty() || ks.empty()) throw InvalidArgument("sweep grid is empty");
  std::vector<std::size_t> kk;
  for (auto k : ks) {
    if (k == 0) throw InvalidArgument("sweep K values must be >= 1");
    const auto c = std::min(k, w.config.n_neurons());
    if (std::find(kk.begin(), kk.end(), c) == kk.end()) kk.push_back(c);
  }
  std::vector<SweepRow> rows;
  for (auto k : kk) {
    auto cfg = base;
    cfg.k = k;
    const auto sel = rcn::select_neurons(table, cfg);
    for (double a : alphas) {
      const auto spec = rcn::build_steering(sel.neurons, table, a, rule);
      const auto r = evaluate(w, test, &spec, gate, opts);
      rows.push_back({a, k, r.accuracy(), r.n_steered, sel.shortfall});
    }
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "alpha,k,accuracy,n_steered,shortfall\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{}\n", r.alpha, r.k, r.accuracy, r.n_steered, r.shortfall ? 1 : 0);
  }
  return out;
}

std::string summary_csv(std::span<const EvalReport> reports) {
  std::string out = "label,alpha,k,n,correct,accuracy,baseline_accuracy,n_steered\n";
  for (const auto& r : reports) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", r.label, r.alpha, r.k, r.n(), r.n_correct,
                       r.accuracy(), r.baseline_accuracy(), r.n_steered);
  }
  return out;
}

std::string outcomes_csv(std::span<const EvalReport> reports) {
  std::string out = "label,id,baseline_correct,steered,correct\n";
  for (const auto& r : reports) {
    for (const auto& o : r.outcomes) {
      out += fmt::format("{},{},{},{},{}\n", r.label, o.id, o.baseline_correct ? 1 : 0,
                         o.steered ? 1 : 0, o.correct ? 1 : 0);
    }
  }
  return out;
}

}  // namespace steerlab::pipeline
