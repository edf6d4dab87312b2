// steerlab: command-line driver for the identification / steering pipeline.
// Every command reads and writes artifacts under --out-dir; data files carry
// no timestamps so reruns are byte-identical. Progress goes to stderr.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "config.hpp"
#include "json.hpp"
#include "pipeline.hpp"
#include "steerlab/error.hpp"
#include "steerlab/gate/gate.hpp"
#include "steerlab/io/binary.hpp"
#include "steerlab/model/model_io.hpp"
#include "steerlab/model/planted.hpp"
#include "steerlab/probe/probe_io.hpp"
#include "steerlab/rcn/rcn.hpp"
#include "steerlab/tasks/tasks.hpp"
#include "steerlab/traces/store.hpp"

namespace fs = std::filesystem;
using namespace steerlab;
using pipeline::ExperimentConfig;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> k;
  std::optional<double> alpha;
  bool no_polarity = false;
  bool no_gate = false;
  bool oracle_gate = false;
  std::optional<std::string> baseline;
};

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : pipeline::load_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.out_dir) c.out_dir = *o.out_dir;
  if (o.threads) c.threads = *o.threads;
  if (o.k) c.k = *o.k;
  if (o.alpha) c.alpha = *o.alpha;
  if (o.no_polarity) c.polarity_filter = false;
  if (o.no_gate) c.use_gate = false;
  if (o.oracle_gate) c.oracle_gate = true;
  if (o.baseline) c.baseline = *o.baseline;
  c.gate.seed = c.seed;
  c.validate();
  return c;
}

void log(const std::string& msg) { fmt::print(stderr, "[steerlab] {}\n", msg); }

void write(const ExperimentConfig& c, std::string_view name, std::string_view text) {
  io::write_text(c.path(name), text);
  log(fmt::format("wrote {}", c.path(name).string()));
}

struct Workspace {
  model::Weights weights;
  tasks::TaskSuite suite;
  tasks::SuiteSplit split;
};

Workspace load_workspace(const ExperimentConfig& c) {
  for (const auto& f : {c.model_file, c.suite_file, c.split_file}) {
    if (!fs::exists(c.path(f))) {
      throw DataError(fmt::format("missing input {} (run make-suite first)", c.path(f).string()));
    }
  }
  return {model::load_model(c.path(c.model_file)), tasks::load_suite(c.path(c.suite_file)),
          tasks::load_split(c.path(c.split_file))};
}

double effective_alpha(const ExperimentConfig& c, const tasks::TaskSuite& s, double a) {
  return c.alpha_relative ? a * s.metadata.alpha_star : a;
}

pipeline::EvalOptions eval_options(const ExperimentConfig& c) {
  pipeline::EvalOptions eo;
  eo.max_new_tokens = c.max_new_tokens;
  eo.threads = c.threads;
  return eo;
}

std::string pairs_csv(std::span<const traces::ContrastivePair> pairs) {
  std::string out = "instance_id,positive,negative\n";
  for (const auto& p : pairs) out += fmt::format("{},{},{}\n", p.instance_id, p.positive, p.negative);
  return out;
}

std::vector<traces::ContrastivePair> parse_pairs(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "instance_id,positive,negative") throw FormatError("pairs.csv: unexpected header");
  std::vector<traces::ContrastivePair> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    traces::ContrastivePair p;
    char c1 = 0, c2 = 0;
    std::istringstream ls(line);
    if (!(ls >> p.instance_id >> c1 >> p.positive >> c2 >> p.negative) || c1 != ',' || c2 != ',') {
      throw FormatError(fmt::format("pairs.csv: malformed line \"{}\"", line));
    }
    out.push_back(p);
  }
  return out;
}

pipeline::ContrastiveData load_contrastive(const ExperimentConfig& c) {
  if (!fs::exists(c.path("traces.bin")) || !fs::exists(c.path("pairs.csv"))) {
    throw DataError("missing traces.bin / pairs.csv (run gen-data first)");
  }
  pipeline::ContrastiveData d;
  d.traces = traces::load_store(c.path("traces.bin")).traces;
  d.pairs = parse_pairs(io::read_text(c.path("pairs.csv")));
  for (const auto& p : d.pairs) {
    if (p.positive >= d.traces.size() || p.negative >= d.traces.size()) {
      throw FormatError("pairs.csv references a trace index outside traces.bin");
    }
  }
  return d;
}

// ---- commands --------------------------------------------------------------

int cmd_make_suite(const ExperimentConfig& c) {
  fs::create_directories(c.out_dir);
  auto sp = c.suite;
  tasks::BuiltSuite b;
  switch (sp.world) {
    case tasks::World::planted:
    case tasks::World::mixed_harm: {
      auto mc = sp.model;
      if (mc.vocab_size == 0) mc.vocab_size = 3 + 2 * sp.n_instances;
      b = sp.world == tasks::World::planted
              ? tasks::make_planted_suite(mc, sp.n_planted, sp.n_instances, sp.corrupt_rate, c.seed,
                                          sp.planted)
              : tasks::make_mixed_harm_suite(mc, sp.n_planted, sp.n_instances, sp.corrupt_rate,
                                             c.seed, sp.mixed);
      break;
    }
    case tasks::World::arithmetic: {
      auto ac = sp.arithmetic;
      ac.seed = c.seed;
      b = tasks::make_arithmetic_suite(ac);
      break;
    }
  }
  b.suite.model_file = c.model_file;
  model::save_model(c.path(c.model_file), b.weights);
  log(fmt::format("wrote {}", c.path(c.model_file).string()));
  write(c, c.suite_file, tasks::suite_to_json(b.suite));
  write(c, c.split_file, tasks::split_to_json(tasks::split_suite(b.suite, sp.split, c.seed)));
  if (b.suite.metadata.world != tasks::World::arithmetic) {
    log(fmt::format("alpha_star = {}", b.suite.metadata.alpha_star));
  }
  return kExitOk;
}

int cmd_gen_data(const ExperimentConfig& c) {
  const auto ws = load_workspace(c);
  const auto probe = ws.suite.select(ws.split.probe);
  traces::SampleConfig sc;
  sc.n = c.samples;
  sc.temperature = c.temperature;
  sc.seed = c.seed;
  sc.max_new_tokens = c.max_new_tokens;
  sc.capture_hidden = true;
  auto data = pipeline::generate_contrastive(ws.weights, probe, sc, c.balance, c.threads);
  log(fmt::format("{} traces, {} pairs from {} probe instances", data.traces.size(), data.pairs.size(),
                  probe.size()));
  traces::save_store(c.path("traces.bin"), traces::make_store(std::move(data.traces)));
  log(fmt::format("wrote {}", c.path("traces.bin").string()));
  write(c, "pairs.csv", pairs_csv(data.pairs));
  return kExitOk;
}

int cmd_identify(const ExperimentConfig& c) {
  const auto ws = load_workspace(c);
  const auto data = load_contrastive(c);
  const double alpha = effective_alpha(c, ws.suite, c.alpha);
  const auto id = pipeline::identify(data, {c.k, c.polarity_filter, c.polarity_mode}, alpha, c.value_rule);
  if (id.selection.shortfall) {
    log(fmt::format("shortfall: {} neurons requested, {} candidates", c.k, id.selection.candidates));
  }
  write(c, "steering.json", rcn::steering_to_json(id.spec));
  write(c, "scores.csv", pipeline::score_table_csv(id.table, id.selection, c.polarity_mode));
  return kExitOk;
}

int cmd_probe(const ExperimentConfig& c) {
  const auto ws = load_workspace(c);
  const auto data = load_contrastive(c);
  const auto res = pipeline::probe_from_traces(data.traces, c.probe);
  log(fmt::format("best lambda {} mean AUROC {}", res.report.best_lambda, res.report.best_mean_auroc));
  write(c, "probe.json", probe::probe_to_json(res.model));
  write(c, "probe_cv.csv", probe::cv_report_csv(res.report));
  const auto ps = rcn::probe_steering(res.model, ws.weights.config.d_mlp, c.k,
                                      effective_alpha(c, ws.suite, c.alpha));
  write(c, "probe_steering.json", rcn::steering_to_json(ps.spec));
  return kExitOk;
}

int cmd_train_gate(const ExperimentConfig& c) {
  const auto ws = load_workspace(c);
  const auto res = pipeline::train_gate_on(ws.weights, ws.suite.select(ws.split.gate_train),
                                           ws.suite.select(ws.split.gate_val), c.gate, c.threads);
  log(fmt::format("best epoch {} of {}", res.report.best_epoch, res.report.epochs.size()));
  write(c, "gate.json", gate::gate_to_json(res.model));
  write(c, "gate_report.csv", gate::gate_report_csv(res.report));
  return kExitOk;
}

model::SteeringSpec baseline_spec(const ExperimentConfig& c, const Workspace& ws) {
  const auto* mc = &ws.weights.config;
  if (c.baseline == "probe") {
    if (!fs::exists(c.path("probe_steering.json"))) throw DataError("missing probe_steering.json (run probe)");
    return rcn::load_steering(c.path("probe_steering.json"), mc);
  }
  if (c.baseline == "random") {
    const auto data = load_contrastive(c);
    const auto table = rcn::md_scores(data.traces, data.pairs);
    return rcn::random_steering(*mc, std::min(c.k, mc->n_neurons()), c.seed, table,
                                effective_alpha(c, ws.suite, c.alpha));
  }
  if (!fs::exists(c.path("steering.json"))) throw DataError("missing steering.json (run identify)");
  return rcn::load_steering(c.path("steering.json"), mc);
}

std::optional<std::vector<std::uint8_t>> test_gate(const ExperimentConfig& c, const Workspace& ws,
                                                   std::span<const tasks::TaskInstance> test) {
  if (!c.use_gate) return std::nullopt;
  if (c.oracle_gate) return pipeline::oracle_gate_mask(ws.weights, test, eval_options(c));
  if (!fs::exists(c.path("gate.json"))) throw DataError("missing gate.json (run train-gate or pass --no-gate)");
  return pipeline::gate_mask(ws.weights, gate::load_gate(c.path("gate.json")), test, c.threads);
}

int cmd_steer_eval(const ExperimentConfig& c) {
  const auto ws = load_workspace(c);
  const auto test = ws.suite.select(ws.split.test);
  const auto spec = baseline_spec(c, ws);
  const auto mask = test_gate(c, ws, test);
  const auto r = pipeline::evaluate(ws.weights, test, &spec, mask ? &*mask : nullptr, eval_options(c),
                                    c.baseline + (c.use_gate ? "+gate" : ""));
  if (r.n() != ws.split.test.size()) throw std::logic_error("evaluation lost instances");
  log(fmt::format("accuracy {} (baseline {}), {} of {} steered", r.accuracy(), r.baseline_accuracy(),
                  r.n_steered, r.n()));
  const std::vector<pipeline::EvalReport> rs{r};
  write(c, "eval_summary.csv", pipeline::summary_csv(rs));
  write(c, "eval_outcomes.csv", pipeline::outcomes_csv(rs));
  json j;
  j["label"] = r.label;
  j["alpha"] = r.alpha;
  j["k"] = r.k;
  j["n"] = r.n();
  j["correct"] = r.n_correct;
  j["accuracy"] = r.accuracy();
  j["baseline_accuracy"] = r.baseline_accuracy();
  j["n_steered"] = r.n_steered;
  j["gate"] = c.use_gate ? (c.oracle_gate ? "oracle" : "learned") : "off";
  json inst = json::array();
  for (const auto& o : r.outcomes) {
    inst.push_back({{"id", o.id}, {"baseline_correct", o.baseline_correct}, {"steered", o.steered},
                    {"correct", o.correct}});
  }
  j["instances"] = std::move(inst);
  write(c, "eval_report.json", j.dump(2) + "\n");
  return kExitOk;
}

int cmd_trajectory(const ExperimentConfig& c) {
  const auto ws = load_workspace(c);
  const auto test = ws.suite.select(ws.split.test);
  const auto spec = baseline_spec(c, ws);
  trajectory::TrajectoryConfig tc;
  tc.epsilon = c.trajectory_epsilon;
  const auto res = pipeline::trajectory_study(ws.weights, test, spec, tc, c.max_new_tokens);
  write(c, "trajectory.csv", pipeline::trajectory_csv(res.rows));
  write(c, "heatmap.csv", trajectory::heatmap_csv(res.shifts));
  return kExitOk;
}

int cmd_ablate(const ExperimentConfig& c) {
  const auto ws = load_workspace(c);
  const auto test = ws.suite.select(ws.split.test);
  const auto data = load_contrastive(c);
  probe::ProbeModel pm;
  if (fs::exists(c.path("probe.json"))) {
    pm = probe::load_probe(c.path("probe.json"));
  } else {
    log("probe.json absent; fitting the probe in memory");
    pm = pipeline::probe_from_traces(data.traces, c.probe).model;
  }
  std::vector<std::uint8_t> mask;
  if (c.oracle_gate) {
    mask = pipeline::oracle_gate_mask(ws.weights, test, eval_options(c));
  } else if (fs::exists(c.path("gate.json"))) {
    mask = pipeline::gate_mask(ws.weights, gate::load_gate(c.path("gate.json")), test, c.threads);
  } else {
    log("gate.json absent; training the gate in memory");
    const auto g = pipeline::train_gate_on(ws.weights, ws.suite.select(ws.split.gate_train),
                                           ws.suite.select(ws.split.gate_val), c.gate, c.threads);
    mask = pipeline::gate_mask(ws.weights, g.model, test, c.threads);
  }
  pipeline::AblationSetup setup;
  setup.k = c.k;
  setup.alpha = effective_alpha(c, ws.suite, c.alpha);
  setup.value_rule = c.value_rule;
  setup.polarity_mode = c.polarity_mode;
  setup.random_seed = c.seed;
  const auto arms = pipeline::run_ablation(ws.weights, test, {&data, &pm, &mask}, setup, eval_options(c));
  for (const auto& a : arms) log(fmt::format("{:8} accuracy {}", a.label, a.accuracy()));
  write(c, "ablation_summary.csv", pipeline::summary_csv(arms));
  write(c, "ablation_outcomes.csv", pipeline::outcomes_csv(arms));
  return kExitOk;
}

int cmd_sweep(const ExperimentConfig& c) {
  const auto ws = load_workspace(c);
  const auto test = ws.suite.select(ws.split.test);
  const auto data = load_contrastive(c);
  const auto table = rcn::md_scores(data.traces, data.pairs);
  std::vector<double> alphas;
  for (double a : c.alpha_grid) alphas.push_back(effective_alpha(c, ws.suite, a));
  const auto mask = test_gate(c, ws, test);
  const auto rows = pipeline::sweep(ws.weights, test, table, alphas, c.k_grid,
                                    {c.k, c.polarity_filter, c.polarity_mode}, c.value_rule,
                                    mask ? &*mask : nullptr, eval_options(c));
  write(c, "sweep.csv", pipeline::sweep_csv(rows));
  return kExitOk;
}

int cmd_report(const ExperimentConfig& c) {
  const fs::path bundle = c.out_dir / "report";
  fs::create_directories(bundle);
  // Known outputs, in a fixed order.
  const std::vector<std::pair<std::string, std::string>> files = {
      {"suite.json", "make-suite"},        {"split.json", "make-suite"},
      {"pairs.csv", "gen-data"},           {"steering.json", "identify"},
      {"scores.csv", "identify"},          {"probe.json", "probe"},
      {"probe_cv.csv", "probe"},           {"probe_steering.json", "probe"},
      {"gate.json", "train-gate"},         {"gate_report.csv", "train-gate"},
      {"eval_summary.csv", "steer-eval"},  {"eval_outcomes.csv", "steer-eval"},
      {"eval_report.json", "steer-eval"},  {"trajectory.csv", "trajectory"},
      {"heatmap.csv", "trajectory"},       {"ablation_summary.csv", "ablate"},
      {"ablation_outcomes.csv", "ablate"}, {"sweep.csv", "sweep"},
  };
  json manifest;
  manifest["files"] = json::array();
  manifest["warnings"] = json::array();
  std::size_t copied = 0;
  for (const auto& [name, stage] : files) {
    const fs::path src = c.path(name);
    if (!fs::exists(src)) {
      manifest["warnings"].push_back(fmt::format("missing {} (stage {})", name, stage));
      continue;
    }
    const auto bytes = io::read_file(src);
    io::write_file(bundle / name, bytes);
    manifest["files"].push_back(
        {{"name", name}, {"stage", stage}, {"bytes", bytes.size()},
         {"crc32", fmt::format("{:08x}", io::crc32(bytes))}});
    ++copied;
  }
  if (copied == 0) throw DataError(fmt::format("no pipeline outputs found in {}", c.out_dir.string()));
  for (const auto& w : manifest["warnings"]) log(fmt::format("warning: {}", w.get<std::string>()));
  io::write_text(bundle / "manifest.json", manifest.dump(2) + "\n");
  log(fmt::format("bundle {} ({} files)", bundle.string(), copied));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reasoning-critical neuron identification and adaptive steering toolkit"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Global seed");
  app.add_option("--out-dir", o.out_dir, "Artifact directory");
  app.add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);

  using Command = std::function<int(const ExperimentConfig&)>;
  std::vector<std::pair<CLI::App*, Command>> commands;
  const auto add = [&](const char* name, const char* desc, Command fn) {
    auto* sub = app.add_subcommand(name, desc);
    commands.emplace_back(sub, std::move(fn));
    return sub;
  };
  add("make-suite", "Build a task suite, its model and the split", cmd_make_suite);
  add("gen-data", "Sample contrastive traces on the probe split", cmd_gen_data);
  auto* ident = add("identify", "Score neurons and write the steering spec", cmd_identify);
  ident->add_option("--k", o.k, "Number of neurons");
  ident->add_option("--alpha", o.alpha, "Steering strength");
  ident->add_flag("--no-polarity", o.no_polarity, "Skip the sign-flip filter");
  auto* prb = add("probe", "Cross-validated L1 probe on last-token activations", cmd_probe);
  prb->add_option("--k", o.k, "Neurons in the probe steering spec");
  prb->add_option("--alpha", o.alpha, "Steering strength");
  add("train-gate", "Train the failure-prediction gate", cmd_train_gate);
  const auto gate_flags = [&](CLI::App* sub) {
    sub->add_option("--baseline", o.baseline, "md | probe | random")
        ->check(CLI::IsMember({"md", "probe", "random"}));
    sub->add_flag("--no-gate", o.no_gate, "Steer every instance");
    sub->add_flag("--oracle-gate", o.oracle_gate, "Gate on the true base-model failures");
  };
  gate_flags(add("steer-eval", "Greedy evaluation on the test split", cmd_steer_eval));
  gate_flags(add("trajectory", "Residual-stream trajectory features", cmd_trajectory));
  gate_flags(add("sweep", "Accuracy over the alpha x K grid", cmd_sweep));
  auto* abl = add("ablate", "Full method against its ablations", cmd_ablate);
  abl->add_option("--k", o.k, "Number of neurons");
  abl->add_option("--alpha", o.alpha, "Steering strength");
  abl->add_flag("--oracle-gate", o.oracle_gate, "Gate on the true base-model failures");
  add("report", "Bundle outputs with a CRC32 manifest", cmd_report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  const auto start = std::chrono::steady_clock::now();
  try {
    const auto cfg = resolve(o);
    for (const auto& [sub, fn] : commands) {
      if (sub->parsed()) {
        const int rc = fn(cfg);
        log(fmt::format("{} done in {:.2f}s", sub->get_name(),
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()));
        return rc;
      }
    }
  } catch (const pipeline::ConfigError& e) {
    fmt::print(stderr, "configuration error: {}\n", e.what());
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    fmt::print(stderr, "contract error: {}\n", e.what());
    return kExitData;
  } catch (const DataError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return kExitData;
  } catch (const FormatError& e) {
    fmt::print(stderr, "format error: {}\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
