#include "config.hpp"

#include <cmath>
#include <set>

#include <fmt/format.h>

#include "json.hpp"
#include "steerlab/io/binary.hpp"

namespace steerlab::pipeline {

using nlohmann::json;

namespace {

// Reads optional keys of one JSON object and rejects the ones nobody asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("config section {} must be an object", name_));
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(fmt::format("config key {}.{} has the wrong type", name_, key));
    }
  }

  std::optional<Section> sub(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), name_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(fmt::format("unknown config key {}.{}", name_, k));
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_model(Section s, model::ModelConfig& m) {
  s.read("n_layers", m.n_layers);
  s.read("d_model", m.d_model);
  s.read("d_mlp", m.d_mlp);
  s.read("n_heads", m.n_heads);
  s.read("vocab_size", m.vocab_size);
  s.read("max_seq", m.max_seq);
  s.finish();
}

void read_suite(Section s, SuiteSpec& sp) {
  std::string world(tasks::to_string(sp.world));
  s.read("world", world);
  try {
    sp.world = tasks::world_from_string(world);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (auto m = s.sub("model")) read_model(*m, sp.model);
  s.read("n_planted", sp.n_planted);
  s.read("n_instances", sp.n_instances);
  s.read("corrupt_rate", sp.corrupt_rate);
  s.read("margin", sp.planted.margin);
  sp.mixed.margin = sp.planted.margin;
  s.read("sampling_gap", sp.planted.sampling_gap);
  sp.mixed.sampling_gap = sp.planted.sampling_gap;
  s.read("answer_gain", sp.planted.answer_gain);
  sp.mixed.answer_gain = sp.planted.answer_gain;
  s.read("decoys_per_planted", sp.mixed.decoys_per_planted);
  s.read("decoy_strength", sp.mixed.decoy_strength);
  s.read("harm_threshold", sp.mixed.harm_threshold);
  s.read("harm_gain", sp.mixed.harm_gain);
  s.read("modulus", sp.arithmetic.modulus);
  s.read("noise_level", sp.arithmetic.noise_level);
  s.read("logit_scale", sp.arithmetic.logit_scale);
  s.read("split", sp.split);
  s.finish();
  sp.arithmetic.n_layers = sp.model.n_layers;
  sp.arithmetic.n_instances = sp.n_instances;
}

void read_gate(Section s, gate::GateConfig& g) {
  s.read("feature_count", g.feature_count);
  s.read("hidden", g.hidden);
  s.read("dropout", g.dropout);
  s.read("learning_rate", g.learning_rate);
  s.read("weight_decay", g.weight_decay);
  s.read("max_epochs", g.max_epochs);
  s.read("patience", g.patience);
  s.read("batch_size", g.batch_size);
  s.read("threshold", g.threshold);
  s.finish();
}

void read_probe(Section s, probe::CvConfig& p) {
  s.read("folds", p.folds);
  s.read("lambdas", p.lambdas);
  s.read("seed", p.seed);
  s.read("max_iter", p.max_iter);
  s.read("feature_count", p.feature_count);
  s.finish();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (samples == 0) throw ConfigError("samples must be >= 1");
  if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
  if (max_new_tokens == 0) throw ConfigError("max_new_tokens must be >= 1");
  if (k == 0) throw ConfigError("k must be >= 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be finite and >= 0");
  for (double a : alpha_grid) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("alpha_grid values must be finite and >= 0");
  }
  for (auto v : k_grid) {
    if (v == 0) throw ConfigError("k_grid values must be >= 1");
  }
  if (baseline != "md" && baseline != "probe" && baseline != "random") {
    throw ConfigError(fmt::format("baseline must be md, probe or random, got \"{}\"", baseline));
  }
  if (!(trajectory_epsilon > 0.0)) throw ConfigError("trajectory_epsilon must be > 0");
  if (threads == 0) throw ConfigError("threads must be >= 1");
  try {
    gate.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  ExperimentConfig c;
  Section s(j, "config");
  if (auto sub = s.sub("suite")) read_suite(*sub, c.suite);
  s.read("suite_file", c.suite_file);
  s.read("model_file", c.model_file);
  s.read("split_file", c.split_file);
  s.read("samples", c.samples);
  s.read("temperature", c.temperature);
  std::vector<std::size_t> balance;
  s.read("balance", balance);
  if (!balance.empty()) {
    if (balance.size() != 2) throw ConfigError("balance must be [positives, negatives]");
    c.balance = traces::Balance{balance[0], balance[1]};
  }
  s.read("max_new_tokens", c.max_new_tokens);
  s.read("k", c.k);
  s.read("polarity_filter", c.polarity_filter);
  std::string mode = "pair_averaged";
  s.read("polarity_mode", mode);
  if (mode == "every_pair") {
    c.polarity_mode = rcn::PolarityMode::every_pair;
  } else if (mode != "pair_averaged") {
    throw ConfigError(fmt::format("polarity_mode must be pair_averaged or every_pair, got \"{}\"", mode));
  }
  std::string rule(rcn::to_string(c.value_rule));
  s.read("value_rule", rule);
  try {
    c.value_rule = rcn::value_rule_from_string(rule);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  s.read("alpha", c.alpha);
  s.read("alpha_grid", c.alpha_grid);
  s.read("k_grid", c.k_grid);
  s.read("alpha_relative", c.alpha_relative);
  s.read("use_gate", c.use_gate);
  s.read("oracle_gate", c.oracle_gate);
  s.read("baseline", c.baseline);
  if (auto g = s.sub("gate")) read_gate(*g, c.gate);
  if (auto p = s.sub("probe")) read_probe(*p, c.probe);
  s.read("trajectory_epsilon", c.trajectory_epsilon);
  s.read("seed", c.seed);
  s.read("threads", c.threads);
  std::string out = c.out_dir.string();
  s.read("out_dir", out);
  c.out_dir = out;
  s.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return config_from_json(io::read_text(path));
}

std::string config_to_json(const ExperimentConfig& c) {
  const auto& sp = c.suite;
  json suite = {
      {"world", std::string(tasks::to_string(sp.world))},
      {"model",
       {{"n_layers", sp.model.n_layers},
        {"d_model", sp.model.d_model},
        {"d_mlp", sp.model.d_mlp},
        {"n_heads", sp.model.n_heads},
        {"vocab_size", sp.model.vocab_size},
        {"max_seq", sp.model.max_seq}}},
      {"n_planted", sp.n_planted},
      {"n_instances", sp.n_instances},
      {"corrupt_rate", sp.corrupt_rate},
      {"margin", sp.planted.margin},
      {"sampling_gap", sp.planted.sampling_gap},
      {"answer_gain", sp.planted.answer_gain},
      {"decoys_per_planted", sp.mixed.decoys_per_planted},
      {"decoy_strength", sp.mixed.decoy_strength},
      {"harm_threshold", sp.mixed.harm_threshold},
      {"harm_gain", sp.mixed.harm_gain},
      {"modulus", sp.arithmetic.modulus},
      {"noise_level", sp.arithmetic.noise_level},
      {"logit_scale", sp.arithmetic.logit_scale},
      {"split", sp.split},
  };
  json j;
  j["suite"] = std::move(suite);
  j["suite_file"] = c.suite_file;
  j["model_file"] = c.model_file;
  j["split_file"] = c.split_file;
  j["samples"] = c.samples;
  j["temperature"] = c.temperature;
  if (c.balance) j["balance"] = {c.balance->positives, c.balance->negatives};
  j["max_new_tokens"] = c.max_new_tokens;
  j["k"] = c.k;
  j["polarity_filter"] = c.polarity_filter;
  j["polarity_mode"] =
      c.polarity_mode == rcn::PolarityMode::every_pair ? "every_pair" : "pair_averaged";
  j["value_rule"] = std::string(rcn::to_string(c.value_rule));
  j["alpha"] = c.alpha;
  j["alpha_grid"] = c.alpha_grid;
  j["k_grid"] = c.k_grid;
  j["alpha_relative"] = c.alpha_relative;
  j["use_gate"] = c.use_gate;
  j["oracle_gate"] = c.oracle_gate;
  j["baseline"] = c.baseline;
  j["gate"] = {{"feature_count", c.gate.feature_count}, {"hidden", c.gate.hidden},
               {"dropout", c.gate.dropout},             {"learning_rate", c.gate.learning_rate},
               {"weight_decay", c.gate.weight_decay},   {"max_epochs", c.gate.max_epochs},
               {"patience", c.gate.patience},           {"batch_size", c.gate.batch_size},
               {"threshold", c.gate.threshold}};
  j["probe"] = {{"folds", c.probe.folds},
                {"lambdas", c.probe.lambdas},
                {"seed", c.probe.seed},
                {"max_iter", c.probe.max_iter},
                {"feature_count", c.probe.feature_count}};
  j["trajectory_epsilon"] = c.trajectory_epsilon;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["out_dir"] = c.out_dir.string();
  return j.dump(2) + "\n";
}

}  // namespace steerlab::pipeline
