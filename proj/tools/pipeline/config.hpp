#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "steerlab/error.hpp"
#include "steerlab/gate/gate.hpp"
#include "steerlab/model/config.hpp"
#include "steerlab/probe/probe.hpp"
#include "steerlab/rcn/rcn.hpp"
#include "steerlab/tasks/tasks.hpp"
#include "steerlab/traces/traces.hpp"

namespace steerlab::pipeline {

// Bad configuration text or values; the CLI reports it as a usage error.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct SuiteSpec {
  tasks::World world = tasks::World::planted;
  // vocab_size 0: sized to the instance count (planted worlds).
  model::ModelConfig model{2, 16, 32, 2, 0, 8};
  std::size_t n_planted = 5;
  std::size_t n_instances = 100;
  double corrupt_rate = 0.5;
  tasks::PlantedSuiteOptions planted;
  tasks::MixedHarmOptions mixed;
  tasks::ArithmeticConfig arithmetic;
  tasks::SplitFractions split{0.15, 0.25, 0.10, 0.50};
};

struct ExperimentConfig {
  SuiteSpec suite;
  // Artifact file names, resolved against out_dir.
  std::string suite_file = "suite.json";
  std::string model_file = "model.bin";
  std::string split_file = "split.json";

  std::size_t samples = 8;
  double temperature = 1.0;
  std::optional<traces::Balance> balance;
  std::size_t max_new_tokens = 1;

  std::size_t k = 50;
  bool polarity_filter = true;
  rcn::PolarityMode polarity_mode = rcn::PolarityMode::pair_averaged;
  rcn::ValueRule value_rule = rcn::ValueRule::raw;
  double alpha = 0.2;
  std::vector<double> alpha_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<std::size_t> k_grid{1, 2, 5, 10, 20, 50, 100, 500, 2000};
  // Multiplies alpha and alpha_grid by the suite's alpha_star when set.
  bool alpha_relative = false;

  bool use_gate = true;
  bool oracle_gate = false;
  std::string baseline = "md";  // md | probe | random

  gate::GateConfig gate;
  probe::CvConfig probe;
  double trajectory_epsilon = 1e-6;

  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::filesystem::path out_dir = ".";

  std::filesystem::path path(std::string_view file) const { return out_dir / std::string(file); }
  void validate() const;
};

// Keys absent from the text keep their defaults; unknown keys are errors.
ExperimentConfig config_from_json(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

}  // namespace steerlab::pipeline
