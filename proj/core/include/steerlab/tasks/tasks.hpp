#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "steerlab/model/config.hpp"
#include "steerlab/model/steering.hpp"
#include "steerlab/traces/traces.hpp"

namespace steerlab::tasks {

using traces::TaskInstance;

enum class World { planted, mixed_harm, arithmetic };

std::string_view to_string(World w) noexcept;
World world_from_string(std::string_view s);

struct SuiteMetadata {
  World world = World::planted;
  std::uint64_t seed = 0;
  // Planted worlds.
  std::vector<model::NeuronId> planted;
  std::vector<model::NeuronId> decoys;
  std::optional<model::NeuronId> harm;
  double alpha_star = 0.0;
  double margin = 0.0;
  double corrupt_rate = 0.0;
  // Arithmetic world.
  std::size_t modulus = 0;
  double noise_level = 0.0;

  bool operator==(const SuiteMetadata&) const = default;
};

struct TaskSuite {
  std::string name;
  std::string model_file;
  std::vector<TaskInstance> instances;
  SuiteMetadata metadata;

  const TaskInstance& by_id(std::uint64_t id) const;
  std::vector<TaskInstance> select(std::span<const std::uint64_t> ids) const;

  bool operator==(const TaskSuite&) const = default;
};

struct BuiltSuite {
  TaskSuite suite;
  model::Weights weights;
};

struct PlantedSuiteOptions {
  double margin = 0.5;
  double sampling_gap = 2.0;
  double answer_gain = 4.0;
};

// Planted neurons drawn uniformly from the model; round(corrupt_rate * n)
// corrupt instances. Instance id = slot index.
BuiltSuite make_planted_suite(const model::ModelConfig& cfg, std::size_t n_planted,
                              std::size_t n_instances, double corrupt_rate, std::uint64_t seed,
                              const PlantedSuiteOptions& opts = {});

struct MixedHarmOptions {
  double margin = 0.5;
  double sampling_gap = 2.0;
  double answer_gain = 4.0;
  std::size_t decoys_per_planted = 3;
  double decoy_strength = 0.4;
  double harm_threshold = 1.25;
  double harm_gain = 4.0;
};

// Planted world plus decoy neurons and an over-steering harm neuron: too much
// steering flips clean prompts, so always-on steering trades clean accuracy
// for corrupt accuracy.
BuiltSuite make_mixed_harm_suite(const model::ModelConfig& cfg, std::size_t n_planted,
                                 std::size_t n_instances, double corrupt_rate, std::uint64_t seed,
                                 const MixedHarmOptions& opts = {});

struct ArithmeticConfig {
  std::size_t modulus = 7;
  std::size_t n_layers = 2;
  std::size_t n_instances = 49;
  double noise_level = 0.0;
  double logit_scale = 5.0;
  std::uint64_t seed = 0;
};

// Model shape for the arithmetic world.
model::ModelConfig arithmetic_model_config(const ArithmeticConfig& cfg);

// Prompt [A_a, B_b, EQ], answer R_{(a+b) mod M}; the model is a constructed
// solver (attention copies both operands to the last position, one MLP
// neuron per operand pair) with Gaussian embedding noise of noise_level.
BuiltSuite make_arithmetic_suite(const ArithmeticConfig& cfg);

struct SuiteSplit {
  std::vector<std::uint64_t> probe;
  std::vector<std::uint64_t> gate_train;
  std::vector<std::uint64_t> gate_val;
  std::vector<std::uint64_t> test;
  std::uint64_t seed = 0;

  bool operator==(const SuiteSplit&) const = default;
};

using SplitFractions = std::array<double, 4>;  // probe, gate_train, gate_val, test

// Sizes: floor(f_i n), then the remaining round(sum f n) - sum floor go to the
// largest fractional parts (ties to the earlier split). Instances are
// shuffled within each variant and interleaved proportionally before being
// dealt out, so each split mirrors the variant mix.
std::array<std::size_t, 4> split_sizes(std::size_t n, const SplitFractions& f);
SuiteSplit split_suite(const TaskSuite& suite, const SplitFractions& f, std::uint64_t seed);

std::string suite_to_json(const TaskSuite& s);
TaskSuite suite_from_json(std::string_view text);
void save_suite(const std::filesystem::path& path, const TaskSuite& s);
TaskSuite load_suite(const std::filesystem::path& path);

std::string split_to_json(const SuiteSplit& s);
SuiteSplit split_from_json(std::string_view text);
void save_split(const std::filesystem::path& path, const SuiteSplit& s);
SuiteSplit load_split(const std::filesystem::path& path);

}  // namespace steerlab::tasks
