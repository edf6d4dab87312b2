#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "steerlab/model/config.hpp"

namespace steerlab::model {

struct NeuronId {
  std::uint32_t layer = 0;
  std::uint32_t neuron = 0;

  std::size_t flat(std::size_t d_mlp) const noexcept { return layer * d_mlp + neuron; }
  static NeuronId from_flat(std::size_t index, std::size_t d_mlp) noexcept {
    return {static_cast<std::uint32_t>(index / d_mlp), static_cast<std::uint32_t>(index % d_mlp)};
  }

  auto operator<=>(const NeuronId&) const = default;
};

enum class Provenance { md, probe, random };

std::string_view to_string(Provenance p) noexcept;
Provenance provenance_from_string(std::string_view s);

struct SteeringEntry {
  NeuronId id;
  double value = 0.0;

  bool operator==(const SteeringEntry&) const = default;
};

// Sparse steering vectors S'_l for every layer plus the global strength alpha.
// Entries are sorted by (layer, neuron) with no duplicates.
struct SteeringSpec {
  double alpha = 0.0;
  std::vector<SteeringEntry> entries;
  Provenance provenance = Provenance::md;

  // Sorts and checks for duplicates / negative alpha. Throws InvalidArgument.
  void normalize();
  // Bounds and ordering against a model configuration.
  void validate(const ModelConfig& cfg) const;

  SteeringSpec with_alpha(double a) const {
    SteeringSpec s = *this;
    s.alpha = a;
    return s;
  }

  bool operator==(const SteeringSpec&) const = default;
};

}  // namespace steerlab::model
