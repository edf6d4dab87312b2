#include "steerlab/model/steering.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "steerlab/error.hpp"

namespace steerlab::model {

std::string_view to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::md: return "md";
    case Provenance::probe: return "probe";
    case Provenance::random: return "random";
  }
  return "md";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "md") return Provenance::md;
  if (s == "probe") return Provenance::probe;
  if (s == "random") return Provenance::random;
  throw InvalidArgument(fmt::format("unknown steering provenance \"{}\"", s));
}

void SteeringSpec::normalize() {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw InvalidArgument(fmt::format("steering alpha must be finite and >= 0, got {}", alpha));
  }
  std::sort(entries.begin(), entries.end(),
            [](const SteeringEntry& a, const SteeringEntry& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].id == entries[i - 1].id) {
      throw InvalidArgument(fmt::format("duplicate steering entry at layer {} neuron {}",
                                        entries[i].id.layer, entries[i].id.neuron));
    }
  }
}

void SteeringSpec::validate(const ModelConfig& cfg) const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw InvalidArgument(fmt::format("steering alpha must be finite and >= 0, got {}", alpha));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.id.layer >= cfg.n_layers || e.id.neuron >= cfg.d_mlp) {
      throw InvalidArgument(fmt::format(
          "steering entry (layer {}, neuron {}) out of bounds for model with {} layers x {} neurons",
          e.id.layer, e.id.neuron, cfg.n_layers, cfg.d_mlp));
    }
    if (!std::isfinite(e.value)) {
      throw InvalidArgument(fmt::format("steering entry (layer {}, neuron {}) is not finite",
                                        e.id.layer, e.id.neuron));
    }
    if (i > 0 && !(entries[i - 1].id < e.id)) {
      throw InvalidArgument("steering entries must be sorted by (layer, neuron) without duplicates");
    }
  }
}

}  // namespace steerlab::model
