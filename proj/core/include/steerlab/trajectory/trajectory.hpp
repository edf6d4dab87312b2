#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "steerlab/model/steering.hpp"
#include "steerlab/model/trace.hpp"
#include "steerlab/traces/traces.hpp"

namespace steerlab::trajectory {

struct TrajectoryConfig {
  double epsilon = 1e-6;
  // When set, h^L is replaced by rms_norm(h^L, final_norm) before measuring.
  std::span<const float> final_norm = {};

  void validate() const;
};

// Per generated token. `flagged` marks a zero-norm hidden vector: the angle is
// undefined and the token is left out of the sequence averages.
struct TokenGeometry {
  std::size_t token_index = 0;
  double magnitude = 0.0;
  double angle = 0.0;
  bool flagged = false;
};

struct TrajectoryFeatures {
  std::vector<TokenGeometry> tokens;
  double mean_magnitude = 0.0;
  double mean_angle = 0.0;
  std::size_t count = 0;  // unflagged tokens averaged
};

// M_t = (1/L) sum_l ||h^{l+1} - h^l|| / (||h^L - h^0|| + eps), generated tokens.
std::vector<double> magnitude(const model::ActivationTrace& t, const TrajectoryConfig& cfg = {});

// A_t = (1/L) sum_l arccos(cos(h^l, h^{l+1})) / (arccos(cos(h^0, h^L)) + eps).
std::vector<TokenGeometry> angle(const model::ActivationTrace& t, const TrajectoryConfig& cfg = {});

// Means over unflagged tokens. Throws DataError when every token is flagged.
TrajectoryFeatures sequence_average(std::vector<TokenGeometry> tokens);

TrajectoryFeatures trajectory_features(const model::ActivationTrace& t,
                                       const TrajectoryConfig& cfg = {});

// Cosine clamped to [-1, 1]; 0 if either vector is zero.
double cosine(std::span<const double> a, std::span<const double> b);

struct NeuronShift {
  model::NeuronId id;
  double shift = 0.0;
};

// Mean over traces of mu_after minus mean over traces of mu_before, at the
// given neurons only.
std::vector<NeuronShift> activation_shift(std::span<const traces::TraceSummary> before,
                                          std::span<const traces::TraceSummary> after,
                                          std::span<const model::NeuronId> neurons);

// "layer,neuron,shift"
std::string heatmap_csv(std::span<const NeuronShift> shifts);

}  // namespace steerlab::trajectory
