#include "steerlab/trajectory/trajectory.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "steerlab/error.hpp"
#include "steerlab/model/config.hpp"
#include "steerlab/numerics/ops.hpp"

namespace steerlab::trajectory {

void TrajectoryConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw InvalidArgument(fmt::format("trajectory epsilon must be > 0, got {}", epsilon));
  }
}

namespace {

// Hidden states h^0..h^L of one token in double precision.
std::vector<std::vector<double>> levels(const model::ActivationTrace& t, std::size_t token,
                                        const TrajectoryConfig& cfg) {
  std::vector<std::vector<double>> h(t.n_layers + 1);
  for (std::size_t l = 0; l <= t.n_layers; ++l) {
    const auto s = t.hidden_state(token, l);
    if (l == t.n_layers && !cfg.final_norm.empty()) {
      const auto n = numerics::rms_norm(s, cfg.final_norm, model::kNormEps);
      h[l].assign(n.begin(), n.end());
    } else {
      h[l].assign(s.begin(), s.end());
    }
  }
  return h;
}

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double squared_norm(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return s;
}

void require_hidden(const model::ActivationTrace& t, const TrajectoryConfig& cfg) {
  cfg.validate();
  if (!t.has_hidden()) throw InvalidArgument("trajectory metrics need captured hidden states");
  if (t.n_layers == 0) throw InvalidArgument("trajectory metrics need at least one layer");
  if (!cfg.final_norm.empty() && cfg.final_norm.size() != t.d_model) {
    throw InvalidArgument("final norm gain length differs from d_model");
  }
}

double token_magnitude(const std::vector<std::vector<double>>& h, double eps) {
  const std::size_t L = h.size() - 1;
  double path = 0.0;
  for (std::size_t l = 0; l < L; ++l) path += distance(h[l + 1], h[l]);
  const double net = distance(h[L], h[0]);
  return (path / (net + eps)) / static_cast<double>(L);
}

}  // namespace

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine: length mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  const double denom = std::sqrt(squared_norm(a) * squared_norm(b));
  if (denom == 0.0) return 0.0;
  return std::clamp(dot / denom, -1.0, 1.0);
}

std::vector<double> magnitude(const model::ActivationTrace& t, const TrajectoryConfig& cfg) {
  require_hidden(t, cfg);
  std::vector<double> out;
  for (std::size_t tok = t.prompt_length; tok < t.n_tokens(); ++tok) {
    out.push_back(token_magnitude(levels(t, tok, cfg), cfg.epsilon));
  }
  return out;
}

std::vector<TokenGeometry> angle(const model::ActivationTrace& t, const TrajectoryConfig& cfg) {
  require_hidden(t, cfg);
  const std::size_t L = t.n_layers;
  std::vector<TokenGeometry> out;
  for (std::size_t tok = t.prompt_length; tok < t.n_tokens(); ++tok) {
    const auto h = levels(t, tok, cfg);
    TokenGeometry g;
    g.token_index = tok;
    g.magnitude = token_magnitude(h, cfg.epsilon);
    g.flagged = std::any_of(h.begin(), h.end(), [](const auto& v) { return squared_norm(v) == 0.0; });
    if (!g.flagged) {
      double turn = 0.0;
      for (std::size_t l = 0; l < L; ++l) turn += std::acos(cosine(h[l], h[l + 1]));
      const double net = std::acos(cosine(h[0], h[L]));
      g.angle = (turn / (net + cfg.epsilon)) / static_cast<double>(L);
    }
    out.push_back(g);
  }
  return out;
}

TrajectoryFeatures sequence_average(std::vector<TokenGeometry> tokens) {
  TrajectoryFeatures f;
  f.tokens = std::move(tokens);
  double m = 0.0, a = 0.0;
  for (const auto& g : f.tokens) {
    if (g.flagged) continue;
    m += g.magnitude;
    a += g.angle;
    ++f.count;
  }
  if (f.count == 0) throw DataError("sequence_average: no unflagged generated tokens");
  f.mean_magnitude = m / static_cast<double>(f.count);
  f.mean_angle = a / static_cast<double>(f.count);
  return f;
}

TrajectoryFeatures trajectory_features(const model::ActivationTrace& t,
                                       const TrajectoryConfig& cfg) {
  return sequence_average(angle(t, cfg));
}

std::vector<NeuronShift> activation_shift(std::span<const traces::TraceSummary> before,
                                          std::span<const traces::TraceSummary> after,
                                          std::span<const model::NeuronId> neurons) {
  if (before.size() != after.size() || before.empty()) {
    throw InvalidArgument(fmt::format("activation_shift: {} summaries before vs {} after",
                                      before.size(), after.size()));
  }
  const std::size_t L = before.front().n_layers;
  const std::size_t D = before.front().d_mlp;
  for (const auto* side : {&before, &after}) {
    for (const auto& s : *side) {
      if (s.n_layers != L || s.d_mlp != D) throw InvalidArgument("activation_shift: shape mismatch");
    }
  }
  std::vector<NeuronShift> out;
  const double n = static_cast<double>(before.size());
  for (const auto& id : neurons) {
    if (id.layer >= L || id.neuron >= D) {
      throw InvalidArgument(fmt::format("activation_shift: (layer {}, neuron {}) out of range",
                                        id.layer, id.neuron));
    }
    double b = 0.0, a = 0.0;
    for (const auto& s : before) b += s.mean(id.layer, id.neuron);
    for (const auto& s : after) a += s.mean(id.layer, id.neuron);
    out.push_back({id, a / n - b / n});
  }
  return out;
}

std::string heatmap_csv(std::span<const NeuronShift> shifts) {
  std::string out = "layer,neuron,shift\n";
  for (const auto& s : shifts) out += fmt::format("{},{},{}\n", s.id.layer, s.id.neuron, s.shift);
  return out;
}

}  // namespace steerlab::trajectory
