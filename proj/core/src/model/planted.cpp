#include "steerlab/model/planted.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "steerlab/error.hpp"
#include "steerlab/model/transformer.hpp"
#include "steerlab/numerics/ops.hpp"
#include "steerlab/numerics/rng.hpp"
#include "steerlab/rcn/rcn.hpp"
#include "steerlab/traces/traces.hpp"

namespace steerlab::model {

std::vector<TokenId> PlantedModel::prompt(std::size_t slot, bool corrupt) const {
  if (slot >= n_slots()) {
    throw InvalidArgument(fmt::format("planted slot {} out of range ({} slots)", slot, n_slots()));
  }
  return {PlantedLayout::kStart,
          corrupt ? PlantedLayout::corrupt_token(slot) : PlantedLayout::clean_token(slot)};
}

namespace {

using Layout = PlantedLayout;

enum class Role : std::uint8_t { plain, planted, decoy, harm };

struct Roles {
  std::vector<Role> of;  // by flat neuron id
  std::vector<NeuronId> planted, decoys;
  std::optional<NeuronId> harm;
};

struct Params {
  double gate = 4.0;
  double kappa = 1.0;       // planted up-projection scale
  double answer = 4.0;      // answer-sign weight relative to polarity
  double omega = 0.0;       // planted readout weight
  double decoy = 0.4;
  double beta = 0.0;        // unembedding readout weight
  double gamma = 0.0;       // unembedding bias toward both answer tokens
  double harm_out = 0.0;    // harm gate weight on the readout
  double harm_theta = 0.0;  // harm gate offset on the constant coordinate
  double harm_flag = 0.0;   // harm gate suppression on answer tokens
  double harm_down = 0.0;
};

constexpr double kPlainScale = 0.5;
constexpr double kFreeWrite = 0.05;
constexpr double kLogitFloor = 30.0;
constexpr double kHarmOff = 30.0;

Weights assemble(const ModelConfig& cfg, const Roles& roles, std::span<const double> polarity,
                 const Params& p, std::uint64_t seed) {
  Weights w = Weights::zeros(cfg);
  const std::size_t d = cfg.d_model;
  double p_max = 0.0;
  for (double v : polarity) p_max = std::max(p_max, v);

  for (TokenId t = 0; t < cfg.vocab_size; ++t) w.token_embedding(t, Layout::kOne) = 1.0f;
  w.token_embedding(Layout::kCorrect, Layout::kAnswer) = 1.0f;
  w.token_embedding(Layout::kCorrect, Layout::kIsAnswer) = 1.0f;
  w.token_embedding(Layout::kWrong, Layout::kAnswer) = -1.0f;
  w.token_embedding(Layout::kWrong, Layout::kIsAnswer) = 1.0f;
  for (std::size_t j = 0; j < polarity.size(); ++j) {
    w.token_embedding(Layout::clean_token(j), Layout::kPolarity) = static_cast<float>(polarity[j]);
    w.token_embedding(Layout::corrupt_token(j), Layout::kPolarity) = static_cast<float>(-polarity[j]);
    const auto fill = static_cast<float>(std::sqrt(p_max * p_max - polarity[j] * polarity[j]));
    w.token_embedding(Layout::clean_token(j), Layout::kFill) = fill;
    w.token_embedding(Layout::corrupt_token(j), Layout::kFill) = fill;
  }

  const numerics::SeededRng root(seed, numerics::stream_id_of("planted.weights"));
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto& L = w.layers[l];
    // Attention is inert (zero output projection); q/k/v are random filler.
    std::uint64_t tensor = 0;
    for (Matrix* m : {&L.wq, &L.wk, &L.wv}) {
      auto rng = root.derive("attn", l * 3 + tensor++);
      for (float& x : m->data()) x = static_cast<float>(rng.normal() * attn_scale);
    }
    for (std::size_t i = 0; i < cfg.d_mlp; ++i) {
      const NeuronId id{static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(i)};
      const auto f = static_cast<float>(p.gate);
      switch (roles.of[id.flat(cfg.d_mlp)]) {
        case Role::planted:
          L.w_gate(Layout::kOne, i) = f;
          L.w_up(Layout::kPolarity, i) = static_cast<float>(p.kappa);
          L.w_up(Layout::kAnswer, i) = static_cast<float>(p.kappa * p.answer);
          L.w_down(i, Layout::kOut) = static_cast<float>(p.omega);
          break;
        case Role::decoy:
          L.w_gate(Layout::kOne, i) = f;
          L.w_up(Layout::kAnswer, i) = static_cast<float>(p.kappa * p.answer * p.decoy);
          L.w_down(i, Layout::kOut) = static_cast<float>(-p.omega);
          break;
        case Role::harm:
          L.w_gate(Layout::kOut, i) = static_cast<float>(p.harm_out);
          L.w_gate(Layout::kOne, i) = static_cast<float>(-p.harm_theta);
          L.w_gate(Layout::kIsAnswer, i) = static_cast<float>(-p.harm_flag);
          L.w_up(Layout::kOne, i) = 1.0f;
          L.w_down(i, Layout::kOut) = static_cast<float>(-p.harm_down);
          break;
        case Role::plain: {
          auto rng = root.derive("plain", id.flat(cfg.d_mlp));
          const double mag = kPlainScale * (0.5 + 0.5 * rng.uniform());
          const double b = rng.uniform() < 0.5 ? -mag : mag;
          // |c| * p_max stays below 0.4 |b|, so the sign never depends on the prompt.
          const double c = p_max > 0.0 ? (2.0 * rng.uniform() - 1.0) * 0.4 * mag / p_max : 0.0;
          L.w_gate(Layout::kOne, i) = f;
          L.w_up(Layout::kOne, i) = static_cast<float>(b);
          L.w_up(Layout::kPolarity, i) = static_cast<float>(c);
          for (std::size_t k = Layout::kMinDModel; k < d; ++k) {
            L.w_down(i, k) = static_cast<float>(kFreeWrite * rng.normal());
          }
          break;
        }
      }
    }
  }
  w.unembedding(Layout::kOut, Layout::kCorrect) = static_cast<float>(p.beta);
  w.unembedding(Layout::kOut, Layout::kWrong) = static_cast<float>(-p.beta);
  w.unembedding(Layout::kOne, Layout::kCorrect) = static_cast<float>(p.gamma);
  w.unembedding(Layout::kOne, Layout::kWrong) = static_cast<float>(p.gamma);
  w.validate();
  return w;
}

ActivationTrace capture(const Weights& w, std::vector<TokenId> tokens) {
  ForwardOptions o;
  o.prompt_length = 2;
  o.capture_activations = true;
  o.capture_hidden = true;
  return *forward(w, tokens, o).trace;
}

double rms(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s / static_cast<double>(v.size()) + kNormEps);
}

Roles assign_roles(const ModelConfig& cfg, std::span<const NeuronId> planted,
                   const PlantedOptions& opts) {
  Roles r;
  r.of.assign(cfg.n_neurons(), Role::plain);
  for (const auto& id : planted) {
    if (id.layer >= cfg.n_layers || id.neuron >= cfg.d_mlp) {
      throw InvalidArgument(fmt::format("planted neuron (layer {}, neuron {}) out of range",
                                        id.layer, id.neuron));
    }
    auto& role = r.of[id.flat(cfg.d_mlp)];
    if (role == Role::planted) {
      throw InvalidArgument(
          fmt::format("planted neuron (layer {}, neuron {}) listed twice", id.layer, id.neuron));
    }
    role = Role::planted;
    r.planted.push_back(id);
  }
  std::sort(r.planted.begin(), r.planted.end());

  numerics::SeededRng rng(opts.seed, numerics::stream_id_of("planted.roles"));
  const auto pick = [&](std::vector<std::size_t> pool) {
    if (pool.empty()) return std::optional<std::size_t>{};
    return std::optional<std::size_t>{pool[rng.uniform_int(pool.size())]};
  };
  if (opts.harm) {
    std::vector<std::size_t> pool;
    const std::size_t last = cfg.n_layers - 1;
    for (std::size_t i = 0; i < cfg.d_mlp; ++i) {
      if (r.of[last * cfg.d_mlp + i] == Role::plain) pool.push_back(last * cfg.d_mlp + i);
    }
    const auto h = pick(pool);
    if (!h) throw InvalidArgument("no free last-layer neuron left for the harm neuron");
    r.of[*h] = Role::harm;
    r.harm = NeuronId::from_flat(*h, cfg.d_mlp);
  }
  for (std::size_t k = 0; k < opts.n_decoys; ++k) {
    std::vector<std::size_t> pool;
    for (std::size_t j = 0; j < r.of.size(); ++j) {
      if (r.of[j] == Role::plain) pool.push_back(j);
    }
    const auto dcy = pick(pool);
    if (!dcy) throw InvalidArgument("not enough free neurons for the requested decoys");
    r.of[*dcy] = Role::decoy;
    r.decoys.push_back(NeuronId::from_flat(*dcy, cfg.d_mlp));
  }
  std::sort(r.decoys.begin(), r.decoys.end());
  return r;
}

[[noreturn]] void construction_failed(const std::string& what) {
  throw std::logic_error("planted construction failed: " + what);
}

}  // namespace

PlantedModel build_planted_model(const ModelConfig& cfg, std::span<const NeuronId> planted,
                                 double margin, const PlantedOptions& opts) {
  cfg.validate();
  if (planted.empty()) throw InvalidArgument("planted set is empty");
  if (!(margin > 0.0) || !std::isfinite(margin)) {
    throw InvalidArgument(fmt::format("planted margin must be > 0, got {}", margin));
  }
  if (cfg.d_model < Layout::kMinDModel) {
    throw InvalidArgument(fmt::format("planted models need d_model >= {}, got {}",
                                      Layout::kMinDModel, cfg.d_model));
  }
  if (cfg.max_seq < 3) throw InvalidArgument("planted models need max_seq >= 3");
  std::vector<double> polarity = opts.polarity;
  if (polarity.empty()) polarity.assign(Layout::capacity(cfg.vocab_size), 1.0);
  if (polarity.empty() || polarity.size() > Layout::capacity(cfg.vocab_size)) {
    throw InvalidArgument(fmt::format(
        "vocabulary of {} holds {} instance slots (3 + 2 per slot), {} requested", cfg.vocab_size,
        Layout::capacity(cfg.vocab_size), std::max<std::size_t>(polarity.size(), 1)));
  }
  for (double v : polarity) {
    if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument("slot polarity must be > 0");
  }
  const double p_max = *std::max_element(polarity.begin(), polarity.end());
  const Roles roles = assign_roles(cfg, planted, opts);
  const std::size_t n_slots = polarity.size();

  PlantedModel out;
  out.planted = roles.planted;
  out.decoys = roles.decoys;
  out.harm = roles.harm;
  out.polarity = polarity;
  out.margin = margin;

  Params p;
  p.answer = opts.answer_gain * p_max;
  p.decoy = opts.decoy_strength;

  // Readout weight: summed planted activation at the last prompt token of a
  // unit-polarity prompt lands near 1 on the readout coordinate.
  {
    const Weights w = assemble(cfg, roles, polarity, p, opts.seed);
    const auto t = capture(w, out.prompt(0, false));
    double s = 0.0;
    for (const auto& id : roles.planted) s += std::abs(t.activation(1, id.layer, id.neuron));
    if (!(s > 0.0)) construction_failed("planted neurons are silent on prompts");
    p.omega = polarity[0] / s;
  }

  // Planted means scale linearly with kappa when the readout weight scales
  // with 1/kappa, so one measurement fixes kappa for the margin.
  const auto planted_means = [&](const Weights& w, std::size_t slot, bool corrupt, TokenId answer) {
    auto toks = out.prompt(slot, corrupt);
    toks.push_back(answer);
    const auto s = traces::trace_mean(capture(w, toks));
    std::vector<double> m;
    for (const auto& id : roles.planted) m.push_back(s.mean(id.layer, id.neuron));
    return m;
  };
  const auto min_signed_mean = [&](const Weights& w) {
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n_slots; ++j) {
      for (bool corrupt : {false, true}) {
        for (TokenId ans : {Layout::kCorrect, Layout::kWrong}) {
          const double sign = ans == Layout::kCorrect ? 1.0 : -1.0;
          for (double m : planted_means(w, j, corrupt, ans)) lo = std::min(lo, sign * m);
        }
      }
    }
    return lo;
  };
  {
    const double lo = min_signed_mean(assemble(cfg, roles, polarity, p, opts.seed));
    if (!(lo > 0.0)) construction_failed("answer token does not dominate the planted means");
    p.kappa = 1.05 * margin / lo;
    p.omega /= p.kappa;
  }

  // Harm neuron, measured on the residual entering the last MLP.
  if (roles.harm) {
    const Weights w = assemble(cfg, roles, polarity, p, opts.seed);
    const std::size_t level = cfg.n_layers - 1;
    double o_max = 0.0, r_max = 0.0, r_at_max = 0.0, ans_out = 0.0, ans_rms = 0.0;
    for (std::size_t j = 0; j < n_slots; ++j) {
      for (bool corrupt : {false, true}) {
        for (TokenId ans : {Layout::kCorrect, Layout::kWrong}) {
          auto toks = out.prompt(j, corrupt);
          toks.push_back(ans);
          const auto t = capture(w, toks);
          const auto h = t.hidden_state(1, level);
          const double r = rms(h);
          r_max = std::max(r_max, r);
          if (h[Layout::kOut] > o_max) {
            o_max = h[Layout::kOut];
            r_at_max = r;
          }
          const auto ha = t.hidden_state(2, level);
          ans_out = std::max(ans_out, std::abs(static_cast<double>(ha[Layout::kOut])));
          ans_rms = std::max(ans_rms, rms(ha));
        }
      }
    }
    if (!(o_max > 0.0) || !(opts.harm_threshold > 1.0)) {
      construction_failed("harm neuron needs a positive clean readout and threshold > 1");
    }
    const double tau = opts.harm_threshold * o_max;
    p.harm_out = kHarmOff * r_max / ((opts.harm_threshold - 1.0) * o_max);
    p.harm_theta = p.harm_out * tau;
    p.harm_flag = p.harm_out * ans_out + kHarmOff * ans_rms;
    p.harm_down = opts.harm_gain * r_at_max * r_at_max / p.harm_out;
  }

  // Unembedding: readout gap for sampling, constant offset so other tokens
  // stay far below both answers.
  {
    const Weights w = assemble(cfg, roles, polarity, p, opts.seed);
    std::vector<double> clean_out;
    double out_abs = 0.0, one_min = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n_slots; ++j) {
      for (bool corrupt : {false, true}) {
        const auto t = capture(w, out.prompt(j, corrupt));
        const auto xn = numerics::rms_norm(t.hidden_state(1, cfg.n_layers), w.final_norm, kNormEps);
        if (!corrupt) clean_out.push_back(xn[Layout::kOut]);
        out_abs = std::max(out_abs, std::abs(static_cast<double>(xn[Layout::kOut])));
        one_min = std::min(one_min, static_cast<double>(xn[Layout::kOne]));
      }
    }
    std::sort(clean_out.begin(), clean_out.end());
    const double median = clean_out[clean_out.size() / 2];
    if (!(median > 0.0)) construction_failed("clean prompts do not drive the readout positive");
    p.beta = opts.sampling_gap / (2.0 * median);
    p.gamma = (kLogitFloor + p.beta * out_abs) / one_min;
  }

  out.weights = assemble(cfg, roles, polarity, p, opts.seed);
  const Weights& w = out.weights;

  // Audit: greedy behavior and planted-mean signs on every slot.
  DecodeConfig greedy;
  greedy.capture = false;
  std::set<NeuronId> special(roles.planted.begin(), roles.planted.end());
  special.insert(roles.decoys.begin(), roles.decoys.end());
  if (roles.harm) special.insert(*roles.harm);
  for (std::size_t j = 0; j < n_slots; ++j) {
    traces::TraceSummary greedy_means[2];
    for (bool corrupt : {false, true}) {
      const auto g = generate(w, out.prompt(j, corrupt), greedy);
      if (PlantedModel::judge(g.generated()) == corrupt) {
        construction_failed(fmt::format("slot {} {} prompt decodes to token {}", j,
                                        corrupt ? "corrupt" : "clean", g.generated().front()));
      }
      for (TokenId ans : {Layout::kCorrect, Layout::kWrong}) {
        const double sign = ans == Layout::kCorrect ? 1.0 : -1.0;
        for (double m : planted_means(w, j, corrupt, ans)) {
          if (!(sign * m >= margin)) {
            construction_failed(fmt::format("slot {} planted mean {} misses margin {}", j, m, margin));
          }
        }
      }
      auto toks = out.prompt(j, corrupt);
      toks.push_back(corrupt ? Layout::kWrong : Layout::kCorrect);
      greedy_means[corrupt ? 1 : 0] = traces::trace_mean(capture(w, toks));
    }
    for (std::size_t f = 0; f < cfg.n_neurons(); ++f) {
      const auto id = NeuronId::from_flat(f, cfg.d_mlp);
      if (special.count(id)) continue;
      if (greedy_means[0].means[f] * greedy_means[1].means[f] <= 0.0) {
        construction_failed(fmt::format("plain neuron (layer {}, neuron {}) changes sign on slot {}",
                                        id.layer, id.neuron, j));
      }
    }
  }

  // Steering spec exactly as the identification pipeline derives it from one
  // contrastive pair of this model.
  std::vector<traces::LabeledTrace> pair_traces(2);
  for (int k = 0; k < 2; ++k) {
    auto toks = out.prompt(0, false);
    toks.push_back(k == 0 ? Layout::kCorrect : Layout::kWrong);
    pair_traces[k].instance_id = 0;
    pair_traces[k].seed = static_cast<std::uint64_t>(k);
    pair_traces[k].correct = k == 0;
    pair_traces[k].trace = capture(w, toks);
  }
  const std::vector<traces::ContrastivePair> pairs{{0, 0, 1}};
  const auto table = rcn::md_scores(pair_traces, pairs);
  const auto sel = rcn::select_neurons(table, {roles.planted.size(), true});
  std::vector<NeuronId> chosen = sel.neurons;
  std::sort(chosen.begin(), chosen.end());
  if (chosen != roles.planted) construction_failed("md selection does not return the planted set");
  SteeringSpec spec = rcn::build_steering(sel.neurons, table, 0.0);

  const auto fixes = [&](std::size_t j, double a) {
    spec.alpha = a;
    return PlantedModel::judge(generate(w, out.prompt(j, true), greedy, &spec).generated());
  };
  double best = 0.0;
  for (std::size_t j = 0; j < n_slots; ++j) {
    if (best > 0.0 && fixes(j, best)) continue;
    double lo = best, hi = std::max(best, 1.0 / 64.0);
    while (!fixes(j, hi)) {
      lo = hi;
      hi *= 2.0;
      if (hi > 1e6) construction_failed(fmt::format("no alpha fixes corrupt slot {}", j));
    }
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (fixes(j, mid) ? hi : lo) = mid;
    }
    best = hi;
  }
  out.alpha_star = best * (1.0 + 1e-4);
  for (std::size_t j = 0; j < n_slots; ++j) {
    if (!fixes(j, out.alpha_star)) {
      construction_failed(fmt::format("corrupt slot {} not fixed at alpha_star {}", j, out.alpha_star));
    }
  }
  spec.alpha = out.alpha_star;
  out.reference_steering = spec;
  return out;
}

}  // namespace steerlab::model
