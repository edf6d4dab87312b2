#include "steerlab/model/transformer.hpp"

#include <cmath>
#include <utility>

#include <fmt/format.h>

#include "steerlab/error.hpp"
#include "steerlab/numerics/ops.hpp"
#include "steerlab/numerics/rng.hpp"

namespace steerlab::model {

namespace {

using numerics::vec_mat;

void apply_rotary(std::span<float> x, std::size_t n_heads, std::size_t head_dim,
                  std::size_t pos) {
  const std::size_t half = head_dim / 2;
  for (std::size_t h = 0; h < n_heads; ++h) {
    float* v = x.data() + h * head_dim;
    for (std::size_t j = 0; j < half; ++j) {
      const double theta = static_cast<double>(pos) *
                           std::pow(kRopeBase, -2.0 * static_cast<double>(j) /
                                                   static_cast<double>(head_dim));
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      const double x0 = v[2 * j];
      const double x1 = v[2 * j + 1];
      v[2 * j] = static_cast<float>(x0 * c - x1 * s);
      v[2 * j + 1] = static_cast<float>(x0 * s + x1 * c);
    }
  }
}

// Incremental decoder with a per-layer KV cache. forward() and generate()
// both drive it one token at a time, so a prefill over N tokens and N single
// steps execute the identical arithmetic.
class Decoder {
 public:
  Decoder(const Weights& w, const ForwardOptions& opts) : w_(w), opts_(opts) {
    const auto& cfg = w_.config;
    k_cache_.resize(cfg.n_layers);
    v_cache_.resize(cfg.n_layers);
    steer_.resize(cfg.n_layers);
    if (opts_.steering != nullptr) {
      opts_.steering->validate(cfg);
      const double alpha = opts_.steering->alpha;
      if (alpha != 0.0) {
        for (const auto& e : opts_.steering->entries) {
          steer_[e.id.layer].emplace_back(e.id.neuron, alpha * e.value);
        }
      }
    }
    capture_ = opts_.capture_activations || opts_.capture_hidden;
    if (capture_) {
      trace_.n_layers = cfg.n_layers;
      trace_.d_mlp = cfg.d_mlp;
      trace_.d_model = cfg.d_model;
      trace_.prompt_length = opts_.prompt_length;
    }
  }

  // Processes the token at the next position. Returns logits when requested.
  std::vector<float> step(TokenId token, bool want_logits) {
    const auto& cfg = w_.config;
    if (token >= cfg.vocab_size) {
      throw InvalidArgument(
          fmt::format("token id {} out of range for vocabulary of {}", token, cfg.vocab_size));
    }
    if (pos_ >= cfg.max_seq) {
      throw InvalidArgument(
          fmt::format("sequence length {} exceeds max_seq {}", pos_ + 1, cfg.max_seq));
    }
    const auto d = cfg.d_model;
    const auto hd = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool steer_here =
        opts_.scope == SteerScope::all_positions || pos_ >= opts_.prompt_length;

    auto emb = w_.token_embedding.row(token);
    std::vector<float> h(emb.begin(), emb.end());
    if (capture_) {
      trace_.tokens.push_back(token);
      if (opts_.capture_hidden) trace_.hidden.insert(trace_.hidden.end(), h.begin(), h.end());
    }

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const auto& L = w_.layers[l];

      // Attention sub-block.
      const auto xn = numerics::rms_norm(h, L.attn_norm, kNormEps);
      auto q = vec_mat(xn, L.wq);
      auto k = vec_mat(xn, L.wk);
      auto v = vec_mat(xn, L.wv);
      apply_rotary(q, cfg.n_heads, hd, pos_);
      apply_rotary(k, cfg.n_heads, hd, pos_);
      auto& kc = k_cache_[l];
      auto& vc = v_cache_[l];
      kc.insert(kc.end(), k.begin(), k.end());
      vc.insert(vc.end(), v.begin(), v.end());
      const std::size_t n_ctx = pos_ + 1;
      std::vector<float> attn(d, 0.0f);
      std::vector<double> scores(n_ctx);
      for (std::size_t head = 0; head < cfg.n_heads; ++head) {
        const std::size_t off = head * hd;
        std::span<const float> qh(q.data() + off, hd);
        for (std::size_t p = 0; p < n_ctx; ++p) {
          scores[p] = numerics::dot(qh, std::span<const float>(kc.data() + p * d + off, hd)) * scale;
        }
        const auto probs = numerics::softmax(scores, 1.0);
        for (std::size_t j = 0; j < hd; ++j) {
          double acc = 0.0;
          for (std::size_t p = 0; p < n_ctx; ++p) acc += probs[p] * vc[p * d + off + j];
          attn[off + j] = static_cast<float>(acc);
        }
      }
      const auto attn_out = vec_mat(attn, L.wo);
      for (std::size_t i = 0; i < d; ++i) h[i] += attn_out[i];

      // SwiGLU MLP with steering injected at the post-activation.
      const auto mn = numerics::rms_norm(h, L.mlp_norm, kNormEps);
      const auto gate = vec_mat(mn, L.w_gate);
      const auto up = vec_mat(mn, L.w_up);
      std::vector<float> act(cfg.d_mlp);
      for (std::size_t i = 0; i < cfg.d_mlp; ++i) {
        act[i] = static_cast<float>(numerics::silu(gate[i]) * static_cast<double>(up[i]));
      }
      if (opts_.capture_activations && opts_.capture_point == CapturePoint::pre_steering) {
        trace_.activations.insert(trace_.activations.end(), act.begin(), act.end());
      }
      if (steer_here) {
        for (const auto& [neuron, delta] : steer_[l]) {
          act[neuron] = static_cast<float>(static_cast<double>(act[neuron]) + delta);
        }
      }
      if (opts_.capture_activations && opts_.capture_point == CapturePoint::post_steering) {
        trace_.activations.insert(trace_.activations.end(), act.begin(), act.end());
      }
      const auto down = vec_mat(act, L.w_down);
      for (std::size_t i = 0; i < d; ++i) h[i] += down[i];
      if (opts_.capture_hidden) trace_.hidden.insert(trace_.hidden.end(), h.begin(), h.end());
    }
    ++pos_;

    if (!want_logits) return {};
    const auto fn = numerics::rms_norm(h, w_.final_norm, kNormEps);
    return vec_mat(fn, w_.unembedding);
  }

  ActivationTrace take_trace() { return std::move(trace_); }
  bool capturing() const noexcept { return capture_; }

 private:
  const Weights& w_;
  ForwardOptions opts_;
  std::vector<std::vector<float>> k_cache_;
  std::vector<std::vector<float>> v_cache_;
  std::vector<std::vector<std::pair<std::uint32_t, double>>> steer_;
  std::size_t pos_ = 0;
  bool capture_ = false;
  ActivationTrace trace_;
};

TokenId sample_token(std::span<const float> logits, double temperature,
                     numerics::SeededRng& rng) {
  if (temperature == 0.0) return static_cast<TokenId>(numerics::argmax_first(logits));
  std::vector<double> z(logits.begin(), logits.end());
  const auto probs = numerics::softmax(z, temperature);
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = i;
    cum += probs[i];
    if (u < cum) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last_positive);
}

}  // namespace

ForwardResult forward(const Weights& w, std::span<const TokenId> tokens,
                      const ForwardOptions& opts) {
  if (tokens.size() > w.config.max_seq) {
    throw InvalidArgument(fmt::format("sequence length {} exceeds max_seq {}", tokens.size(),
                                      w.config.max_seq));
  }
  if (opts.prompt_length > tokens.size()) {
    throw InvalidArgument("prompt_length exceeds the number of tokens");
  }
  Decoder dec(w, opts);
  ForwardResult result;
  result.logits = Matrix(tokens.size(), w.config.vocab_size);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto logits = dec.step(tokens[t], true);
    std::copy(logits.begin(), logits.end(), result.logits.row(t).begin());
  }
  if (dec.capturing()) result.trace = dec.take_trace();
  return result;
}

Generation generate(const Weights& w, std::span<const TokenId> prompt, const DecodeConfig& cfg,
                    const SteeringSpec* steering) {
  if (prompt.empty()) throw InvalidArgument("generate: prompt must be non-empty");
  if (!(cfg.temperature >= 0.0)) throw InvalidArgument("generate: temperature must be >= 0");
  if (prompt.size() + cfg.max_new_tokens > w.config.max_seq) {
    throw InvalidArgument(fmt::format("prompt length {} + max_new_tokens {} exceeds max_seq {}",
                                      prompt.size(), cfg.max_new_tokens, w.config.max_seq));
  }
  ForwardOptions opts;
  opts.steering = steering;
  opts.scope = cfg.scope;
  opts.prompt_length = prompt.size();
  opts.capture_activations = cfg.capture;
  opts.capture_hidden = cfg.capture && cfg.capture_hidden;
  opts.capture_point = cfg.capture_point;

  Decoder dec(w, opts);
  numerics::SeededRng rng(cfg.seed, cfg.stream);
  Generation gen;
  gen.prompt_length = prompt.size();
  gen.tokens.assign(prompt.begin(), prompt.end());

  std::vector<float> logits;
  for (std::size_t t = 0; t < prompt.size(); ++t) {
    logits = dec.step(prompt[t], t + 1 == prompt.size() && cfg.max_new_tokens > 0);
  }
  for (std::size_t n = 0; n < cfg.max_new_tokens; ++n) {
    const TokenId next = sample_token(logits, cfg.temperature, rng);
    gen.tokens.push_back(next);
    const bool more = n + 1 < cfg.max_new_tokens;
    // The last token is still processed so its activations land in the trace.
    if (more || dec.capturing()) logits = dec.step(next, more);
  }
  if (dec.capturing()) gen.trace = dec.take_trace();
  return gen;
}

Weights build_random_model(const ModelConfig& cfg, std::uint64_t seed) {
  Weights w = Weights::zeros(cfg);
  const numerics::SeededRng root(seed, numerics::stream_id_of("model.init"));
  std::uint64_t tensor = 0;
  const auto fill = [&](Matrix& m, double scale) {
    auto rng = root.derive(tensor++);
    for (float& x : m.data()) x = static_cast<float>(rng.normal() * scale);
  };
  const auto inv_sqrt = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  fill(w.token_embedding, 1.0);
  for (auto& L : w.layers) {
    fill(L.wq, inv_sqrt(cfg.d_model));
    fill(L.wk, inv_sqrt(cfg.d_model));
    fill(L.wv, inv_sqrt(cfg.d_model));
    fill(L.wo, inv_sqrt(cfg.d_model));
    fill(L.w_gate, inv_sqrt(cfg.d_model));
    fill(L.w_up, inv_sqrt(cfg.d_model));
    fill(L.w_down, inv_sqrt(cfg.d_mlp));
  }
  fill(w.unembedding, inv_sqrt(cfg.d_model));
  return w;
}

}  // namespace steerlab::model
