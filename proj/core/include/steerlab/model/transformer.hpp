#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "steerlab/model/config.hpp"
#include "steerlab/model/steering.hpp"
#include "steerlab/model/trace.hpp"

namespace steerlab::model {

enum class SteerScope {
  all_positions,   // prompt prefill and generated positions
  generated_only,  // positions >= prompt_length
};

enum class CapturePoint {
  post_steering,   // activations include alpha * S'
  pre_steering,
};

struct ForwardOptions {
  const SteeringSpec* steering = nullptr;
  SteerScope scope = SteerScope::all_positions;
  // Recorded in the trace; also the first steered position for generated_only.
  std::size_t prompt_length = 0;
  bool capture_activations = false;
  bool capture_hidden = false;
  CapturePoint capture_point = CapturePoint::post_steering;
};

struct ForwardResult {
  Matrix logits;                          // n_tokens x vocab
  std::optional<ActivationTrace> trace;   // set when any capture flag is on
};

// Pre-norm decoder pass with rotary causal attention and SwiGLU MLPs.
// Steering adds alpha * S'_l to the d_mlp post-activation vector of layer l
// before W_down. Without steering (or alpha == 0) the pass is bit-identical
// to the plain forward.
ForwardResult forward(const Weights& w, std::span<const TokenId> tokens,
                      const ForwardOptions& opts = {});

struct DecodeConfig {
  double temperature = 0.0;
  std::size_t max_new_tokens = 1;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  bool capture = true;
  bool capture_hidden = false;
  SteerScope scope = SteerScope::all_positions;
  CapturePoint capture_point = CapturePoint::post_steering;
};

struct Generation {
  std::vector<TokenId> tokens;   // prompt followed by generated tokens
  std::size_t prompt_length = 0;
  ActivationTrace trace;         // covers every token; empty when capture is off

  std::span<const TokenId> generated() const noexcept {
    return std::span<const TokenId>(tokens).subspan(prompt_length);
  }
};

// Greedy (temperature 0, argmax_first) or sampled decoding. The final
// generated token is also run through the model so the trace covers the full
// sequence and equals forward() on the returned tokens.
Generation generate(const Weights& w, std::span<const TokenId> prompt, const DecodeConfig& cfg,
                    const SteeringSpec* steering = nullptr);

// I.i.d. normal entries scaled by 1/sqrt(fan_in); unit norm gains.
Weights build_random_model(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace steerlab::model
