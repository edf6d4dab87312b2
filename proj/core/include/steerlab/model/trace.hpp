#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "steerlab/model/config.hpp"

namespace steerlab::model {

// Everything captured from one pass over a token sequence.
//   activations: n_tokens x n_layers x d_mlp, MLP post-activation (after the
//                SwiGLU product, at the steering injection site)
//   hidden:      n_tokens x (n_layers + 1) x d_model residual stream, index 0
//                is the embedding output and index L the last block output
//                (before the final norm). Empty when not captured.
struct ActivationTrace {
  std::vector<TokenId> tokens;
  std::size_t prompt_length = 0;
  std::size_t n_layers = 0;
  std::size_t d_mlp = 0;
  std::size_t d_model = 0;
  std::vector<float> activations;
  std::vector<float> hidden;

  std::size_t n_tokens() const noexcept { return tokens.size(); }
  std::size_t n_generated() const noexcept { return tokens.size() - prompt_length; }
  bool has_hidden() const noexcept { return !hidden.empty(); }

  std::span<const float> activation_row(std::size_t token, std::size_t layer) const noexcept {
    return {activations.data() + (token * n_layers + layer) * d_mlp, d_mlp};
  }
  std::span<float> activation_row(std::size_t token, std::size_t layer) noexcept {
    return {activations.data() + (token * n_layers + layer) * d_mlp, d_mlp};
  }
  float activation(std::size_t token, std::size_t layer, std::size_t neuron) const noexcept {
    return activations[(token * n_layers + layer) * d_mlp + neuron];
  }
  // Residual state h_t^l, l in [0, n_layers].
  std::span<const float> hidden_state(std::size_t token, std::size_t level) const noexcept {
    return {hidden.data() + (token * (n_layers + 1) + level) * d_model, d_model};
  }

  // Tensor sizes consistent with the header fields. Throws InvalidArgument.
  void validate() const;

  bool operator==(const ActivationTrace&) const = default;
};

}  // namespace steerlab::model
