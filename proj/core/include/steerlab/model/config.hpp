#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "steerlab/numerics/matrix.hpp"

namespace steerlab::model {

using TokenId = std::uint32_t;
using numerics::Matrix;

inline constexpr double kNormEps = 1e-6;
inline constexpr double kRopeBase = 10000.0;

struct ModelConfig {
  std::size_t n_layers = 1;
  std::size_t d_model = 8;
  std::size_t d_mlp = 16;
  std::size_t n_heads = 1;
  std::size_t vocab_size = 16;
  std::size_t max_seq = 16;

  std::size_t head_dim() const noexcept { return d_model / n_heads; }
  std::size_t n_neurons() const noexcept { return n_layers * d_mlp; }

  // Throws InvalidArgument on zero counts or d_model % n_heads != 0.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Projections follow the row-vector convention y = x * W, so W has shape
// (in, out). The MLP is SwiGLU: silu(x W_gate) * (x W_up), then W_down.
struct LayerWeights {
  Matrix wq, wk, wv, wo;            // d x d
  Matrix w_gate, w_up;              // d x d_mlp
  Matrix w_down;                    // d_mlp x d
  std::vector<float> attn_norm;     // d
  std::vector<float> mlp_norm;      // d

  bool operator==(const LayerWeights&) const = default;
};

struct Weights {
  ModelConfig config;
  Matrix token_embedding;           // vocab x d
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;    // d
  Matrix unembedding;               // d x vocab

  // Allocates zero matrices and unit gains for `cfg`.
  static Weights zeros(const ModelConfig& cfg);

  // Shapes consistent with config and every entry finite.
  void validate() const;

  bool operator==(const Weights&) const = default;
};

}  // namespace steerlab::model
