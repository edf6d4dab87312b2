#include "steerlab/model/config.hpp"

#include <fmt/format.h>

#include "steerlab/error.hpp"
#include "steerlab/model/trace.hpp"

namespace steerlab::model {

void ModelConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || d_mlp == 0 || n_heads == 0 || vocab_size == 0 ||
      max_seq == 0) {
    throw InvalidArgument(fmt::format(
        "model config counts must be >= 1 (L={}, d={}, d_mlp={}, heads={}, vocab={}, max_seq={})",
        n_layers, d_model, d_mlp, n_heads, vocab_size, max_seq));
  }
  if (d_model % n_heads != 0) {
    throw InvalidArgument(
        fmt::format("d_model {} is not divisible by n_heads {}", d_model, n_heads));
  }
}

Weights Weights::zeros(const ModelConfig& cfg) {
  cfg.validate();
  Weights w;
  w.config = cfg;
  const auto d = cfg.d_model;
  w.token_embedding = Matrix(cfg.vocab_size, d);
  w.layers.resize(cfg.n_layers);
  for (auto& layer : w.layers) {
    layer.wq = Matrix(d, d);
    layer.wk = Matrix(d, d);
    layer.wv = Matrix(d, d);
    layer.wo = Matrix(d, d);
    layer.w_gate = Matrix(d, cfg.d_mlp);
    layer.w_up = Matrix(d, cfg.d_mlp);
    layer.w_down = Matrix(cfg.d_mlp, d);
    layer.attn_norm.assign(d, 1.0f);
    layer.mlp_norm.assign(d, 1.0f);
  }
  w.final_norm.assign(d, 1.0f);
  w.unembedding = Matrix(d, cfg.vocab_size);
  return w;
}

namespace {
void check_shape(const Matrix& m, std::size_t rows, std::size_t cols, std::string_view name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw InvalidArgument(
        fmt::format("weight {} has shape {}, expected {}x{}", name, m.shape_string(), rows, cols));
  }
  if (!numerics::all_finite(m.data())) {
    throw InvalidArgument(fmt::format("weight {} contains non-finite values", name));
  }
}

void check_gain(const std::vector<float>& g, std::size_t d, std::string_view name) {
  if (g.size() != d) {
    throw InvalidArgument(fmt::format("gain {} has length {}, expected {}", name, g.size(), d));
  }
  if (!numerics::all_finite(g)) {
    throw InvalidArgument(fmt::format("gain {} contains non-finite values", name));
  }
}
}  // namespace

void Weights::validate() const {
  config.validate();
  const auto d = config.d_model;
  check_shape(token_embedding, config.vocab_size, d, "token_embedding");
  if (layers.size() != config.n_layers) {
    throw InvalidArgument(
        fmt::format("weights have {} layers, config says {}", layers.size(), config.n_layers));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const auto tag = [l](std::string_view n) { return fmt::format("layers[{}].{}", l, n); };
    check_shape(L.wq, d, d, tag("wq"));
    check_shape(L.wk, d, d, tag("wk"));
    check_shape(L.wv, d, d, tag("wv"));
    check_shape(L.wo, d, d, tag("wo"));
    check_shape(L.w_gate, d, config.d_mlp, tag("w_gate"));
    check_shape(L.w_up, d, config.d_mlp, tag("w_up"));
    check_shape(L.w_down, config.d_mlp, d, tag("w_down"));
    check_gain(L.attn_norm, d, tag("attn_norm"));
    check_gain(L.mlp_norm, d, tag("mlp_norm"));
  }
  check_gain(final_norm, d, "final_norm");
  check_shape(unembedding, d, config.vocab_size, "unembedding");
}

void ActivationTrace::validate() const {
  if (prompt_length > tokens.size()) {
    throw InvalidArgument(fmt::format("trace prompt length {} exceeds token count {}",
                                      prompt_length, tokens.size()));
  }
  if (activations.size() != tokens.size() * n_layers * d_mlp) {
    throw InvalidArgument(fmt::format("trace activation tensor has {} values, expected {}x{}x{}",
                                      activations.size(), tokens.size(), n_layers, d_mlp));
  }
  if (!hidden.empty() && hidden.size() != tokens.size() * (n_layers + 1) * d_model) {
    throw InvalidArgument(fmt::format("trace hidden tensor has {} values, expected {}x{}x{}",
                                      hidden.size(), tokens.size(), n_layers + 1, d_model));
  }
}

}  // namespace steerlab::model
