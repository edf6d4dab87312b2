#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "steerlab/model/config.hpp"

namespace steerlab::model {

inline constexpr char kModelMagic[] = "ADRSMDL1";
inline constexpr std::uint32_t kModelVersion = 1;

// Layout: magic, version u32, config (n_layers, d_model, d_mlp, n_heads,
// vocab_size, max_seq) as u32, then matrices as f32 row-major in order:
// token_embedding; per layer wq, wk, wv, wo, w_gate, w_up, w_down,
// attn_norm, mlp_norm; final_norm; unembedding. All little-endian.
std::vector<std::uint8_t> encode_model(const Weights& w);
Weights decode_model(std::span<const std::uint8_t> bytes);

void save_model(const std::filesystem::path& path, const Weights& w);
Weights load_model(const std::filesystem::path& path);

}  // namespace steerlab::model
