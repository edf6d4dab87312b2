#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "steerlab/traces/traces.hpp"

namespace steerlab::traces {

inline constexpr char kStoreMagic[] = "ADRSTRC1";
inline constexpr std::uint32_t kStoreVersion = 1;

// Binary trace store. Layout after the 8-byte magic:
//   u32 version, n_traces, n_layers, d_mlp, d_model, flags (bit0 = hidden)
//   per trace: u64 instance_id, u64 seed, u8 correct, u32 prompt_length,
//              u32 n_tokens, u32 token ids, f32 activations
//              (token-major, then layer-major), optional f32 hidden states
//   u32 CRC32 of every byte between the magic and the checksum.
struct TraceStore {
  std::size_t n_layers = 0;
  std::size_t d_mlp = 0;
  std::size_t d_model = 0;
  bool has_hidden = false;
  std::vector<LabeledTrace> traces;

  bool operator==(const TraceStore&) const = default;
};

// Builds a store from traces; dimensions taken from the first trace.
TraceStore make_store(std::vector<LabeledTrace> traces);

std::vector<std::uint8_t> encode_store(const TraceStore& store);
TraceStore decode_store(std::span<const std::uint8_t> bytes);

void save_store(const std::filesystem::path& path, const TraceStore& store);
TraceStore load_store(const std::filesystem::path& path);

}  // namespace steerlab::traces
