#include "steerlab/traces/store.hpp"

#include <string_view>

#include <fmt/format.h>

#include "steerlab/error.hpp"
#include "steerlab/io/binary.hpp"

namespace steerlab::traces {

namespace {
constexpr std::string_view kMagic{kStoreMagic, 8};
constexpr std::size_t kMagicSize = 8;
}  // namespace

TraceStore make_store(std::vector<LabeledTrace> traces) {
  TraceStore s;
  if (!traces.empty()) {
    const auto& t0 = traces.front().trace;
    s.n_layers = t0.n_layers;
    s.d_mlp = t0.d_mlp;
    s.d_model = t0.d_model;
    s.has_hidden = t0.has_hidden();
  }
  s.traces = std::move(traces);
  return s;
}

std::vector<std::uint8_t> encode_store(const TraceStore& store) {
  io::ByteWriter out;
  out.put_magic(kMagic);
  out.put_u32(kStoreVersion);
  out.put_u32(static_cast<std::uint32_t>(store.traces.size()));
  out.put_u32(static_cast<std::uint32_t>(store.n_layers));
  out.put_u32(static_cast<std::uint32_t>(store.d_mlp));
  out.put_u32(static_cast<std::uint32_t>(store.d_model));
  out.put_u32(store.has_hidden ? 1u : 0u);
  for (std::size_t i = 0; i < store.traces.size(); ++i) {
    const auto& lt = store.traces[i];
    const auto& t = lt.trace;
    t.validate();
    if (t.n_layers != store.n_layers || t.d_mlp != store.d_mlp ||
        (store.has_hidden && t.d_model != store.d_model)) {
      throw InvalidArgument(fmt::format("trace {} shape does not match the store header", i));
    }
    if (t.has_hidden() != store.has_hidden) {
      throw InvalidArgument(fmt::format("trace {} hidden-state presence differs from the store", i));
    }
    out.put_u64(lt.instance_id);
    out.put_u64(lt.seed);
    out.put_u8(lt.correct ? 1 : 0);
    out.put_u32(static_cast<std::uint32_t>(t.prompt_length));
    out.put_u32(static_cast<std::uint32_t>(t.n_tokens()));
    for (auto tok : t.tokens) out.put_u32(tok);
    out.put_f32s(t.activations);
    if (store.has_hidden) out.put_f32s(t.hidden);
  }
  auto bytes = out.take();
  const auto crc = io::crc32(std::span<const std::uint8_t>(bytes).subspan(kMagicSize));
  io::ByteWriter tail;
  tail.put_u32(crc);
  bytes.insert(bytes.end(), tail.bytes().begin(), tail.bytes().end());
  return bytes;
}

TraceStore decode_store(std::span<const std::uint8_t> bytes) {
  io::ByteReader head(bytes);
  head.expect_magic(kMagic);
  const auto version = head.get_u32("version");
  if (version != kStoreVersion) {
    throw VersionError(fmt::format("unsupported trace store version {} (expected {})", version,
                                  kStoreVersion));
  }
  if (bytes.size() < kMagicSize + 4 * 7) throw FormatError("truncated file: incomplete header");
  const auto body = bytes.first(bytes.size() - 4);
  const auto payload = body.subspan(kMagicSize);
  io::ByteReader crc_reader(bytes.last(4));
  const auto stored_crc = crc_reader.get_u32("checksum");

  io::ByteReader in(body);
  in.expect_magic(kMagic);
  in.get_u32("version");
  TraceStore s;
  const auto n_traces = in.get_u32("n_traces");
  s.n_layers = in.get_u32("n_layers");
  s.d_mlp = in.get_u32("d_mlp");
  s.d_model = in.get_u32("d_model");
  const auto flags = in.get_u32("flags");
  s.has_hidden = (flags & 1u) != 0;
  s.traces.reserve(n_traces);
  for (std::uint32_t i = 0; i < n_traces; ++i) {
    LabeledTrace lt;
    lt.instance_id = in.get_u64("instance_id");
    lt.seed = in.get_u64("seed");
    lt.correct = in.get_u8("correctness") != 0;
    auto& t = lt.trace;
    t.prompt_length = in.get_u32("prompt_length");
    const auto n_tokens = in.get_u32("n_tokens");
    t.n_layers = s.n_layers;
    t.d_mlp = s.d_mlp;
    t.d_model = s.d_model;
    if (t.prompt_length > n_tokens) {
      throw FormatError(fmt::format("trace {}: prompt length exceeds token count", i));
    }
    // Guard allocation sizes against corrupted counts before resizing.
    const std::size_t act_bytes = std::size_t{n_tokens} * s.n_layers * s.d_mlp * 4;
    if (std::size_t{n_tokens} * 4 + act_bytes > in.remaining()) {
      throw FormatError(fmt::format("truncated file: trace {} extends past the end", i));
    }
    t.tokens.resize(n_tokens);
    for (auto& tok : t.tokens) tok = in.get_u32("token id");
    t.activations.resize(std::size_t{n_tokens} * s.n_layers * s.d_mlp);
    in.get_f32s(t.activations, "activations");
    if (s.has_hidden) {
      const std::size_t n_hidden = std::size_t{n_tokens} * (s.n_layers + 1) * s.d_model;
      if (n_hidden * 4 > in.remaining()) {
        throw FormatError(fmt::format("truncated file: trace {} hidden states", i));
      }
      t.hidden.resize(n_hidden);
      in.get_f32s(t.hidden, "hidden states");
    }
    s.traces.push_back(std::move(lt));
  }
  if (in.remaining() != 0) {
    throw FormatError(fmt::format("trace store has {} unexpected trailing bytes", in.remaining()));
  }
  const auto crc = io::crc32(payload);
  if (crc != stored_crc) {
    throw FormatError(
        fmt::format("trace store checksum mismatch: stored {:08x}, computed {:08x}", stored_crc, crc));
  }
  return s;
}

void save_store(const std::filesystem::path& path, const TraceStore& store) {
  io::write_file(path, encode_store(store));
}

TraceStore load_store(const std::filesystem::path& path) {
  return decode_store(io::read_file(path));
}

}  // namespace steerlab::traces
