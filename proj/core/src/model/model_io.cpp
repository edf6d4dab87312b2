#include "steerlab/model/model_io.hpp"

#include <string_view>

#include <fmt/format.h>

#include "steerlab/error.hpp"
#include "steerlab/io/binary.hpp"

namespace steerlab::model {

namespace {

constexpr std::string_view kMagic{kModelMagic, 8};

// Tensors in file order. W is Weights or const Weights.
template <typename W, typename Visitor>
void visit_tensors(W& w, Visitor&& visit) {
  visit(w.token_embedding.data(), "token_embedding");
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& L = w.layers[l];
    visit(L.wq.data(), "wq");
    visit(L.wk.data(), "wk");
    visit(L.wv.data(), "wv");
    visit(L.wo.data(), "wo");
    visit(L.w_gate.data(), "w_gate");
    visit(L.w_up.data(), "w_up");
    visit(L.w_down.data(), "w_down");
    visit(std::span(L.attn_norm), "attn_norm");
    visit(std::span(L.mlp_norm), "mlp_norm");
  }
  visit(std::span(w.final_norm), "final_norm");
  visit(w.unembedding.data(), "unembedding");
}

}  // namespace

std::vector<std::uint8_t> encode_model(const Weights& w) {
  w.validate();
  io::ByteWriter out;
  out.put_magic(kMagic);
  out.put_u32(kModelVersion);
  const auto& c = w.config;
  for (std::size_t v : {c.n_layers, c.d_model, c.d_mlp, c.n_heads, c.vocab_size, c.max_seq}) {
    out.put_u32(static_cast<std::uint32_t>(v));
  }
  visit_tensors(w, [&](std::span<const float> t, std::string_view) { out.put_f32s(t); });
  return out.take();
}

Weights decode_model(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes);
  in.expect_magic(kMagic);
  const auto version = in.get_u32("version");
  if (version != kModelVersion) {
    throw VersionError(fmt::format("unsupported model file version {} (expected {})", version,
                                  kModelVersion));
  }
  ModelConfig cfg;
  cfg.n_layers = in.get_u32("n_layers");
  cfg.d_model = in.get_u32("d_model");
  cfg.d_mlp = in.get_u32("d_mlp");
  cfg.n_heads = in.get_u32("n_heads");
  cfg.vocab_size = in.get_u32("vocab_size");
  cfg.max_seq = in.get_u32("max_seq");
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(fmt::format("invalid model config in file: {}", e.what()));
  }
  Weights w = Weights::zeros(cfg);
  visit_tensors(w, [&](std::span<float> t, std::string_view name) { in.get_f32s(t, name); });
  if (in.remaining() != 0) {
    throw FormatError(fmt::format("model file has {} trailing bytes", in.remaining()));
  }
  try {
    w.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(fmt::format("invalid model weights in file: {}", e.what()));
  }
  return w;
}

void save_model(const std::filesystem::path& path, const Weights& w) {
  io::write_file(path, encode_model(w));
}

Weights load_model(const std::filesystem::path& path) { return decode_model(io::read_file(path)); }

}  // namespace steerlab::model
