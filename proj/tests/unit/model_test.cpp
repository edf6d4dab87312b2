#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "steerlab/error.hpp"
#include "steerlab/model/model_io.hpp"
#include "steerlab/model/planted.hpp"
#include "steerlab/model/transformer.hpp"
#include "steerlab/numerics/ops.hpp"
#include "steerlab/numerics/rng.hpp"

using namespace steerlab;
using namespace steerlab::model;

namespace {

const ModelConfig kSmall{2, 8, 12, 2, 11, 10};

std::vector<TokenId> random_prompt(numerics::SeededRng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> p(n);
  for (auto& t : p) t = static_cast<TokenId>(rng.uniform_int(vocab));
  return p;
}

SteeringSpec dense_spec(const ModelConfig& cfg, double alpha) {
  SteeringSpec s;
  s.alpha = alpha;
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    for (std::uint32_t i = 0; i < cfg.d_mlp; i += 3) s.entries.push_back({{l, i}, 0.7 - 0.1 * i});
  }
  return s;
}

}  // namespace

TEST(Config, RejectsBadShapes) {
  ModelConfig c = kSmall;
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = kSmall;
  c.d_mlp = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  EXPECT_NO_THROW(kSmall.validate());
}

TEST(Forward, ZeroAlphaIsBitIdenticalToUnsteered) {
  numerics::SeededRng rng(3, 0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto w = build_random_model(kSmall, seed);
    auto prompt = random_prompt(rng, 1 + rng.uniform_int(kSmall.max_seq), kSmall.vocab_size);
    auto spec = dense_spec(kSmall, 0.0);
    ForwardOptions steered;
    steered.steering = &spec;
    EXPECT_EQ(forward(w, prompt).logits, forward(w, prompt, steered).logits);
  }
}

TEST(Forward, NonzeroAlphaChangesLogits) {
  auto w = build_random_model(kSmall, 1);
  std::vector<TokenId> prompt{1, 2, 3};
  auto spec = dense_spec(kSmall, 2.0);
  ForwardOptions steered;
  steered.steering = &spec;
  EXPECT_NE(forward(w, prompt).logits, forward(w, prompt, steered).logits);
}

TEST(Forward, CausalPrefixProperty) {
  numerics::SeededRng rng(4, 0);
  auto w = build_random_model(kSmall, 9);
  auto seq = random_prompt(rng, 8, kSmall.vocab_size);
  auto full = forward(w, seq).logits;
  for (std::size_t n = 1; n < seq.size(); ++n) {
    auto part = forward(w, std::span<const TokenId>(seq).first(n)).logits;
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t v = 0; v < kSmall.vocab_size; ++v) ASSERT_EQ(part(t, v), full(t, v));
    }
  }
}

TEST(Forward, CaptureShapesAndPostSteeringSite) {
  auto w = build_random_model(kSmall, 2);
  std::vector<TokenId> prompt{0, 4, 5};
  SteeringSpec spec;
  spec.alpha = 1.5;
  spec.entries = {{{1, 2}, 2.0}};
  ForwardOptions plain;
  plain.capture_activations = plain.capture_hidden = true;
  ForwardOptions pre = plain;
  pre.steering = &spec;
  pre.capture_point = CapturePoint::pre_steering;
  ForwardOptions post = plain;
  post.steering = &spec;

  auto a = forward(w, prompt, plain).trace.value();
  EXPECT_EQ(a.activations.size(), 3 * kSmall.n_layers * kSmall.d_mlp);
  EXPECT_EQ(a.hidden.size(), 3 * (kSmall.n_layers + 1) * kSmall.d_model);
  EXPECT_NO_THROW(a.validate());

  auto b = forward(w, prompt, pre).trace.value();
  auto c = forward(w, prompt, post).trace.value();
  for (std::size_t t = 0; t < 3; ++t) {
    // Layer 0 is upstream of the injection, so pre and post agree there.
    EXPECT_EQ(b.activation(t, 0, 2), a.activation(t, 0, 2));
    EXPECT_FLOAT_EQ(c.activation(t, 1, 2), b.activation(t, 1, 2) + 3.0f);
  }
}

TEST(Forward, GeneratedOnlyScopeLeavesPromptUntouched) {
  auto w = build_random_model(kSmall, 5);
  std::vector<TokenId> seq{1, 2, 3, 4};
  auto spec = dense_spec(kSmall, 1.0);
  ForwardOptions opts;
  opts.steering = &spec;
  opts.scope = SteerScope::generated_only;
  opts.prompt_length = 3;
  auto steered = forward(w, seq, opts).logits;
  auto plain = forward(w, seq).logits;
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t v = 0; v < kSmall.vocab_size; ++v) EXPECT_EQ(steered(t, v), plain(t, v));
  }
  bool changed = false;
  for (std::size_t v = 0; v < kSmall.vocab_size; ++v) changed |= steered(3, v) != plain(3, v);
  EXPECT_TRUE(changed);
}

TEST(Generate, TraceEqualsForwardOnReturnedTokens) {
  auto w = build_random_model(kSmall, 6);
  std::vector<TokenId> prompt{3, 1};
  DecodeConfig dc;
  dc.max_new_tokens = 4;
  dc.temperature = 1.0;
  dc.seed = 12;
  auto g = generate(w, prompt, dc);
  ASSERT_EQ(g.tokens.size(), 6u);
  ForwardOptions fo;
  fo.capture_activations = true;
  fo.prompt_length = 2;
  auto trace = forward(w, g.tokens, fo).trace.value();
  EXPECT_EQ(trace.activations, g.trace.activations);
  EXPECT_EQ(g.trace.prompt_length, 2u);
  // Same identifiers reproduce the same sample.
  EXPECT_EQ(generate(w, prompt, dc).tokens, g.tokens);
}

TEST(Generate, GreedyPicksArgmax) {
  auto w = build_random_model(kSmall, 7);
  std::vector<TokenId> prompt{2, 2, 5};
  auto g = generate(w, prompt, {});
  auto logits = forward(w, prompt).logits;
  EXPECT_EQ(g.generated()[0], numerics::argmax_first(logits.row(2)));
}

TEST(Steering, NormalizeSortsAndRejectsDuplicates) {
  SteeringSpec s;
  s.entries = {{{1, 0}, 1.0}, {{0, 3}, 2.0}};
  s.normalize();
  EXPECT_EQ(s.entries[0].id, (NeuronId{0, 3}));
  s.entries.push_back({{0, 3}, 5.0});
  EXPECT_THROW(s.normalize(), InvalidArgument);
  SteeringSpec neg;
  neg.alpha = -1.0;
  EXPECT_THROW(neg.normalize(), InvalidArgument);
  SteeringSpec out;
  out.entries = {{{5, 0}, 1.0}};
  EXPECT_THROW(out.validate(kSmall), InvalidArgument);
}

TEST(ModelIo, RoundTripIsBitExact) {
  auto w = build_random_model(kSmall, 8);
  auto bytes = encode_model(w);
  EXPECT_EQ(decode_model(bytes), w);
  EXPECT_EQ(encode_model(decode_model(bytes)), bytes);
  auto path = std::filesystem::temp_directory_path() / "steerlab_model_test.bin";
  save_model(path, w);
  EXPECT_EQ(load_model(path), w);
  std::filesystem::remove(path);
}

TEST(ModelIo, NamedErrorsForMagicVersionTruncation) {
  auto bytes = encode_model(build_random_model(kSmall, 8));
  auto bad_magic = bytes;
  bad_magic[0] ^= 0xff;
  EXPECT_THROW(decode_model(bad_magic), BadMagicError);
  auto bad_version = bytes;
  bad_version[8] = 99;  // u32 version follows the 8-byte magic
  EXPECT_THROW(decode_model(bad_version), VersionError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_model(truncated), FormatError);
}

TEST(Planted, GreedyAnswersFollowPromptVariant) {
  ModelConfig cfg{2, 12, 16, 2, 3 + 2 * 6, 8};
  std::vector<NeuronId> planted{{0, 3}, {1, 5}};
  PlantedOptions po;
  po.polarity = {0.8, 1.0, 1.2, 0.9, 1.1, 1.0};
  auto pm = build_planted_model(cfg, planted, 0.5, po);
  for (std::size_t s = 0; s < pm.n_slots(); ++s) {
    auto clean = generate(pm.weights, pm.prompt(s, false), {});
    auto corrupt = generate(pm.weights, pm.prompt(s, true), {});
    EXPECT_TRUE(PlantedModel::judge(clean.generated()));
    EXPECT_FALSE(PlantedModel::judge(corrupt.generated()));
    auto fixed = generate(pm.weights, pm.prompt(s, true), {}, &pm.reference_steering);
    EXPECT_TRUE(PlantedModel::judge(fixed.generated()));
  }
  EXPECT_GT(pm.alpha_star, 0.0);
}

TEST(Planted, RejectsBadPlantedSets) {
  ModelConfig cfg{2, 12, 16, 2, 15, 8};
  std::vector<NeuronId> dup{{0, 1}, {0, 1}};
  EXPECT_THROW(build_planted_model(cfg, dup, 0.5), InvalidArgument);
  std::vector<NeuronId> out{{2, 0}};
  EXPECT_THROW(build_planted_model(cfg, out, 0.5), InvalidArgument);
  std::vector<NeuronId> none;
  EXPECT_THROW(build_planted_model(cfg, none, 0.5), InvalidArgument);
}

TEST(Forward, InjectionIsLinearInAlpha) {
  // Layer-0 steering cannot reach layer-0 attention or MLP inputs, so the
  // block output moves by exactly alpha * S' W_down.
  ModelConfig cfg{1, 8, 12, 2, 11, 10};
  auto w = build_random_model(cfg, 3);
  std::vector<TokenId> prompt{1, 4, 2};
  SteeringSpec spec;
  spec.entries = {{{0, 1}, 0.8}, {{0, 7}, -1.3}};
  std::vector<float> s(cfg.d_mlp, 0.0f);
  for (const auto& e : spec.entries) s[e.id.neuron] = static_cast<float>(e.value);
  const auto delta = numerics::vec_mat(s, w.layers[0].w_down);
  ForwardOptions base;
  base.capture_hidden = true;
  const auto h0 = forward(w, prompt, base).trace.value();
  for (double alpha : {0.5, 2.0, 7.0}) {
    auto opts = base;
    auto spec_a = spec.with_alpha(alpha);
    opts.steering = &spec_a;
    const auto h = forward(w, prompt, opts).trace.value();
    for (std::size_t t = 0; t < prompt.size(); ++t) {
      const auto a = h.hidden_state(t, 1), b = h0.hidden_state(t, 1);
      for (std::size_t i = 0; i < cfg.d_model; ++i) {
        const double want = alpha * delta[i];
        EXPECT_LE(std::abs((a[i] - b[i]) - want), 1e-4 * std::max(1.0, std::abs(want)));
      }
    }
  }
}

TEST(Planted, SignOfPlantedMeanMatchesCorrectnessOnGreedyTraces) {
  ModelConfig cfg{2, 12, 16, 2, 3 + 2 * 6, 8};
  std::vector<NeuronId> planted{{0, 2}, {1, 9}};
  PlantedOptions po;
  po.polarity = {0.8, 1.0, 1.2, 0.9, 1.1, 1.0};
  auto pm = build_planted_model(cfg, planted, 0.5, po);
  for (std::size_t slot = 0; slot < pm.n_slots(); ++slot) {
    for (bool corrupt : {false, true}) {
      DecodeConfig dc;
      dc.temperature = 0.0;
      const auto g = generate(pm.weights, pm.prompt(slot, corrupt), dc);
      const bool correct = PlantedModel::judge(g.generated());
      EXPECT_EQ(correct, !corrupt);
      for (const auto& id : planted) {
        double mean = 0.0;
        for (std::size_t t = 0; t < g.trace.n_tokens(); ++t) mean += g.trace.activation(t, id.layer, id.neuron);
        EXPECT_EQ(mean > 0.0, correct) << "slot " << slot;
      }
    }
  }
}
