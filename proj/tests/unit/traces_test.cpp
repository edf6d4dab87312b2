#include <algorithm>
#include <filesystem>
#include <map>
#include <vector>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "steerlab/error.hpp"
#include "steerlab/model/planted.hpp"
#include "steerlab/model/transformer.hpp"
#include "steerlab/traces/store.hpp"
#include "steerlab/traces/traces.hpp"

using namespace steerlab;
using namespace steerlab::traces;

namespace {

LabeledTrace labeled(std::uint64_t id, std::uint64_t seed, bool correct) {
  LabeledTrace t;
  t.instance_id = id;
  t.seed = seed;
  t.correct = correct;
  return t;
}

}  // namespace

TEST(Judge, PrefixMatch) {
  TaskInstance inst;
  inst.answer = {4, 5};
  std::vector<model::TokenId> good{4, 5, 9}, bad{4, 6}, short_{4};
  EXPECT_TRUE(inst.judge(good));
  EXPECT_FALSE(inst.judge(bad));
  EXPECT_FALSE(inst.judge(short_));
}

TEST(Pairs, CountIsMinOfOutcomesPerInstance) {
  numerics::SeededRng rng(1, 0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<LabeledTrace> ts;
    std::map<std::uint64_t, std::pair<std::size_t, std::size_t>> counts;
    const std::size_t n_inst = 1 + rng.uniform_int(5);
    for (std::uint64_t id = 0; id < n_inst; ++id) {
      const std::size_t n = rng.uniform_int(8);
      for (std::size_t k = 0; k < n; ++k) {
        const bool c = rng.uniform() < 0.5;
        ts.push_back(labeled(id, 100 * id + k, c));
        (c ? counts[id].first : counts[id].second)++;
      }
    }
    // Shuffle so the builder cannot rely on input order.
    for (std::size_t i = ts.size(); i > 1; --i) std::swap(ts[i - 1], ts[rng.uniform_int(i)]);
    auto pairs = build_pairs(ts);
    std::size_t expected = 0;
    for (auto& [id, c] : counts) expected += std::min(c.first, c.second);
    ASSERT_EQ(pairs.size(), expected);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& p = pairs[i];
      EXPECT_TRUE(ts[p.positive].correct);
      EXPECT_FALSE(ts[p.negative].correct);
      EXPECT_EQ(ts[p.positive].instance_id, p.instance_id);
      EXPECT_EQ(ts[p.negative].instance_id, p.instance_id);
      if (i > 0) {
        EXPECT_LE(pairs[i - 1].instance_id, p.instance_id);
      }
    }
  }
}

TEST(Pairs, MatchedInSeedOrder) {
  std::vector<LabeledTrace> ts{labeled(0, 5, true), labeled(0, 1, false), labeled(0, 2, true),
                               labeled(0, 3, false)};
  auto pairs = build_pairs(ts);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].positive, 2u);  // seed 2
  EXPECT_EQ(pairs[0].negative, 1u);  // seed 1
  EXPECT_EQ(pairs[1].positive, 0u);
  EXPECT_EQ(pairs[1].negative, 3u);
}

TEST(Pairs, BalanceDropsInstancesWithOtherCounts) {
  std::vector<LabeledTrace> ts{labeled(0, 0, true), labeled(0, 1, false), labeled(1, 0, true),
                               labeled(1, 1, true), labeled(1, 2, false)};
  auto pairs = build_pairs(ts, Balance{1, 1});
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].instance_id, 0u);
}

TEST(TraceMean, HandValuesPerSpan) {
  model::ActivationTrace t;
  t.n_layers = 1;
  t.d_mlp = 2;
  t.prompt_length = 2;
  t.tokens = {0, 1, 2};
  t.activations = {1, 10, 3, 20, 8, 60};
  EXPECT_EQ(trace_mean(t).means, (std::vector<double>{4.0, 30.0}));
  EXPECT_EQ(trace_mean(t, TokenSpan::prompt).means, (std::vector<double>{2.0, 15.0}));
  EXPECT_EQ(trace_mean(t, TokenSpan::generated).means, (std::vector<double>{8.0, 60.0}));
  t.prompt_length = 3;
  EXPECT_THROW(trace_mean(t, TokenSpan::generated), InvalidArgument);
}

TEST(Sampling, SeedsAreDistinctAndReproducible) {
  auto w = model::build_random_model({1, 8, 8, 1, 6, 8}, 3);
  TaskInstance inst{4, {1, 2}, {3}, "x"};
  SampleConfig sc;
  sc.n = 6;
  sc.seed = 10;
  auto a = sample_traces(w, inst, sc);
  auto b = sample_traces(w, inst, sc);
  ASSERT_EQ(a.size(), 6u);
  EXPECT_EQ(a, b);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].seed, trace_seed(10, 4, k));
    EXPECT_EQ(a[k].correct, inst.judge(a[k].answer()));
    if (k > 0) {
      EXPECT_LT(a[k - 1].seed, a[k].seed);
    }
  }
}

TEST(Store, RoundTripIsBitExactWithAndWithoutHidden) {
  for (std::size_t d_model : {0u, 5u}) {
    numerics::SeededRng rng(2, d_model);
    std::vector<LabeledTrace> ts;
    for (std::uint64_t i = 0; i < 4; ++i) {
      LabeledTrace lt = labeled(i, 7 * i, i % 2 == 0);
      lt.trace = fixtures::random_trace(rng, 2, 3, 3 + i, 2, d_model);
      ts.push_back(std::move(lt));
    }
    auto store = make_store(ts);
    auto bytes = encode_store(store);
    EXPECT_EQ(decode_store(bytes), store);
    EXPECT_EQ(encode_store(decode_store(bytes)), bytes);
    auto path = std::filesystem::temp_directory_path() / "steerlab_store_test.bin";
    save_store(path, store);
    EXPECT_EQ(load_store(path), store);
    std::filesystem::remove(path);
  }
}

TEST(Store, NamedErrorsAndChecksum) {
  numerics::SeededRng rng(3, 0);
  LabeledTrace lt = labeled(0, 0, true);
  lt.trace = fixtures::random_trace(rng, 1, 2, 3, 1);
  auto bytes = encode_store(make_store({lt}));
  auto bad_magic = bytes;
  bad_magic[2] ^= 0x20;
  EXPECT_THROW(decode_store(bad_magic), BadMagicError);
  auto bad_version = bytes;
  bad_version[8] = 2;
  EXPECT_THROW(decode_store(bad_version), VersionError);
  auto flipped = bytes;
  flipped[bytes.size() - 8] ^= 0x01;
  EXPECT_THROW(decode_store(flipped), FormatError);
  auto truncated = bytes;
  truncated.resize(20);
  EXPECT_THROW(decode_store(truncated), FormatError);
}

TEST(Properties, PairingIsInvariantUnderTraceOrderShuffle) {
  numerics::SeededRng rng(30, 0);
  std::vector<LabeledTrace> ts;
  for (std::uint64_t id = 0; id < 6; ++id) {
    for (std::uint64_t s = 0; s < 7; ++s) ts.push_back(labeled(id, 10 * id + s, rng.uniform() < 0.5));
  }
  auto key_set = [](const std::vector<LabeledTrace>& v) {
    std::vector<std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>> keys;
    for (const auto& p : build_pairs(v)) keys.emplace_back(p.instance_id, v[p.positive].seed, v[p.negative].seed);
    std::sort(keys.begin(), keys.end());
    return keys;
  };
  const auto want = key_set(ts);
  for (int trial = 0; trial < 5; ++trial) {
    auto shuffled = ts;
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.uniform_int(i)]);
    EXPECT_EQ(key_set(shuffled), want);
  }
}

TEST(Properties, TraceMeanIsLinearInScale) {
  numerics::SeededRng rng(31, 0);
  auto t = fixtures::random_trace(rng, 2, 5, 6, 2);
  const auto base = trace_mean(t);
  for (float& a : t.activations) a *= 2.0f;
  const auto doubled = trace_mean(t);
  for (std::size_t i = 0; i < base.means.size(); ++i) EXPECT_DOUBLE_EQ(doubled.means[i], 2.0 * base.means[i]);
}

TEST(Properties, LabelsAreSoundOnThePlantedModel) {
  model::ModelConfig cfg{2, 12, 16, 2, 3 + 2 * 4, 8};
  std::vector<model::NeuronId> planted{{0, 3}, {1, 5}};
  auto pm = model::build_planted_model(cfg, planted, 0.5);
  std::size_t seen_correct = 0, seen_wrong = 0;
  for (std::size_t slot = 0; slot < pm.n_slots(); ++slot) {
    for (bool corrupt : {false, true}) {
      TaskInstance inst{2 * slot + corrupt, pm.prompt(slot, corrupt), {model::PlantedLayout::kCorrect}, ""};
      SampleConfig sc;
      sc.n = 6;
      sc.seed = 5;
      for (const auto& lt : sample_traces(pm.weights, inst, sc)) {
        EXPECT_EQ(lt.correct, model::PlantedModel::judge(lt.answer()));
        (lt.correct ? seen_correct : seen_wrong) += 1;
      }
    }
  }
  EXPECT_GT(seen_correct, 0u);
  EXPECT_GT(seen_wrong, 0u);
}
