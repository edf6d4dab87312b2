#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "steerlab/error.hpp"
#include "steerlab/gate/gate.hpp"
#include "steerlab/numerics/optim.hpp"
#include "steerlab/probe/probe.hpp"

using namespace steerlab;
using namespace steerlab::gate;

namespace {

TokenFeatures random_features(numerics::SeededRng& rng, std::size_t rows, std::size_t cols) {
  TokenFeatures f;
  f.rows = rows;
  f.cols = cols;
  for (std::size_t i = 0; i < rows * cols; ++i) f.values.push_back(rng.normal());
  return f;
}

GateModel random_gate(std::size_t width, std::size_t hidden, std::uint64_t seed) {
  std::vector<std::size_t> idx(width);
  for (std::size_t j = 0; j < width; ++j) idx[j] = j;
  auto m = init_gate(idx, std::vector<double>(width, 1.0), hidden, seed);
  // Nonzero query so pooling is not uniform.
  numerics::SeededRng rng(seed, 99);
  for (double& q : m.query) q = rng.normal();
  return m;
}

// Label 1 samples carry +shift on feature 0 in every row; labels optionally
// shuffled to destroy the signal.
GateDataset dataset(std::uint64_t seed, std::size_t n, std::size_t width, double shift,
                    bool random_labels = false) {
  numerics::SeededRng rng(seed, 5);
  GateDataset d;
  for (std::size_t i = 0; i < n; ++i) {
    GateSample s;
    s.instance_id = i;
    s.label = static_cast<int>(i % 2);
    s.features = random_features(rng, 2 + rng.uniform_int(3), width);
    if (s.label == 1) {
      for (std::size_t r = 0; r < s.features.rows; ++r) s.features.values[r * width] += shift;
    }
    if (random_labels) s.label = rng.uniform() < 0.5 ? 1 : 0;
    d.samples.push_back(std::move(s));
  }
  return d;
}

GateConfig fast_config() {
  GateConfig c;
  c.hidden = 16;
  c.learning_rate = 1e-2;
  c.max_epochs = 40;
  c.patience = 10;
  c.seed = 3;
  return c;
}

double val_auroc(const GateModel& m, const GateDataset& d) {
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& x : d.samples) {
    s.push_back(gate_forward(m, x.features));
    y.push_back(x.label);
  }
  return probe::auroc(s, y);
}

}  // namespace

TEST(Pooling, WeightsFormADistribution) {
  numerics::SeededRng rng(1, 0);
  auto m = random_gate(4, 3, 1);
  for (int trial = 0; trial < 20; ++trial) {
    auto f = random_features(rng, 1 + rng.uniform_int(6), 4);
    auto a = pooling_weights(m, f);
    ASSERT_EQ(a.size(), f.rows);
    double sum = 0.0;
    for (double v : a) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Pooling, ZeroQueryIsUniformAndRowOrderDoesNotMatter) {
  numerics::SeededRng rng(2, 0);
  auto m = random_gate(3, 5, 2);
  auto f = random_features(rng, 4, 3);
  auto flat = m;
  std::fill(flat.query.begin(), flat.query.end(), 0.0);
  for (double v : pooling_weights(flat, f)) EXPECT_DOUBLE_EQ(v, 0.25);

  TokenFeatures reversed = f;
  for (std::size_t r = 0; r < f.rows; ++r) {
    std::copy(f.row(r).begin(), f.row(r).end(),
              reversed.values.begin() + static_cast<std::ptrdiff_t>((f.rows - 1 - r) * f.cols));
  }
  EXPECT_NEAR(gate_logit(m, f), gate_logit(m, reversed), 1e-12);
}

TEST(GateHead, GradientMatchesCentralDifferences) {
  numerics::SeededRng rng(3, 0);
  for (int point = 0; point < 10; ++point) {
    auto m = random_gate(4, 6, 10 + point);
    auto f = random_features(rng, 3, 4);
    const int label = point % 2;
    std::vector<std::uint8_t> keep(m.hidden);
    for (auto& k : keep) k = rng.uniform() < 0.7 ? 1 : 0;
    const auto* mask = point % 3 == 0 ? nullptr : &keep;
    const double dropout = 0.3;

    std::vector<double> grad(m.n_parameters());
    gate_loss_and_gradient(m, f, label, grad, mask, dropout);
    const auto p0 = m.parameters();
    auto loss_at = [&](std::span<const double> p) {
      GateModel q = m;
      q.set_parameters(p);
      std::vector<double> g(q.n_parameters());
      return gate_loss_and_gradient(q, f, label, g, mask, dropout);
    };
    auto fd = numerics::finite_diff_grad(loss_at, p0, 1e-6);
    for (std::size_t j = 0; j < grad.size(); ++j) {
      EXPECT_LE(std::abs(grad[j] - fd[j]), 1e-4 * std::max(1.0, std::abs(fd[j]))) << "param " << j;
    }
  }
}

TEST(GateHead, ParameterPackingRoundTrips) {
  auto m = random_gate(3, 4, 4);
  auto p = m.parameters();
  EXPECT_EQ(p.size(), m.n_parameters());
  GateModel q = init_gate(m.feature_indices, m.sigma, 4, 77);
  q.set_parameters(p);
  EXPECT_EQ(q, m);
}

TEST(Decision, ThresholdIsInclusiveAndMonotone) {
  EXPECT_TRUE(gate_decision(0.5));
  EXPECT_FALSE(gate_decision(0.4999));
  for (double t : {0.2, 0.5, 0.8}) {
    bool prev = false;
    for (int i = 0; i <= 100; ++i) {
      const bool d = gate_decision(i / 100.0, t);
      EXPECT_TRUE(!prev || d);
      prev = d;
    }
  }
  EXPECT_THROW(gate_decision(1.5), InvalidArgument);
}

TEST(Training, DeterministicForFixedSeed) {
  auto train = dataset(1, 40, 3, 2.0), val = dataset(2, 20, 3, 2.0);
  auto cfg = fast_config();
  cfg.max_epochs = 5;
  cfg.patience = 5;
  auto a = train_gate(train, val, random_gate(3, 16, 1), cfg);
  auto b = train_gate(train, val, random_gate(3, 16, 1), cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.report.best_epoch, b.report.best_epoch);
}

TEST(Training, SeparableFixtureIsLearned) {
  auto train = dataset(3, 120, 4, 3.0), val = dataset(4, 60, 4, 3.0), test = dataset(5, 100, 4, 3.0);
  auto r = train_gate(train, val, random_gate(4, 16, 2), fast_config());
  EXPECT_GE(val_auroc(r.model, test), 0.95);
  std::size_t right = 0;
  for (const auto& s : test.samples) {
    right += gate_decision(gate_forward(r.model, s.features)) == (s.label == 1);
  }
  EXPECT_GE(static_cast<double>(right) / test.samples.size(), 0.95);
}

TEST(Training, PermutedLabelsStayNearChance) {
  auto train = dataset(6, 120, 4, 3.0, true), val = dataset(7, 60, 4, 3.0, true);
  auto test = dataset(8, 200, 4, 3.0, true);
  auto r = train_gate(train, val, random_gate(4, 16, 3), fast_config());
  const double a = val_auroc(r.model, test);
  EXPECT_GE(a, 0.3);
  EXPECT_LE(a, 0.7);
}

TEST(Training, SingleClassTrainingSetIsADataError) {
  auto train = dataset(1, 10, 2, 1.0);
  for (auto& s : train.samples) s.label = 0;
  EXPECT_THROW(train_gate(train, train, random_gate(2, 4, 1), fast_config()), DataError);
}

TEST(Features, InformativeNeuronRanksFirst) {
  numerics::SeededRng rng(9, 0);
  std::vector<model::ActivationTrace> ts;
  std::vector<int> labels;
  for (int i = 0; i < 30; ++i) {
    auto t = fixtures::random_trace(rng, 2, 4, 4, 3);
    labels.push_back(i % 2);
    for (std::size_t tok = 0; tok < 3; ++tok) t.activation_row(tok, 1)[2] += labels.back() ? 5.0f : 0.0f;
    ts.push_back(std::move(t));
  }
  auto sel = select_gate_features(ts, labels, 3);
  ASSERT_EQ(sel.indices.size(), 3u);
  EXPECT_EQ(sel.indices[0], 1u * 4 + 2);
  auto f = gate_features(ts[0], sel.indices, sel.sigma);
  EXPECT_EQ(f.rows, 3u);  // prompt tokens only
  EXPECT_EQ(f.cols, 3u);
}

TEST(GateJson, RoundTripAndNamedErrors) {
  auto m = random_gate(3, 4, 5);
  m.threshold = 0.4;
  auto text = gate_to_json(m);
  EXPECT_EQ(gate_from_json(text), m);
  auto path = std::filesystem::temp_directory_path() / "steerlab_gate_test.json";
  save_gate(path, m);
  EXPECT_EQ(load_gate(path), m);
  std::filesystem::remove(path);
  auto tag = text;
  tag.replace(tag.find("steerlab.gate"), 13, "steerlab.nope");
  EXPECT_THROW(gate_from_json(tag), BadMagicError);
  auto ver = text;
  ver.replace(ver.find("\"version\":1"), 11, "\"version\":3");
  EXPECT_THROW(gate_from_json(ver), VersionError);
  EXPECT_THROW(gate_from_json("[]"), FormatError);
}

TEST(Properties, InferenceIsDeterministic) {
  auto m = random_gate(5, 8, 60);
  const auto copy = gate_from_json(gate_to_json(m));
  numerics::SeededRng rng(60, 1);
  for (int i = 0; i < 20; ++i) {
    auto f = random_features(rng, 1 + rng.uniform_int(5), 5);
    const double p = gate_forward(m, f);
    EXPECT_EQ(gate_forward(m, f), p);
    EXPECT_EQ(gate_forward(copy, f), p);
  }
}

TEST(Properties, SteeredSetShrinksAsThresholdRises) {
  auto m = random_gate(4, 8, 61);
  numerics::SeededRng rng(61, 1);
  std::vector<double> probs;
  for (int i = 0; i < 200; ++i) probs.push_back(gate_forward(m, random_features(rng, 3, 4)));
  std::size_t prev = probs.size() + 1;
  for (double theta = 0.0; theta <= 1.0 + 1e-12; theta += 0.05) {
    std::size_t n = 0;
    for (double p : probs) n += gate_decision(p, theta);
    EXPECT_LE(n, prev);
    prev = n;
  }
}
