#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "steerlab/error.hpp"
#include "steerlab/numerics/optim.hpp"
#include "steerlab/numerics/rng.hpp"
#include "steerlab/probe/probe.hpp"
#include "steerlab/probe/probe_io.hpp"

using namespace steerlab;
using namespace steerlab::probe;

namespace {

FeatureMatrix matrix(std::vector<std::vector<double>> rows, std::vector<int> labels) {
  FeatureMatrix x;
  x.n_samples = rows.size();
  x.n_features = rows.empty() ? 0 : rows[0].size();
  for (auto& r : rows) x.values.insert(x.values.end(), r.begin(), r.end());
  x.labels = std::move(labels);
  for (std::size_t f = 0; f < x.n_features; ++f) x.feature_index.push_back(f);
  return x;
}

// Feature 0 carries the label (shifted by `gap`); the rest are noise.
FeatureMatrix gaussian_fixture(std::uint64_t seed, std::size_t n, std::size_t width, double gap,
                               bool random_labels = false) {
  numerics::SeededRng rng(seed, 1);
  FeatureMatrix x;
  x.n_samples = n;
  x.n_features = width;
  for (std::size_t f = 0; f < width; ++f) x.feature_index.push_back(f);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    for (std::size_t f = 0; f < width; ++f) {
      x.values.push_back(rng.normal() + (f == 0 && y == 1 ? gap : 0.0));
    }
    x.labels.push_back(y);
  }
  if (random_labels) {
    for (auto& y : x.labels) y = rng.uniform() < 0.5 ? 1 : 0;
  }
  return x;
}

// Fraction of (positive, negative) pairs ranked correctly, ties counted 1/2.
double pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      total += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / total;
}

}  // namespace

TEST(FStatistic, HandValue) {
  auto x = matrix({{1}, {2}, {3}, {4}, {5}, {6}}, {0, 0, 0, 1, 1, 1});
  EXPECT_EQ(f_statistic(x)[0], 13.5);
}

TEST(FStatistic, ConstantAndEqualMeansGiveZeroSeparatedGivesInf) {
  auto x = matrix({{7, 1, 2}, {7, 3, 2}, {7, 3, 5}, {7, 1, 5}}, {0, 0, 1, 1});
  auto f = f_statistic(x);
  EXPECT_EQ(f[0], 0.0);
  EXPECT_EQ(f[1], 0.0);
  EXPECT_EQ(f[2], std::numeric_limits<double>::infinity());
  auto top = top_f_columns(f, 2);
  EXPECT_EQ(top, (std::vector<std::size_t>{2, 0}));
}

TEST(FStatistic, InvariantUnderAffineRescale) {
  auto x = gaussian_fixture(3, 40, 4, 1.0);
  auto y = x;
  for (double& v : y.values) v = 3.0 * v - 2.0;
  auto fx = f_statistic(x), fy = f_statistic(y);
  for (std::size_t j = 0; j < fx.size(); ++j) EXPECT_NEAR(fx[j], fy[j], 1e-9 * (1 + fx[j]));
}

TEST(Normalizer, TenSigmaRule) {
  auto x = matrix({{1, 5}, {3, 5}}, {0, 1});
  auto stats = fit_normalizer(x);
  EXPECT_EQ(stats.sigma, (std::vector<double>{1.0, 0.0}));
  auto n = normalize(x, stats);
  EXPECT_DOUBLE_EQ(n.at(0, 0), 0.1);
  EXPECT_EQ(n.at(1, 1), 0.0);
}

TEST(Auroc, KnownValues) {
  std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(auroc(s, y), 0.75);
  std::vector<double> tied{1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(auroc(tied, y), 0.5);
  std::vector<int> single{1, 1, 1, 1};
  EXPECT_THROW(auroc(s, single), DataError);
}

TEST(Auroc, AgreesWithPairwiseCountOnTiedScores) {
  numerics::SeededRng rng(6, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 4 + rng.uniform_int(40);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.uniform_int(6));  // heavy ties
      y[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.uniform_int(2));
    }
    EXPECT_NEAR(auroc(s, y), pairwise_auroc(s, y), 1e-12);
  }
}

TEST(Auroc, ReversingScoresComplements) {
  numerics::SeededRng rng(7, 0);
  std::vector<double> s(30), r(30);
  std::vector<int> y(30);
  for (std::size_t i = 0; i < 30; ++i) {
    s[i] = rng.normal();
    r[i] = -s[i];
    y[i] = static_cast<int>(i % 3 == 0);
  }
  EXPECT_NEAR(auroc(s, y) + auroc(r, y), 1.0, 1e-12);
}

TEST(LogisticLoss, GradientMatchesCentralDifferences) {
  auto x = gaussian_fixture(8, 30, 5, 1.0);
  LogisticLoss loss(x, balanced_sample_weights(x.labels));
  numerics::SeededRng rng(8, 2);
  for (int point = 0; point < 10; ++point) {
    std::vector<double> p(loss.n_params());
    for (double& v : p) v = rng.normal();
    std::vector<double> g(p.size());
    const double val = loss.value_and_gradient(p, g);
    EXPECT_DOUBLE_EQ(val, loss.value(p));
    auto fd = numerics::finite_diff_grad([&](std::span<const double> q) { return loss.value(q); }, p,
                                         1e-5);
    for (std::size_t j = 0; j < p.size(); ++j) {
      EXPECT_LE(std::abs(g[j] - fd[j]), 1e-4 * std::max(1.0, std::abs(fd[j])));
    }
  }
}

TEST(LogisticLoss, BalancedWeightsHaveMeanOne) {
  std::vector<int> y{1, 0, 0, 0};
  auto w = balanced_sample_weights(y);
  EXPECT_DOUBLE_EQ(w[0], 2.0);
  EXPECT_DOUBLE_EQ(w[1], 4.0 / 6.0);
  double sum = 0.0;
  for (double v : w) sum += v;
  EXPECT_DOUBLE_EQ(sum / 4.0, 1.0);
}

TEST(L1Fit, ObjectiveNeverIncreases) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto x = normalize(gaussian_fixture(seed, 60, 8, 1.5), fit_normalizer(gaussian_fixture(seed, 60, 8, 1.5)));
    for (double lambda : {1e-3, 1e-2, 1e-1}) {
      FitOptions o;
      o.lambda = lambda;
      o.max_iter = 200;
      auto r = fit_l1_logistic(x, o);
      ASSERT_GE(r.report.objective.size(), 2u);
      for (std::size_t i = 1; i < r.report.objective.size(); ++i) {
        EXPECT_LE(r.report.objective[i], r.report.objective[i - 1]);
      }
    }
  }
}

TEST(L1Fit, LargeLambdaZeroesEveryWeight) {
  auto raw = gaussian_fixture(1, 40, 4, 2.0);
  auto x = normalize(raw, fit_normalizer(raw));
  FitOptions o;
  o.lambda = 100.0;
  auto r = fit_l1_logistic(x, o);
  EXPECT_EQ(r.model.nonzero_count(), 0u);
  o.lambda = 0.0;
  EXPECT_THROW(fit_l1_logistic(x, o), InvalidArgument);
}

TEST(CrossValidation, FoldsAreStratifiedAndSeeded) {
  std::vector<int> y(23);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i < 8 ? 1 : 0;
  auto f = stratified_folds(y, 4, 3);
  EXPECT_EQ(f, stratified_folds(y, 4, 3));
  for (std::size_t k = 0; k < 4; ++k) {
    std::size_t pos = 0, all = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (f[i] != k) continue;
      ++all;
      pos += y[i];
    }
    EXPECT_EQ(pos, 2u);
    EXPECT_GE(all, 5u);
    EXPECT_LE(all, 6u);
  }
}

TEST(CrossValidation, SeparableAndNullFixtures) {
  CvConfig cfg;
  auto sep = cross_validate(gaussian_fixture(2, 200, 10, 6.0), cfg);
  EXPECT_GE(sep.report.best_mean_auroc, 0.99);
  EXPECT_EQ(sep.report.rows.size(), cfg.folds * cfg.lambdas.size());
  auto null = cross_validate(gaussian_fixture(2, 200, 10, 0.0, true), cfg);
  EXPECT_GE(null.report.best_mean_auroc, 0.35);
  EXPECT_LE(null.report.best_mean_auroc, 0.65);
}

TEST(ProbeJson, RoundTripAndNamedErrors) {
  auto raw = gaussian_fixture(4, 80, 6, 2.0);
  auto m = fit_probe(raw, 1e-2, 50, 3);
  EXPECT_EQ(m.feature_indices.size(), 3u);
  auto text = probe_to_json(m);
  EXPECT_EQ(probe_from_json(text), m);
  auto path = std::filesystem::temp_directory_path() / "steerlab_probe_test.json";
  save_probe(path, m);
  EXPECT_EQ(load_probe(path), m);
  std::filesystem::remove(path);
  auto tag = text;
  tag.replace(tag.find("steerlab.probe"), 14, "steerlab.other");
  EXPECT_THROW(probe_from_json(tag), BadMagicError);
  auto ver = text;
  ver.replace(ver.find("\"version\": 1"), 12, "\"version\": 2");
  EXPECT_THROW(probe_from_json(ver), VersionError);
}

TEST(Projection, HandValue) {
  model::ActivationTrace t;
  t.n_layers = 2;
  t.d_mlp = 2;
  t.prompt_length = 1;
  t.tokens = {0, 1, 2};
  // token-major, layer-major
  t.activations = {9, 9, 9, 9, 1, 2, 3, 4, 3, 4, 5, 6};
  ProbeModel p;
  p.feature_indices = {1, 2};
  p.weights = {2.0, -1.0};
  auto proj = probe_projection(t, p);
  // layer 0: mean(2*2, 2*4) = 6; layer 1: mean(-3, -5) = -4
  EXPECT_EQ(proj, (std::vector<double>{6.0, -4.0}));
}

TEST(Properties, AurocIsInvariantUnderMonotoneTransforms) {
  numerics::SeededRng rng(50, 0);
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 60; ++i) {
    y.push_back(i % 3 == 0);
    s.push_back(std::round(4.0 * rng.normal() + y.back()) / 4.0);
  }
  const double base = auroc(s, y);
  std::vector<double> e, c, a;
  for (double v : s) {
    e.push_back(std::exp(v));
    c.push_back(v * v * v);
    a.push_back(3.0 * v + 7.0);
  }
  EXPECT_DOUBLE_EQ(auroc(e, y), base);
  EXPECT_DOUBLE_EQ(auroc(c, y), base);
  EXPECT_DOUBLE_EQ(auroc(a, y), base);
}

TEST(Properties, NonzeroWeightsShrinkFromSmallestToLargestLambda) {
  numerics::SeededRng rng(51, 0);
  FeatureMatrix x;
  x.n_features = 12;
  for (int i = 0; i < 80; ++i) {
    const int label = i % 2;
    x.labels.push_back(label);
    for (std::size_t j = 0; j < x.n_features; ++j) {
      x.values.push_back(rng.normal() + (j < 3 ? 1.5 * label : 0.0));
    }
  }
  x.n_samples = 80;
  for (std::size_t j = 0; j < x.n_features; ++j) x.feature_index.push_back(j);
  const auto xn = normalize(x, fit_normalizer(x));
  FitOptions lo, hi;
  lo.lambda = 1e-4;
  hi.lambda = 10.0;
  lo.max_iter = hi.max_iter = 200;
  const auto small = fit_l1_logistic(xn, lo).model.nonzero_count();
  const auto large = fit_l1_logistic(xn, hi).model.nonzero_count();
  EXPECT_GE(small, large);
  EXPECT_GT(small, 0u);
}
