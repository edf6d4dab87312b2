#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "steerlab/error.hpp"
#include "steerlab/trajectory/trajectory.hpp"

using namespace steerlab;
using namespace steerlab::trajectory;

namespace {

// h^l = (1 + l) v for one generated token; |v| = 7 so every norm is exact.
model::ActivationTrace collinear(std::size_t n_layers, double scale) {
  model::ActivationTrace t;
  t.n_layers = n_layers;
  t.d_mlp = 1;
  t.d_model = 4;
  t.prompt_length = 1;
  t.tokens = {0, 1};
  t.activations.assign(2 * n_layers, 0.0f);
  const float v[4] = {2, 3, 0, 6};
  t.hidden.assign(2 * (n_layers + 1) * 4, 1.0f);
  for (std::size_t l = 0; l <= n_layers; ++l) {
    for (std::size_t i = 0; i < 4; ++i) {
      t.hidden[((n_layers + 1) + l) * 4 + i] = static_cast<float>(scale * (1 + l) * v[i]);
    }
  }
  return t;
}

struct Brute {
  double m, a;
  bool flagged;
};

Brute brute(const model::ActivationTrace& t, std::size_t tok, double eps) {
  const std::size_t L = t.n_layers, d = t.d_model;
  auto h = [&](std::size_t l, std::size_t i) {
    return static_cast<double>(t.hidden[(tok * (L + 1) + l) * d + i]);
  };
  auto dist = [&](std::size_t p, std::size_t q) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += (h(p, i) - h(q, i)) * (h(p, i) - h(q, i));
    return std::sqrt(s);
  };
  auto sq = [&](std::size_t p) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += h(p, i) * h(p, i);
    return s;
  };
  auto ang = [&](std::size_t p, std::size_t q) {
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += h(p, i) * h(q, i);
    double c = dot / std::sqrt(sq(p) * sq(q));
    c = c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c);
    return std::acos(c);
  };
  Brute b{};
  double path = 0.0;
  for (std::size_t l = 0; l < L; ++l) path += dist(l + 1, l);
  b.m = (path / (dist(L, 0) + eps)) / static_cast<double>(L);
  b.flagged = false;
  for (std::size_t l = 0; l <= L; ++l) b.flagged |= sq(l) == 0.0;
  if (!b.flagged) {
    double turn = 0.0;
    for (std::size_t l = 0; l < L; ++l) turn += ang(l, l + 1);
    b.a = (turn / (ang(0, L) + eps)) / static_cast<double>(L);
  }
  return b;
}

}  // namespace

TEST(Trajectory, CollinearEqualStepClosedForm) {
  for (std::size_t L : {1u, 2u, 5u, 12u}) {
    for (double scale : {0.5, 1.0, 3.0}) {
      auto t = collinear(L, scale);
      const double s = 7.0 * scale;
      const double Ld = static_cast<double>(L);
      auto g = angle(t);
      ASSERT_EQ(g.size(), 1u);
      EXPECT_NEAR(g[0].magnitude, (1.0 / Ld) * (Ld * s) / (Ld * s + 1e-6), 1e-9);
      EXPECT_NEAR(g[0].angle, 0.0, 1e-9);
      EXPECT_FALSE(g[0].flagged);
      EXPECT_EQ(magnitude(t)[0], g[0].magnitude);
    }
  }
}

TEST(Trajectory, RightAngleTurn) {
  // h0 = e1, h1 = e1 + e2, h2 = e2: two 45 degree turns over a 90 degree net turn.
  model::ActivationTrace t;
  t.n_layers = 2;
  t.d_mlp = 1;
  t.d_model = 2;
  t.prompt_length = 0;
  t.tokens = {0};
  t.activations = {0, 0};
  t.hidden = {1, 0, 1, 1, 0, 1};
  auto g = angle(t)[0];
  const double pi = std::acos(-1.0);
  EXPECT_NEAR(g.angle, (pi / 2) / (pi / 2 + 1e-6) / 2, 1e-12);
  EXPECT_NEAR(g.magnitude, (2.0 / (std::sqrt(2.0) + 1e-6)) / 2, 1e-12);
}

TEST(Trajectory, ZeroNormIsFlaggedAndSkipped) {
  auto t = collinear(3, 1.0);
  t.tokens = {0, 1, 2};
  t.hidden.resize(3 * 4 * 4, 1.0f);
  // Token 2: level 1 zero.
  for (std::size_t i = 0; i < 4; ++i) t.hidden[(2 * 4 + 1) * 4 + i] = 0.0f;
  t.activations.assign(3 * 3, 0.0f);
  auto f = trajectory_features(t);
  ASSERT_EQ(f.tokens.size(), 2u);
  EXPECT_FALSE(f.tokens[0].flagged);
  EXPECT_TRUE(f.tokens[1].flagged);
  EXPECT_EQ(f.count, 1u);
  EXPECT_EQ(f.mean_angle, f.tokens[0].angle);
  std::vector<TokenGeometry> all_flagged(2);
  for (auto& g : all_flagged) g.flagged = true;
  EXPECT_THROW(sequence_average(all_flagged), DataError);
}

TEST(Trajectory, BruteForceAgreesExactly) {
  numerics::SeededRng rng(4, 0);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t L = 1 + rng.uniform_int(4);
    const std::size_t n = 2 + rng.uniform_int(4);
    auto t = fixtures::random_trace(rng, L, 3, n, 1, 1 + rng.uniform_int(6));
    auto g = angle(t);
    ASSERT_EQ(g.size(), n - 1);
    for (std::size_t k = 0; k < g.size(); ++k) {
      auto b = brute(t, k + 1, 1e-6);
      EXPECT_EQ(g[k].magnitude, b.m);
      EXPECT_EQ(g[k].flagged, b.flagged);
      if (!b.flagged) {
        EXPECT_EQ(g[k].angle, b.a);
      }
    }
  }
}

TEST(Trajectory, ScaleInvarianceOfAngle) {
  numerics::SeededRng rng(5, 0);
  auto t = fixtures::random_trace(rng, 3, 2, 2, 1, 5);
  auto u = t;
  for (float& h : u.hidden) h *= 4.0f;  // exact in binary
  EXPECT_NEAR(angle(t)[0].angle, angle(u)[0].angle, 1e-9);
}

TEST(Trajectory, RequiresHiddenStatesAndPositiveEpsilon) {
  numerics::SeededRng rng(6, 0);
  auto t = fixtures::random_trace(rng, 2, 2, 2, 1);
  EXPECT_THROW(angle(t), InvalidArgument);
  auto u = collinear(2, 1.0);
  TrajectoryConfig cfg;
  cfg.epsilon = 0.0;
  EXPECT_THROW(magnitude(u, cfg), InvalidArgument);
}

TEST(Shift, MeanDifferenceAtSelectedNeurons) {
  traces::TraceSummary a{1, 2, 1, {1.0, 2.0}}, b{1, 2, 1, {3.0, 2.0}};
  traces::TraceSummary c{1, 2, 1, {2.0, 5.0}}, d{1, 2, 1, {6.0, 1.0}};
  std::vector<traces::TraceSummary> before{a, b}, after{c, d};
  std::vector<model::NeuronId> ids{{0, 0}, {0, 1}};
  auto s = activation_shift(before, after, ids);
  EXPECT_DOUBLE_EQ(s[0].shift, 2.0);
  EXPECT_DOUBLE_EQ(s[1].shift, 1.0);
  EXPECT_EQ(heatmap_csv(s), "layer,neuron,shift\n0,0,2\n0,1,1\n");
}

namespace {

// Rotates every hidden vector by the same angle in the (0, 1) plane and
// shifts every coordinate by `offset`.
model::ActivationTrace transformed(model::ActivationTrace t, double theta, double offset) {
  const double c = std::cos(theta), s = std::sin(theta);
  for (std::size_t v = 0; v < t.hidden.size(); v += t.d_model) {
    const double x = t.hidden[v], y = t.hidden[v + 1];
    t.hidden[v] = static_cast<float>(c * x - s * y);
    t.hidden[v + 1] = static_cast<float>(s * x + c * y);
    for (std::size_t i = 0; i < t.d_model; ++i) t.hidden[v + i] += static_cast<float>(offset);
  }
  return t;
}

}  // namespace

TEST(Properties, MagnitudeIsRotationAndTranslationInvariant) {
  numerics::SeededRng rng(70, 0);
  for (int trial = 0; trial < 5; ++trial) {
    auto t = fixtures::random_trace(rng, 4, 2, 6, 2, 5);
    const auto base = magnitude(t);
    const auto moved = magnitude(transformed(t, 0.7 + trial, 0.0));
    const auto shifted = magnitude(transformed(t, 0.0, 2.5));
    for (std::size_t i = 0; i < base.size(); ++i) {
      EXPECT_NEAR(moved[i], base[i], 1e-5 * base[i]);
      EXPECT_NEAR(shifted[i], base[i], 1e-5 * base[i]);
    }
  }
}

TEST(Properties, AngleIsRotationAndScaleInvariant) {
  numerics::SeededRng rng(71, 0);
  auto t = fixtures::random_trace(rng, 3, 2, 5, 1, 6);
  const auto base = angle(t);
  auto scaled = t;
  for (float& h : scaled.hidden) h *= 8.0f;
  const auto rotated = angle(transformed(t, 1.1, 0.0));
  const auto bigger = angle(scaled);
  ASSERT_EQ(base.size(), rotated.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_NEAR(rotated[i].angle, base[i].angle, 1e-5);
    EXPECT_NEAR(bigger[i].angle, base[i].angle, 1e-9);
  }
}

TEST(Properties, MagnitudeIsBoundedByTriangleInequality) {
  numerics::SeededRng rng(72, 0);
  const double eps = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t L = 1 + trial % 5, d = 3;
    auto t = fixtures::random_trace(rng, L, 2, 4, 1, d);
    const auto m = magnitude(t, {eps});
    for (std::size_t g = 0; g < m.size(); ++g) {
      const std::size_t tok = t.prompt_length + g;
      double net = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = t.hidden[(tok * (L + 1) + L) * d + i] - t.hidden[(tok * (L + 1)) * d + i];
        net += diff * diff;
      }
      net = std::sqrt(net);
      EXPECT_GE(m[g] * (1.0 + 1e-9), net / (net + eps) / static_cast<double>(L));
    }
  }
}
