#include <atomic>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "steerlab/numerics/matrix.hpp"
#include "steerlab/numerics/ops.hpp"
#include "steerlab/numerics/optim.hpp"
#include "steerlab/numerics/parallel.hpp"
#include "steerlab/numerics/rng.hpp"

using namespace steerlab::numerics;

TEST(Matrix, MatmulMatchesHandProduct) {
  Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  Matrix b = Matrix::from_rows({{5, 6, 7}, {8, 9, 10}});
  Matrix c = matmul(a, b);
  EXPECT_EQ(c, Matrix::from_rows({{21, 24, 27}, {47, 54, 61}}));
}

TEST(Matrix, IdentityIsNeutral) {
  SeededRng rng(1, 0);
  Matrix a(3, 4);
  for (float& v : a.data()) v = static_cast<float>(rng.normal());
  EXPECT_EQ(matmul(Matrix::identity(3), a), a);
  EXPECT_EQ(matmul(a, Matrix::identity(4)), a);
}

TEST(Matrix, VecMatAgreesWithSingleRowMatmul) {
  SeededRng rng(2, 0);
  Matrix m(5, 3);
  for (float& v : m.data()) v = static_cast<float>(rng.normal());
  std::vector<float> x(5);
  for (float& v : x) v = static_cast<float>(rng.normal());
  Matrix xm(1, 5, x);
  auto y = vec_mat(x, m);
  auto ym = matmul(xm, m);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y[j], ym(0, j));
}

TEST(Ops, SoftmaxSumsToOneAndZeroTemperatureIsOneHot) {
  std::vector<double> v{1.0, 3.0, 3.0, -2.0};
  auto p = softmax(v);
  double sum = 0.0;
  for (double x : p) sum += x;
  EXPECT_NEAR(sum, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(p[1], p[2]);
  auto hard = softmax(v, 0.0);
  EXPECT_EQ(hard, (std::vector<double>{0.0, 1.0, 0.0, 0.0}));
}

TEST(Ops, SoftmaxSurvivesHugeLogits) {
  std::vector<double> v{1000.0, 1000.0};
  auto p = softmax(v);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
}

TEST(Ops, ArgmaxTiesGoToLowestIndex) {
  std::vector<double> v{0.0, 2.0, 2.0, 1.0};
  EXPECT_EQ(argmax_first(std::span<const double>(v)), 1u);
  std::vector<float> f{5.0f, 5.0f};
  EXPECT_EQ(argmax_first(std::span<const float>(f)), 0u);
}

TEST(Ops, RmsNormHandValue) {
  std::vector<float> v{3.0f, 4.0f};
  std::vector<float> g{1.0f, 2.0f};
  // rms = sqrt((9 + 16) / 2)
  const double rms = std::sqrt(12.5);
  auto out = rms_norm(v, g, 0.0);
  EXPECT_FLOAT_EQ(out[0], static_cast<float>(3.0 / rms));
  EXPECT_FLOAT_EQ(out[1], static_cast<float>(8.0 / rms));
}

TEST(Ops, SoftplusAndSigmoid) {
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(softplus(1000.0), 1000.0);
  EXPECT_GE(softplus(-1000.0), 0.0);
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(2.0) + sigmoid(-2.0), 1.0, 1e-15);
  EXPECT_NEAR(silu(1.0), sigmoid(1.0), 1e-15);
}

TEST(Rng, SameIdentifiersSameSequence) {
  SeededRng a(42, 3), b(42, 3), c(42, 4);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, DeriveDoesNotAdvanceParent) {
  SeededRng a(9, 1);
  auto before = a.position();
  auto child = a.derive("child", 2);
  EXPECT_EQ(a.position(), before);
  EXPECT_NE(child.stream_id(), a.stream_id());
  EXPECT_EQ(child.stream_id(), a.derive("child", 2).stream_id());
  EXPECT_NE(child.stream_id(), a.derive("child", 3).stream_id());
}

TEST(Rng, UniformIntStaysInRangeAndCoversIt) {
  SeededRng r(5, 5);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    auto v = r.uniform_int(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, NormalMomentsAreRoughlyStandard) {
  SeededRng r(11, 0);
  double s = 0.0, s2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.05);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(Rng, StreamIdIsFnv1a) {
  // FNV-1a offset basis for the empty string.
  EXPECT_EQ(stream_id_of(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(stream_id_of("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Optim, FirstAdamStepMovesByLearningRate) {
  auto st = AdamState::for_size(2, 0.1);
  std::vector<double> p{1.0, -1.0};
  std::vector<double> g{3.0, -0.5};
  adam_step(st, p, g);
  // First bias-corrected step is lr * g / (|g| + eps).
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 3.0 / (3.0 + 1e-8), 1e-12);
  EXPECT_NEAR(p[1], -1.0 + 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
}

TEST(Optim, DecoupledWeightDecayAppliesFirst) {
  auto st = AdamState::for_size(1, 0.1, 0.5);
  std::vector<double> p{2.0};
  std::vector<double> g{0.0};
  adam_step(st, p, g);
  EXPECT_NEAR(p[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-12);
}

TEST(Optim, FiniteDifferencesOfQuadratic) {
  ScalarFn f = [](std::span<const double> x) { return 3 * x[0] * x[0] + x[0] * x[1] - x[1]; };
  std::vector<double> x{0.5, -2.0};
  auto g = finite_diff_grad(f, x, 1e-5);
  EXPECT_NEAR(g[0], 6 * 0.5 - 2.0, 1e-8);
  EXPECT_NEAR(g[1], 0.5 - 1.0, 1e-8);
}

TEST(Parallel, EveryIndexOnceIntoItsSlot) {
  std::vector<int> out(101, -1);
  std::atomic<int> calls{0};
  parallel_for(out.size(), 4, [&](std::size_t i) {
    out[i] = static_cast<int>(i * i);
    ++calls;
  });
  EXPECT_EQ(calls.load(), 101);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
}

TEST(Parallel, LowestFailingIndexIsRethrown) {
  try {
    parallel_for(20, 4, [](std::size_t i) {
      if (i == 7 || i == 13) throw std::runtime_error(std::to_string(i));
    });
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "7");
  }
}

TEST(Properties, MatmulIsAssociativeWithinTolerance) {
  SeededRng rng(20, 0);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a(3, 5), b(5, 4), c(4, 6);
    for (auto* m : {&a, &b, &c}) {
      for (float& v : m->data()) v = static_cast<float>(rng.normal());
    }
    auto left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < left.size(); ++i) {
      num += std::pow(left.data()[i] - right.data()[i], 2);
      den += std::pow(right.data()[i], 2);
    }
    EXPECT_LE(std::sqrt(num / den), 1e-4);
  }
}

TEST(Properties, SoftmaxIsPermutationEquivariant) {
  SeededRng rng(21, 0);
  std::vector<double> v(9);
  for (double& x : v) x = 5.0 * rng.normal();
  auto p = softmax(v);
  std::vector<double> rev(v.rbegin(), v.rend());
  auto q = softmax(rev);
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_DOUBLE_EQ(p[i], q[v.size() - 1 - i]);
    sum += p[i];
  }
  EXPECT_NEAR(sum, 1.0, 1e-9);
}

TEST(Properties, AdamWithZeroGradientAndNoDecayIsIdentity) {
  auto st = AdamState::for_size(3, 0.5);
  std::vector<double> p{1.5, -2.0, 0.25};
  const auto before = p;
  std::vector<double> g(3, 0.0);
  for (int i = 0; i < 5; ++i) adam_step(st, p, g);
  EXPECT_EQ(p, before);
}
