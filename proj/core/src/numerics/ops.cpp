#include "steerlab/numerics/ops.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "steerlab/error.hpp"

namespace steerlab::numerics {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

std::vector<double> softmax(std::span<const double> v, double temperature) {
  if (v.empty()) throw InvalidArgument("softmax of an empty vector");
  if (!(temperature >= 0.0)) throw InvalidArgument("softmax temperature must be >= 0");
  std::vector<double> out(v.size(), 0.0);
  if (temperature == 0.0) {
    out[argmax_first(v)] = 1.0;
    return out;
  }
  const double mx = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp((v[i] - mx) / temperature);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

std::vector<float> rms_norm(std::span<const float> v, std::span<const float> gain, double eps) {
  if (v.size() != gain.size()) {
    throw InvalidArgument(
        fmt::format("rms_norm length mismatch: input {} vs gain {}", v.size(), gain.size()));
  }
  if (eps < 0.0) throw InvalidArgument("rms_norm eps must be non-negative");
  double ss = 0.0;
  for (float x : v) ss += static_cast<double>(x) * x;
  const double denom = v.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(v.size()) + eps);
  std::vector<float> out(v.size(), 0.0f);
  if (denom == 0.0) return out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(v[i]) * gain[i] / denom);
  }
  return out;
}

namespace {
template <typename T>
std::size_t argmax_impl(std::span<const T> v) {
  if (v.empty()) throw InvalidArgument("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}
}  // namespace

std::size_t argmax_first(std::span<const double> v) { return argmax_impl(v); }
std::size_t argmax_first(std::span<const float> v) { return argmax_impl(v); }

}  // namespace steerlab::numerics
