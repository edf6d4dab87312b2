#include "steerlab/numerics/optim.hpp"

#include <cmath>

#include <fmt/format.h>

#include "steerlab/error.hpp"

namespace steerlab::numerics {

AdamState AdamState::for_size(std::size_t n, double learning_rate, double weight_decay) {
  AdamState s;
  s.first_moment.assign(n, 0.0);
  s.second_moment.assign(n, 0.0);
  s.learning_rate = learning_rate;
  s.weight_decay = weight_decay;
  return s;
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw InvalidArgument(fmt::format(
        "adam_step length mismatch: params {}, grads {}, moments {}/{}", n, grads.size(),
        state.first_moment.size(), state.second_moment.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    if (state.weight_decay != 0.0) params[i] -= state.learning_rate * state.weight_decay * params[i];
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_grad step must be positive");
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + h;
    const double fp = f(point);
    point[i] = orig - h;
    const double fm = f(point);
    point[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw DataError(fmt::format("finite_diff_grad: non-finite function value at coordinate {}", i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace steerlab::numerics
