#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace steerlab::numerics {

struct AdamState {
  std::size_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;

  static AdamState for_size(std::size_t n, double learning_rate = 1e-4,
                            double weight_decay = 0.0);
};

// Bias-corrected Adam. Weight decay is decoupled and applied first:
// params <- params - lr * wd * params, then the Adam delta.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h);

}  // namespace steerlab::numerics
