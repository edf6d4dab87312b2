#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace steerlab::numerics {

double sigmoid(double x);
double silu(double x);

// Max-subtracted softmax of v / temperature. temperature == 0 yields a
// one-hot vector at argmax_first(v).
std::vector<double> softmax(std::span<const double> v, double temperature = 1.0);

// v[i] * gain[i] / sqrt(mean(v^2) + eps). eps may be zero for exact tests;
// callers pass a positive eps in the model.
std::vector<float> rms_norm(std::span<const float> v, std::span<const float> gain, double eps);

// Index of the maximum; ties resolve to the lowest index.
std::size_t argmax_first(std::span<const double> v);
std::size_t argmax_first(std::span<const float> v);

// log(1 + exp(x)) without overflow.
double softplus(double x);

}  // namespace steerlab::numerics
