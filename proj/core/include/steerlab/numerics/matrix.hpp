#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace steerlab::numerics {

// Dense row-major matrix with 32-bit storage. Every reduction over its
// entries accumulates in double and runs in a fixed loop order, so results
// are bit-reproducible across runs.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<std::vector<float>>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  std::string shape_string() const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

// y = x * m for a row vector x (length m.rows()); result length m.cols().
// Accumulates in double, column-by-column in increasing row order.
std::vector<float> vec_mat(std::span<const float> x, const Matrix& m);

// Double-precision dot product with fixed left-to-right order.
double dot(std::span<const float> a, std::span<const float> b);
double dot(std::span<const double> a, std::span<const double> b);

// True iff every entry is finite.
bool all_finite(std::span<const float> values);

}  // namespace steerlab::numerics
