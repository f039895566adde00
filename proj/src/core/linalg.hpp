// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense row-major matrices and the few numerically careful primitives the rest
// of the library is built from. Reductions accumulate left to right in index
// order so a given input always produces the same bits.

#include <cstddef>
#include <span>
#include <vector>

namespace zsmil {

using Vector = std::vector<double>;

inline constexpr double kZeroNormEps = 1e-12;
inline constexpr double kLogClamp = 1e-15;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  /// Takes ownership of row-major data; data.size() must equal rows*cols.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool all_finite() const noexcept;
  void fill(double v);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

/// Unit-length copy of v. Throws ZeroNorm when ||v|| <= kZeroNormEps.
Vector l2_normalize(std::span<const double> v);

/// Max-subtracted softmax. Throws InvalidArgument on empty input.
Vector softmax(std::span<const double> logits);

/// Throws ShapeMismatch when a.cols() != b.rows().
Matrix matmul(const Matrix& a, const Matrix& b);

/// y = M x, with x of length M.cols().
Vector matvec(const Matrix& m, std::span<const double> x);
/// y = M^T x, with x of length M.rows().
Vector matvec_transposed(const Matrix& m, std::span<const double> x);

/// log(max(p, kLogClamp)).
double stable_log(double p);

/// Vector-Jacobian product of v -> v/||v||: (I - z z^T) g / ||v||, z = v/||v||.
Vector l2_normalize_backward(std::span<const double> v, std::span<const double> grad_out);

bool all_finite(std::span<const double> v) noexcept;

/// Index of the first maximal entry.
std::size_t argmax(std::span<const double> v);

}  // namespace zsmil
