// SPDX-License-Identifier: Apache-2.0
#include "linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "error.hpp"

namespace zsmil {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::ShapeMismatch, "matrix data length " + std::to_string(data_.size()) +
                                              " != " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw Error(ErrorCode::ShapeMismatch, "ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

bool Matrix::all_finite() const noexcept { return zsmil::all_finite(data_); }

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Vector l2_normalize(std::span<const double> v) {
  const double n = norm2(v);
  if (!(n > kZeroNormEps)) throw Error(ErrorCode::ZeroNorm, "vector norm " + std::to_string(n));
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorCode::InvalidArgument, "softmax of empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                              " times " + std::to_string(b.rows()) + "x" +
                                              std::to_string(b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

Vector matvec(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.cols()) throw Error(ErrorCode::ShapeMismatch, "matvec length");
  Vector y(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
  return y;
}

Vector matvec_transposed(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.rows()) throw Error(ErrorCode::ShapeMismatch, "matvec_transposed length");
  Vector y(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    const double xr = x[r];
    for (std::size_t c = 0; c < m.cols(); ++c) y[c] += row[c] * xr;
  }
  return y;
}

double stable_log(double p) { return std::log(std::max(p, kLogClamp)); }

Vector l2_normalize_backward(std::span<const double> v, std::span<const double> grad_out) {
  const double n = norm2(v);
  if (!(n > kZeroNormEps)) throw Error(ErrorCode::ZeroNorm, "backward through zero-norm vector");
  double zg = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) zg += (v[i] / n) * grad_out[i];
  Vector g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) g[i] = (grad_out[i] - (v[i] / n) * zg) / n;
  return g;
}

bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw Error(ErrorCode::InvalidArgument, "argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace zsmil
