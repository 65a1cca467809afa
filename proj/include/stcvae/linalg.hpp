#pragma once

// Small dense linear algebra for covariance oracles and least-squares fits.
// Matrices here are at most a few dozen rows, so plain loops are enough.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <vector>

#include "stcvae/errors.hpp"

namespace stcvae {

/// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: data length does not match rows*cols");
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  /// Submatrix m[S, S] for an index subset S.
  Matrix principal(std::span<const std::size_t> idx) const {
    Matrix out(idx.size(), idx.size());
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = 0; b < idx.size(); ++b) out(a, b) = (*this)(idx[a], idx[b]);
    }
    return out;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

namespace detail {

// Returns the index of the first non-positive pivot, or n on success.
inline std::size_t cholesky_in_place(Matrix& a) {
  const std::size_t n = a.rows();
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return j;
    const double l = std::sqrt(d);
    a(j, j) = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / l;
    }
    for (std::size_t i = 0; i < j; ++i) a(i, j) = 0.0;
  }
  return n;
}

}  // namespace detail

/// Lower Cholesky factor of a symmetric positive-definite matrix.
///
/// On a failed pivot the diagonal is bumped by 1e-10 * trace / n and the
/// factorization retried once; a second failure throws SingularMatrixError
/// carrying the failing pivot.
inline Matrix cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("cholesky: matrix is not square");
  const std::size_t n = a.rows();
  Matrix l = a;
  std::size_t pivot = detail::cholesky_in_place(l);
  if (pivot == n) return l;

  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += a(i, i);
  const double jitter = 1e-10 * std::abs(trace) / static_cast<double>(n);
  l = a;
  for (std::size_t i = 0; i < n; ++i) l(i, i) += jitter;
  pivot = detail::cholesky_in_place(l);
  if (pivot == n) return l;

  std::ostringstream msg;
  msg << "cholesky: matrix not positive definite at pivot " << pivot;
  throw SingularMatrixError(msg.str(), pivot);
}

/// log det(a) for a symmetric positive-definite matrix.
inline double log_det_spd(const Matrix& a) {
  const Matrix l = cholesky(a);
  double s = 0.0;
  for (std::size_t i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

/// Solves a x = b by Gaussian elimination with partial pivoting.
/// Throws SingularMatrixError when a pivot magnitude falls below `tol` times
/// the largest entry of `a`.
inline std::vector<double> solve(Matrix a, std::vector<double> b, double tol = 1e-13) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) throw ShapeError("solve: dimension mismatch");
  double scale = 0.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t best = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > std::abs(a(best, col))) best = r;
    }
    if (!(std::abs(a(best, col)) > tol * scale)) {
      throw SingularMatrixError("solve: singular system", col);
    }
    if (best != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(best, c));
      std::swap(b[col], b[best]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a(i, c) * x[c];
    x[i] = s / a(i, i);
  }
  return x;
}

/// Inverse of a small nonsingular matrix, column by column.
inline Matrix inverse(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix out(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<double> e(n, 0.0);
    e[c] = 1.0;
    const auto x = solve(a, e);
    for (std::size_t r = 0; r < n; ++r) out(r, c) = x[r];
  }
  return out;
}

}  // namespace stcvae
