#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "eul/errors.h"

namespace eul {

class Rng;

// Dense row-major f64 matrix. All arithmetic goes through the dispatched
// kernels. Public operations verify that their result is finite and throw
// numeric_error otherwise, so a Matrix observed outside a failed call never
// carries NaN/Inf.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);  // zero-filled

  static Matrix zeros(std::size_t rows, std::size_t cols);
  static Matrix full(std::size_t rows, std::size_t cols, double value);
  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Matrix randn(std::size_t rows, std::size_t cols, Rng& rng, double stddev);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }
  std::span<const double> row_span(std::size_t r) const { return {row(r), cols_}; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool bit_equal(const Matrix& o) const;

  // in-place accumulation (kernel-backed)
  Matrix& add_in_place(const Matrix& o);
  Matrix& add_scaled_in_place(double a, const Matrix& o);  // this += a * o
  Matrix& scale_in_place(double s);

  Matrix transpose() const;

  double sum() const;
  double max() const;  // requires size >= 1
  double max_abs() const;
  double frobenius_norm() const;

  void ensure_finite(const char* what) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// c = a * b, a.cols == b.rows
Matrix matmul(const Matrix& a, const Matrix& b);
// c = a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// c = a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix operator*(const Matrix& a, double s);

// Solves (a + ridge*I) x = b for symmetric positive definite a via Cholesky.
// `what` names the system in the singular_system_error message.
Matrix solve_spd(const Matrix& a, const Matrix& b, double ridge, const char* what = "system");

}  // namespace eul
