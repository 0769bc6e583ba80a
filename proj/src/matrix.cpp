#include "eul/matrix.h"

#include <cmath>
#include <cstring>
#include <string>

#include "eul/kernels.h"
#include "eul/rng.h"

namespace eul {

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix Matrix::zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }

Matrix Matrix::full(std::size_t rows, std::size_t cols, double value) {
  Matrix m(rows, cols);
  for (double& v : m.data_) v = value;
  m.ensure_finite("full");
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::size_t rows, std::size_t cols, std::vector<double> data) {
  if (data.size() != rows * cols)
    throw shape_error("from_rows: data length " + std::to_string(data.size()) +
                      " != " + std::to_string(rows) + "x" + std::to_string(cols));
  Matrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.data_ = std::move(data);
  m.ensure_finite("from_rows");
  return m;
}

Matrix Matrix::randn(std::size_t rows, std::size_t cols, Rng& rng, double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.data_) v = rng.normal() * stddev;
  return m;
}

bool Matrix::bit_equal(const Matrix& o) const {
  if (!same_shape(o)) return false;
  if (data_.empty()) return true;
  return std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(double)) == 0;
}

Matrix& Matrix::add_in_place(const Matrix& o) {
  if (!same_shape(o)) throw shape_error("add_in_place: shape mismatch");
  kernels::ops().add(data(), o.data(), data(), size());
  ensure_finite("add_in_place");
  return *this;
}

Matrix& Matrix::add_scaled_in_place(double a, const Matrix& o) {
  if (!same_shape(o)) throw shape_error("add_scaled_in_place: shape mismatch");
  kernels::ops().axpy(a, o.data(), data(), size());
  ensure_finite("add_scaled_in_place");
  return *this;
}

Matrix& Matrix::scale_in_place(double s) {
  kernels::ops().scale(data(), s, data(), size());
  ensure_finite("scale_in_place");
  return *this;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t.at(c, r) = at(r, c);
  return t;
}

double Matrix::sum() const {
  if (data_.empty()) return 0.0;
  return kernels::ops().sum(data(), size());
}

double Matrix::max() const {
  if (data_.empty()) throw contract_error("max: empty matrix");
  return kernels::ops().max(data(), size());
}

double Matrix::max_abs() const {
  double m = 0.0;
  for (double v : data_) {
    const double a = std::fabs(v);
    if (a > m) m = a;
  }
  return m;
}

double Matrix::frobenius_norm() const {
  if (data_.empty()) return 0.0;
  return std::sqrt(kernels::ops().dot(data(), data(), size()));
}

void Matrix::ensure_finite(const char* what) const {
  for (double v : data_) {
    if (!std::isfinite(v))
      throw numeric_error(std::string("non-finite value produced by ") + what);
  }
}

namespace {

void require_mm(std::size_t a_cols, std::size_t b_rows, const char* what) {
  if (a_cols != b_rows)
    throw shape_error(std::string(what) + ": inner dimensions " + std::to_string(a_cols) +
                      " vs " + std::to_string(b_rows));
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_mm(a.cols(), b.rows(), "matmul");
  Matrix c(a.rows(), b.cols());
  kernels::ops().matmul_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  c.ensure_finite("matmul");
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require_mm(a.rows(), b.rows(), "matmul_tn");
  Matrix c(a.cols(), b.cols());
  kernels::ops().matmul_tn(a.data(), b.data(), c.data(), a.cols(), a.rows(), b.cols());
  c.ensure_finite("matmul_tn");
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require_mm(a.cols(), b.cols(), "matmul_nt");
  Matrix c(a.rows(), b.rows());
  kernels::ops().matmul_nt(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.rows());
  c.ensure_finite("matmul_nt");
  return c;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw shape_error("operator+: shape mismatch");
  Matrix c(a.rows(), a.cols());
  kernels::ops().add(a.data(), b.data(), c.data(), c.size());
  c.ensure_finite("operator+");
  return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw shape_error("operator-: shape mismatch");
  Matrix c(a.rows(), a.cols());
  kernels::ops().sub(a.data(), b.data(), c.data(), c.size());
  c.ensure_finite("operator-");
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw shape_error("hadamard: shape mismatch");
  Matrix c(a.rows(), a.cols());
  kernels::ops().mul(a.data(), b.data(), c.data(), c.size());
  c.ensure_finite("hadamard");
  return c;
}

Matrix operator*(const Matrix& a, double s) {
  Matrix c(a.rows(), a.cols());
  kernels::ops().scale(a.data(), s, c.data(), c.size());
  c.ensure_finite("operator*");
  return c;
}

Matrix solve_spd(const Matrix& a, const Matrix& b, double ridge, const char* what) {
  if (a.rows() != a.cols()) throw shape_error("solve_spd: matrix not square");
  if (a.rows() != b.rows()) throw shape_error("solve_spd: rhs row count mismatch");
  if (ridge < 0.0) throw contract_error("solve_spd: negative ridge");
  const std::size_t n = a.rows();

  // lower-triangular Cholesky factor of a + ridge*I
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a.at(i, j);
      if (i == j) s += ridge;
      s -= kernels::ops().dot(l.row(i), l.row(j), j);
      if (i == j) {
        if (!(s > 0.0))
          throw singular_system_error(std::string("solve_spd: not positive definite (") +
                                      what + ")");
        l.at(i, i) = std::sqrt(s);
      } else {
        l.at(i, j) = s / l.at(j, j);
      }
    }
  }

  // forward then backward substitution, one rhs column at a time
  Matrix x(n, b.cols());
  std::vector<double> y(n), col(n);
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = b.at(i, c);
      for (std::size_t j = 0; j < i; ++j) s -= l.at(i, j) * y[j];
      y[i] = s / l.at(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t j = ii + 1; j < n; ++j) s -= l.at(j, ii) * col[j];
      col[ii] = s / l.at(ii, ii);
    }
    for (std::size_t i = 0; i < n; ++i) x.at(i, c) = col[i];
  }
  x.ensure_finite("solve_spd");
  return x;
}

}  // namespace eul
