#include "eul/kernels.h"

#include <limits>

// Scalar reference kernels. These define the numeric contract: the SIMD
// variants must reproduce them bit for bit, so the reductions already use the
// 4-lane blocked order that a 256-bit register imposes.

namespace eul::kernels::scalar {

void add(const double* a, const double* b, double* c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) c[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) c[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) c[i] = a[i] * b[i];
}

void scale(const double* a, double s, double* c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) c[i] = a[i] * s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

void relu(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad(const double* x, const double* gy, double* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) gx[i] = gx[i] + (x[i] > 0.0 ? gy[i] : 0.0);
}

double sum(const double* x, std::size_t n) {
  double l0 = 0.0, l1 = 0.0, l2 = 0.0, l3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    l0 += x[i];
    l1 += x[i + 1];
    l2 += x[i + 2];
    l3 += x[i + 3];
  }
  double lanes[4] = {l0, l1, l2, l3};
  for (std::size_t l = 0; i < n; ++i, ++l) lanes[l] += x[i];
  return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

double dot(const double* x, const double* y, std::size_t n) {
  double l0 = 0.0, l1 = 0.0, l2 = 0.0, l3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    l0 += x[i] * y[i];
    l1 += x[i + 1] * y[i + 1];
    l2 += x[i + 2] * y[i + 2];
    l3 += x[i + 3] * y[i + 3];
  }
  double lanes[4] = {l0, l1, l2, l3};
  for (std::size_t l = 0; i < n; ++i, ++l) lanes[l] += x[i] * y[i];
  return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

double max(const double* x, std::size_t n) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  double l0 = kNegInf, l1 = kNegInf, l2 = kNegInf, l3 = kNegInf;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    l0 = l0 > x[i] ? l0 : x[i];
    l1 = l1 > x[i + 1] ? l1 : x[i + 1];
    l2 = l2 > x[i + 2] ? l2 : x[i + 2];
    l3 = l3 > x[i + 3] ? l3 : x[i + 3];
  }
  double lanes[4] = {l0, l1, l2, l3};
  for (std::size_t l = 0; i < n; ++i, ++l)
    lanes[l] = lanes[l] > x[i] ? lanes[l] : x[i];
  const double m01 = lanes[0] > lanes[1] ? lanes[0] : lanes[1];
  const double m23 = lanes[2] > lanes[3] ? lanes[2] : lanes[3];
  return m01 > m23 ? m01 : m23;
}

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double s = a[i * k + t];
      const double* brow = b + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] = crow[j] + s * brow[j];
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t t = 0; t < k; ++t) {
    const double* arow = a + t * m;
    const double* brow = b + t * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double s = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] = crow[j] + s * brow[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc = acc + arow[t] * brow[t];
      c[i * n + j] = acc;
    }
  }
}

}  // namespace eul::kernels::scalar

namespace eul::kernels {

const Ops& scalar_ops() {
  static const Ops table = {
      scalar::add,       scalar::sub, scalar::mul, scalar::scale,
      scalar::axpy,      scalar::relu, scalar::relu_grad,
      scalar::sum,       scalar::dot, scalar::max,
      scalar::matmul_nn, scalar::matmul_tn, scalar::matmul_nt,
  };
  return table;
}

}  // namespace eul::kernels
