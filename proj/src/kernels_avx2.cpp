#include "eul/kernels.h"

// AVX2 kernels. Each element's accumulation order matches the scalar
// reference exactly (ascending k, separate mul/add, 4-lane reductions), so
// the two backends are bit-identical and can be swapped freely at runtime.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <limits>

namespace eul::kernels::avx2 {

void add(const double* a, const double* b, double* c, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(c + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) c[i] = a[i] + b[i];
}

void sub(const double* a, const double* b, double* c, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(c + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) c[i] = a[i] - b[i];
}

void mul(const double* a, const double* b, double* c, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(c + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) c[i] = a[i] * b[i];
}

void scale(const double* a, double s, double* c, std::size_t n) {
  const __m256d sv = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(c + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), sv));
  for (; i < n; ++i) c[i] = a[i] * s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(av, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

void relu(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad(const double* x, const double* gy, double* gx, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    const __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(gy + i));
    _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), g));
  }
  for (; i < n; ++i) gx[i] = gx[i] + (x[i] > 0.0 ? gy[i] : 0.0);
}

namespace {

inline double combine_sum(__m256d acc, const double* x, std::size_t i, std::size_t n) {
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  for (std::size_t l = 0; i < n; ++i, ++l) lanes[l] += x[i];
  return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

}  // namespace

double sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  return combine_sum(acc, x, i, n);
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  for (std::size_t l = 0; i < n; ++i, ++l) lanes[l] += x[i] * y[i];
  return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

double max(const double* x, std::size_t n) {
  const __m256d neg_inf = _mm256_set1_pd(-std::numeric_limits<double>::infinity());
  __m256d acc = neg_inf;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    // max_pd(a, b) yields a > b ? a : b, mirroring the scalar lane update
    acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  for (std::size_t l = 0; i < n; ++i, ++l)
    lanes[l] = lanes[l] > x[i] ? lanes[l] : x[i];
  const double m01 = lanes[0] > lanes[1] ? lanes[0] : lanes[1];
  const double m23 = lanes[2] > lanes[3] ? lanes[2] : lanes[3];
  return m01 > m23 ? m01 : m23;
}

namespace {

// inner update shared by nn and tn: crow[0..n) += s * brow[0..n)
inline void row_axpy(double s, const double* brow, double* crow, std::size_t n) {
  const __m256d sv = _mm256_set1_pd(s);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d prod = _mm256_mul_pd(sv, _mm256_loadu_pd(brow + j));
    _mm256_storeu_pd(crow + j, _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
  }
  for (; j < n; ++j) crow[j] = crow[j] + s * brow[j];
}

}  // namespace

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t t = 0; t < k; ++t) row_axpy(a[i * k + t], b + t * n, crow, n);
  }
}

void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t t = 0; t < k; ++t) {
    const double* arow = a + t * m;
    const double* brow = b + t * n;
    for (std::size_t i = 0; i < m; ++i) row_axpy(arow[i], brow, c + i * n, n);
  }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    std::size_t j = 0;
    // four output columns at a time; per-element k order stays ascending
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + (j + 0) * k;
      const double* b1 = b + (j + 1) * k;
      const double* b2 = b + (j + 2) * k;
      const double* b3 = b + (j + 3) * k;
      __m256d acc = _mm256_setzero_pd();
      std::size_t t = 0;
      for (; t + 4 <= k; t += 4) {
        // transpose a 4x4 block of b so each register holds one k-column
        const __m256d r0 = _mm256_loadu_pd(b0 + t);
        const __m256d r1 = _mm256_loadu_pd(b1 + t);
        const __m256d r2 = _mm256_loadu_pd(b2 + t);
        const __m256d r3 = _mm256_loadu_pd(b3 + t);
        const __m256d t0 = _mm256_unpacklo_pd(r0, r1);
        const __m256d t1 = _mm256_unpackhi_pd(r0, r1);
        const __m256d t2 = _mm256_unpacklo_pd(r2, r3);
        const __m256d t3 = _mm256_unpackhi_pd(r2, r3);
        const __m256d col0 = _mm256_permute2f128_pd(t0, t2, 0x20);
        const __m256d col1 = _mm256_permute2f128_pd(t1, t3, 0x20);
        const __m256d col2 = _mm256_permute2f128_pd(t0, t2, 0x31);
        const __m256d col3 = _mm256_permute2f128_pd(t1, t3, 0x31);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(arow[t + 0]), col0));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(arow[t + 1]), col1));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(arow[t + 2]), col2));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(arow[t + 3]), col3));
      }
      for (; t < k; ++t) {
        const __m256d col = _mm256_set_pd(b3[t], b2[t], b1[t], b0[t]);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(arow[t]), col));
      }
      _mm256_storeu_pd(c + i * n + j, acc);
    }
    for (; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc = acc + arow[t] * brow[t];
      c[i * n + j] = acc;
    }
  }
}

}  // namespace eul::kernels::avx2

namespace eul::kernels {

const Ops* avx2_ops() {
  if (!cpu_supports_avx2()) return nullptr;
  static const Ops table = {
      avx2::add,       avx2::sub, avx2::mul, avx2::scale,
      avx2::axpy,      avx2::relu, avx2::relu_grad,
      avx2::sum,       avx2::dot, avx2::max,
      avx2::matmul_nn, avx2::matmul_tn, avx2::matmul_nt,
  };
  return &table;
}

}  // namespace eul::kernels

#else

namespace eul::kernels {
const Ops* avx2_ops() { return nullptr; }
}  // namespace eul::kernels

#endif
