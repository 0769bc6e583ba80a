#pragma once

#include <cstddef>
#include <string_view>

// Data-parallel f64 kernels behind the Matrix type. Two implementations are
// provided: a portable scalar reference and an AVX2 variant; one is selected
// at runtime (cpuid, overridable via EUL_KERNELS=scalar|avx2|auto or
// force_backend()).
//
// Equivalence contract: both backends produce bit-identical results. The
// reductions (sum, dot, max) are defined over four interleaved lane
// accumulators combined as (l0+l1)+(l2+l3), matmuls accumulate in ascending-k
// order with separate mul and add (no FMA), and the scalar reference mirrors
// exactly that order. The whole project builds with -ffp-contract=off so the
// compiler cannot break the contract.

namespace eul::kernels {

enum class Backend { scalar, avx2 };

struct Ops {
  // elementwise, c may alias a or b
  void (*add)(const double* a, const double* b, double* c, std::size_t n);
  void (*sub)(const double* a, const double* b, double* c, std::size_t n);
  void (*mul)(const double* a, const double* b, double* c, std::size_t n);
  void (*scale)(const double* a, double s, double* c, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  void (*relu)(const double* x, double* y, std::size_t n);
  // gx += gy where x > 0
  void (*relu_grad)(const double* x, const double* gy, double* gx, std::size_t n);

  // fixed-order blocked reductions, n >= 1 for max
  double (*sum)(const double* x, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*max)(const double* x, std::size_t n);

  // c is overwritten; accumulation over k in ascending order per element
  // nn: c[m x n] = a[m x k] * b[k x n]
  void (*matmul_nn)(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n);
  // tn: c[m x n] = a^T * b with a stored [k x m], b [k x n]
  void (*matmul_tn)(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n);
  // nt: c[m x n] = a * b^T with a [m x k], b [n x k]
  void (*matmul_nt)(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n);
};

// Active dispatch table. First call resolves the backend from EUL_KERNELS and
// cpuid; subsequent calls are a single atomic load.
const Ops& ops();

Backend active_backend();
std::string_view backend_name(Backend b);
bool cpu_supports_avx2();

// Test hook. Selecting avx2 on a cpu without it is rejected.
void force_backend(Backend b);

// The backend tables themselves, exposed for equivalence tests.
const Ops& scalar_ops();
const Ops* avx2_ops();  // nullptr when not compiled in or unsupported

}  // namespace eul::kernels
