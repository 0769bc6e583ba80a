#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "eul/kernels.h"
#include "eul/rng.h"

using namespace eul;
namespace k = eul::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng, double scale = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal() * scale;
  return v;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("dispatch selects a working backend") {
  const k::Ops& o = k::ops();
  double a[3] = {1, 2, 3}, b[3] = {4, 5, 6}, c[3];
  o.add(a, b, c, 3);
  CHECK(c[0] == 5.0);
  CHECK(c[2] == 9.0);
}

TEST_CASE("avx2 backend present on this host implies cpu support") {
  if (k::avx2_ops() != nullptr) CHECK(k::cpu_supports_avx2());
}

TEST_CASE("scalar and avx2 elementwise kernels are bit-identical") {
  const k::Ops* simd = k::avx2_ops();
  if (simd == nullptr) return;  // nothing to compare on this host
  const k::Ops& ref = k::scalar_ops();
  Rng rng(7);
  // sizes straddling vector width and tails
  for (std::size_t n : {1, 2, 3, 4, 5, 7, 8, 15, 16, 63, 257}) {
    const auto a = random_vec(n, rng);
    const auto b = random_vec(n, rng);
    std::vector<double> r1(n), r2(n);

    ref.add(a.data(), b.data(), r1.data(), n);
    simd->add(a.data(), b.data(), r2.data(), n);
    CHECK(bits_equal(r1, r2));

    ref.sub(a.data(), b.data(), r1.data(), n);
    simd->sub(a.data(), b.data(), r2.data(), n);
    CHECK(bits_equal(r1, r2));

    ref.mul(a.data(), b.data(), r1.data(), n);
    simd->mul(a.data(), b.data(), r2.data(), n);
    CHECK(bits_equal(r1, r2));

    ref.scale(a.data(), 1.7, r1.data(), n);
    simd->scale(a.data(), 1.7, r2.data(), n);
    CHECK(bits_equal(r1, r2));

    r1 = b;
    r2 = b;
    ref.axpy(-0.31, a.data(), r1.data(), n);
    simd->axpy(-0.31, a.data(), r2.data(), n);
    CHECK(bits_equal(r1, r2));

    ref.relu(a.data(), r1.data(), n);
    simd->relu(a.data(), r2.data(), n);
    CHECK(bits_equal(r1, r2));

    r1.assign(n, 0.25);
    r2.assign(n, 0.25);
    ref.relu_grad(a.data(), b.data(), r1.data(), n);
    simd->relu_grad(a.data(), b.data(), r2.data(), n);
    CHECK(bits_equal(r1, r2));
  }
}

TEST_CASE("scalar and avx2 reductions are bit-identical") {
  const k::Ops* simd = k::avx2_ops();
  if (simd == nullptr) return;
  const k::Ops& ref = k::scalar_ops();
  Rng rng(11);
  for (std::size_t n : {1, 2, 3, 4, 5, 6, 7, 8, 9, 31, 64, 129, 1000}) {
    const auto a = random_vec(n, rng);
    const auto b = random_vec(n, rng);
    const double s1 = ref.sum(a.data(), n);
    const double s2 = simd->sum(a.data(), n);
    CHECK(std::memcmp(&s1, &s2, 8) == 0);
    const double d1 = ref.dot(a.data(), b.data(), n);
    const double d2 = simd->dot(a.data(), b.data(), n);
    CHECK(std::memcmp(&d1, &d2, 8) == 0);
    const double m1 = ref.max(a.data(), n);
    const double m2 = simd->max(a.data(), n);
    CHECK(m1 == m2);
  }
}

TEST_CASE("scalar and avx2 matmuls are bit-identical") {
  const k::Ops* simd = k::avx2_ops();
  if (simd == nullptr) return;
  const k::Ops& ref = k::scalar_ops();
  Rng rng(13);
  struct Shape {
    std::size_t m, k, n;
  };
  for (const Shape s : {Shape{1, 1, 1}, Shape{2, 3, 4}, Shape{5, 7, 3}, Shape{8, 8, 8},
                        Shape{13, 17, 11}, Shape{16, 64, 16}, Shape{33, 9, 65}}) {
    const auto a = random_vec(s.m * s.k, rng);
    const auto b_nn = random_vec(s.k * s.n, rng);
    std::vector<double> c1(s.m * s.n), c2(s.m * s.n);

    ref.matmul_nn(a.data(), b_nn.data(), c1.data(), s.m, s.k, s.n);
    simd->matmul_nn(a.data(), b_nn.data(), c2.data(), s.m, s.k, s.n);
    CHECK(bits_equal(c1, c2));

    const auto a_tn = random_vec(s.k * s.m, rng);
    ref.matmul_tn(a_tn.data(), b_nn.data(), c1.data(), s.m, s.k, s.n);
    simd->matmul_tn(a_tn.data(), b_nn.data(), c2.data(), s.m, s.k, s.n);
    CHECK(bits_equal(c1, c2));

    const auto b_nt = random_vec(s.n * s.k, rng);
    ref.matmul_nt(a.data(), b_nt.data(), c1.data(), s.m, s.k, s.n);
    simd->matmul_nt(a.data(), b_nt.data(), c2.data(), s.m, s.k, s.n);
    CHECK(bits_equal(c1, c2));
  }
}

TEST_CASE("force_backend swaps the active table") {
  const k::Backend original = k::active_backend();
  k::force_backend(k::Backend::scalar);
  CHECK(k::active_backend() == k::Backend::scalar);
  if (k::avx2_ops() != nullptr) {
    k::force_backend(k::Backend::avx2);
    CHECK(k::active_backend() == k::Backend::avx2);
  }
  k::force_backend(original);
}
