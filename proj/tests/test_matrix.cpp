#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "eul/matrix.h"
#include "eul/rng.h"

using namespace eul;

namespace {

// independent triple-loop reference, deliberately naive
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < a.cols(); ++t) acc += a.at(i, t) * b.at(t, j);
      c.at(i, j) = acc;
    }
  }
  return c;
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  return Matrix::randn(r, c, rng, 1.0);
}

Matrix random_spd(std::size_t n, Rng& rng) {
  Matrix x = Matrix::randn(2 * n, n, rng, 1.0);
  Matrix g = matmul_tn(x, x);
  for (std::size_t i = 0; i < n; ++i) g.at(i, i) += 0.5;
  return g;
}

}  // namespace

TEST_CASE("identity times m returns m") {
  Rng rng(1);
  Matrix m = random_matrix(3, 5, rng);
  Matrix out = matmul(Matrix::identity(3), m);
  CHECK(out.bit_equal(m));
}

TEST_CASE("hand-computed 2x2 product") {
  Matrix a = Matrix::from_rows(2, 2, {1, 2, 3, 4});
  Matrix b = Matrix::from_rows(2, 1, {0, 1});
  Matrix c = matmul(a, b);
  CHECK(c.at(0, 0) == 2.0);
  CHECK(c.at(1, 0) == 4.0);
}

TEST_CASE("matmul matches the naive reference within 1e-12") {
  Rng rng(2);
  SUBCASE("5x4 times 4x3") {
    Matrix a = random_matrix(5, 4, rng);
    Matrix b = random_matrix(4, 3, rng);
    Matrix diff = matmul(a, b) - naive_matmul(a, b);
    CHECK(diff.max_abs() < 1e-12);
  }
  SUBCASE("shapes up to 64x64") {
    for (std::size_t n : {8, 17, 33, 64}) {
      Matrix a = random_matrix(n, n, rng);
      Matrix b = random_matrix(n, n, rng);
      Matrix diff = matmul(a, b) - naive_matmul(a, b);
      CHECK(diff.max_abs() < 1e-12);
    }
  }
}

TEST_CASE("matmul transpose variants agree with explicit transposition") {
  Rng rng(3);
  Matrix a = random_matrix(6, 4, rng);
  Matrix b = random_matrix(6, 5, rng);
  Matrix d1 = matmul_tn(a, b) - naive_matmul(a.transpose(), b);
  CHECK(d1.max_abs() < 1e-12);
  Matrix c = random_matrix(5, 4, rng);
  Matrix d2 = matmul_nt(a, c) - naive_matmul(a, c.transpose());
  CHECK(d2.max_abs() < 1e-12);
}

TEST_CASE("dimension mismatch raises shape_error") {
  Matrix a(2, 3), b(4, 2);
  CHECK_THROWS_AS(matmul(a, b), shape_error);
  CHECK_THROWS_AS(a + b, shape_error);
}

TEST_CASE("solve_spd identity system returns rhs") {
  Rng rng(4);
  Matrix b = random_matrix(4, 2, rng);
  Matrix x = solve_spd(Matrix::identity(4), b, 0.0);
  CHECK((x - b).max_abs() < 1e-14);
}

TEST_CASE("solve_spd diagonal system") {
  Matrix a = Matrix::from_rows(2, 2, {2, 0, 0, 4});
  Matrix b = Matrix::from_rows(2, 1, {2, 8});
  Matrix x = solve_spd(a, b, 0.0);
  CHECK(x.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x.at(1, 0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("solve_spd residual on random spd systems") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a = random_spd(8, rng);
    Matrix b = random_matrix(8, 3, rng);
    const double ridge = trial % 2 == 0 ? 0.0 : 1e-3;
    Matrix x = solve_spd(a, b, ridge);
    Matrix ar = a;
    for (std::size_t i = 0; i < 8; ++i) ar.at(i, i) += ridge;
    Matrix residual = matmul(ar, x) - b;
    CHECK(residual.max_abs() < 1e-8);
  }
}

TEST_CASE("solve_spd rejects indefinite systems with the context name") {
  Matrix a = Matrix::from_rows(2, 2, {1, 0, 0, -1});
  Matrix b = Matrix::from_rows(2, 1, {1, 1});
  try {
    solve_spd(a, b, 0.0, "layer 1 down sub-layer");
    FAIL("expected singular_system_error");
  } catch (const singular_system_error& e) {
    CHECK(std::string(e.what()).find("layer 1 down sub-layer") != std::string::npos);
  }
}

TEST_CASE("non-finite results are rejected") {
  Matrix a = Matrix::full(1, 1, 1e308);
  CHECK_THROWS_AS(a + a, numeric_error);
  CHECK_THROWS_AS(Matrix::from_rows(1, 1, {std::nan("")}), numeric_error);
}

TEST_CASE("transpose round-trips") {
  Rng rng(6);
  Matrix a = random_matrix(5, 7, rng);
  CHECK(a.transpose().transpose().bit_equal(a));
}
