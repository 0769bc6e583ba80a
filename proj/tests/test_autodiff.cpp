#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "eul/autodiff.h"
#include "eul/rng.h"
#include "helpers.h"

using namespace eul;
using eul::testing::fd_check;

namespace {

NodeRef random_param(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  return parameter(Matrix::randn(r, c, rng, scale));
}

}  // namespace

TEST_CASE("loss = sum(W) gives an all-ones gradient") {
  Rng rng(1);
  NodeRef w = random_param(3, 4, rng);
  NodeRef loss = sum_all(w);
  backward(loss);
  for (std::size_t i = 0; i < w->grad.size(); ++i) CHECK(w->grad.data()[i] == 1.0);
}

TEST_CASE("loss = |W|^2 / 2 gives gradient W") {
  Rng rng(2);
  NodeRef w = random_param(4, 4, rng);
  NodeRef loss = scale(sum_all(hadamard_ad(w, w)), 0.5);
  backward(loss);
  CHECK((w->grad - w->value).max_abs() < 1e-14);
}

TEST_CASE("gradient accumulates when a node feeds two consumers") {
  NodeRef x = parameter(Matrix::full(1, 1, 3.0));
  NodeRef loss = add(x, x);  // d/dx = 2
  backward(loss);
  CHECK(x->grad.at(0, 0) == 2.0);
}

TEST_CASE("backward rejects non-scalar losses") {
  NodeRef x = parameter(Matrix::full(2, 2, 1.0));
  CHECK_THROWS_AS(backward(add(x, x)), contract_error);
}

TEST_CASE("backward visits shared subgraphs once") {
  // if y were double-counted the gradient would be 8 instead of 4
  NodeRef x = parameter(Matrix::full(1, 1, 1.0));
  NodeRef y = scale(x, 2.0);
  NodeRef loss = add(y, y);
  backward(loss);
  CHECK(x->grad.at(0, 0) == 4.0);
}

TEST_CASE("constants build no graph") {
  NodeRef a = constant(Matrix::full(2, 2, 1.0));
  NodeRef b = constant(Matrix::full(2, 2, 2.0));
  NodeRef c = matmul(a, b);
  CHECK(c->parents.empty());
  CHECK_FALSE(c->needs_grad());
}

TEST_CASE("softmax cross entropy: uniform logits give ln(k)") {
  for (std::size_t k : {2, 5, 10}) {
    NodeRef logits = parameter(Matrix::full(1, k, 0.37));
    NodeRef loss = softmax_cross_entropy(logits, std::size_t{0});
    CHECK(scalar_value(loss) == doctest::Approx(std::log(double(k))).epsilon(1e-12));
  }
}

TEST_CASE("softmax cross entropy: confident correct logits") {
  // oracle: -ln sigma(20) evaluated in closed form
  const double expected = std::log1p(std::exp(-20.0));
  NodeRef logits = parameter(Matrix::from_rows(1, 2, {10.0, -10.0}));
  NodeRef loss = softmax_cross_entropy(logits, std::size_t{0});
  CHECK(scalar_value(loss) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("softmax cross entropy rejects out-of-range targets") {
  NodeRef logits = parameter(Matrix::full(1, 3, 0.0));
  CHECK_THROWS_AS(softmax_cross_entropy(logits, std::size_t{3}), index_error);
}

TEST_CASE("softmax cross entropy gradient matches finite differences") {
  Rng rng(3);
  NodeRef logits = random_param(4, 6, rng, 2.0);
  std::vector<std::size_t> targets = {1, 0, 5, 2};
  auto res = fd_check({logits}, [&] { return softmax_cross_entropy(logits, targets); });
  CHECK(res.max_rel < 1e-4);
  CHECK(res.checked == 24);
}

TEST_CASE("kl divergence of identical logits is zero") {
  Rng rng(4);
  NodeRef p = random_param(3, 5, rng, 2.0);
  NodeRef q = parameter(p->value);
  CHECK(std::fabs(scalar_value(kl_divergence(p, q))) <= 1e-12);
}

TEST_CASE("kl divergence is non-negative on random logits") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    NodeRef p = random_param(2, 4, rng, 3.0);
    NodeRef q = random_param(2, 4, rng, 3.0);
    CHECK(scalar_value(kl_divergence(p, q)) >= -1e-12);
  }
}

TEST_CASE("kl divergence matches a direct summation oracle") {
  // p = softmax([0, 0]), q = softmax([ln 3, 0])
  NodeRef p = constant(Matrix::from_rows(1, 2, {0.0, 0.0}));
  NodeRef q = parameter(Matrix::from_rows(1, 2, {std::log(3.0), 0.0}));
  // direct summation over the two classes
  const double pv[2] = {0.5, 0.5};
  const double qv[2] = {0.75, 0.25};
  double expected = 0.0;
  for (int i = 0; i < 2; ++i) expected += pv[i] * (std::log(pv[i]) - std::log(qv[i]));
  CHECK(scalar_value(kl_divergence(p, q)) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("kl divergence detaches the teacher side") {
  Rng rng(6);
  NodeRef p = random_param(2, 3, rng);
  NodeRef q = random_param(2, 3, rng);
  NodeRef loss = kl_divergence(p, q);
  backward(loss);
  CHECK(p->grad.empty());  // no gradient flowed into the teacher
  CHECK_FALSE(q->grad.empty());
}

TEST_CASE("kl divergence gradient matches finite differences") {
  Rng rng(7);
  NodeRef p = constant(Matrix::randn(3, 5, rng, 2.0));
  NodeRef q = random_param(3, 5, rng, 2.0);
  auto res = fd_check({q}, [&] { return kl_divergence(p, q); });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("kl divergence rejects shape mismatches") {
  NodeRef p = constant(Matrix(1, 3));
  NodeRef q = constant(Matrix(1, 4));
  CHECK_THROWS_AS(kl_divergence(p, q), shape_error);
}

TEST_CASE("matmul gradients match finite differences") {
  Rng rng(8);
  NodeRef a = random_param(3, 4, rng);
  NodeRef b = random_param(4, 2, rng);
  auto res = fd_check({a, b}, [&] { return sum_all(matmul(a, b)); });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("matmul_nt gradients match finite differences") {
  Rng rng(9);
  NodeRef a = random_param(3, 4, rng);
  NodeRef b = random_param(5, 4, rng);
  auto res = fd_check({a, b}, [&] {
    return sum_all(hadamard_ad(matmul_nt(a, b), matmul_nt(a, b)));
  });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
  Rng rng(10);
  // keep inputs away from zero so the subgradient choice cannot flake
  Matrix v = Matrix::randn(4, 4, rng, 1.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::fabs(v.data()[i]) < 1e-2) v.data()[i] = 0.5;
  }
  NodeRef a = parameter(v);
  auto res = fd_check({a}, [&] { return sum_all(hadamard_ad(relu(a), relu(a))); });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("softmax_rows gradient matches finite differences") {
  Rng rng(11);
  NodeRef a = random_param(3, 6, rng, 2.0);
  NodeRef weights = constant(Matrix::randn(3, 6, rng, 1.0));
  auto res = fd_check({a}, [&] { return sum_all(hadamard_ad(softmax_rows(a), weights)); });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("layer_norm gradients match finite differences") {
  Rng rng(12);
  NodeRef a = random_param(4, 8, rng, 1.5);
  NodeRef g = random_param(1, 8, rng, 0.5);
  NodeRef b = random_param(1, 8, rng, 0.5);
  NodeRef weights = constant(Matrix::randn(4, 8, rng, 1.0));
  auto res = fd_check({a, g, b}, [&] {
    return sum_all(hadamard_ad(layer_norm(a, g, b), weights));
  });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("row and column structure ops match finite differences") {
  Rng rng(13);
  NodeRef a = random_param(6, 4, rng);
  NodeRef bias = random_param(1, 4, rng);
  SUBCASE("take_rows with repeats") {
    auto res = fd_check({a}, [&] {
      NodeRef t = take_rows(a, {0, 2, 2, 5});
      return sum_all(hadamard_ad(t, t));
    });
    CHECK(res.max_rel < 1e-4);
  }
  SUBCASE("slice and concat columns") {
    auto res = fd_check({a}, [&] {
      NodeRef left = slice_cols(a, 0, 2);
      NodeRef right = slice_cols(a, 2, 4);
      NodeRef glued = concat_cols({right, left});
      return sum_all(hadamard_ad(glued, glued));
    });
    CHECK(res.max_rel < 1e-4);
  }
  SUBCASE("concat rows") {
    NodeRef b = random_param(2, 4, rng);
    auto res = fd_check({a, b}, [&] {
      NodeRef glued = concat_rows({a, b});
      return sum_all(hadamard_ad(glued, glued));
    });
    CHECK(res.max_rel < 1e-4);
  }
  SUBCASE("row-broadcast bias add") {
    auto res = fd_check({a, bias}, [&] {
      NodeRef y = add_row_broadcast(a, bias);
      return sum_all(hadamard_ad(y, y));
    });
    CHECK(res.max_rel < 1e-4);
  }
}

TEST_CASE("embedding rows scatter gradients back into the table") {
  Rng rng(14);
  NodeRef table = random_param(10, 3, rng);
  auto res = fd_check({table}, [&] {
    NodeRef e = embedding_rows(table, {1, 4, 4, 9});
    return sum_all(hadamard_ad(e, e));
  });
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("clamp_max_scalar passes gradient only below the cap") {
  NodeRef x = parameter(Matrix::full(1, 1, 2.0));
  SUBCASE("below cap") {
    NodeRef y = clamp_max_scalar(x, 5.0);
    backward(y);
    CHECK(x->grad.at(0, 0) == 1.0);
  }
  SUBCASE("above cap") {
    NodeRef y = clamp_max_scalar(x, 1.0);
    CHECK(scalar_value(y) == 1.0);
    backward(y);
    CHECK(x->grad.empty());
  }
}

TEST_CASE("gradient buffers match value shapes") {
  Rng rng(15);
  NodeRef a = random_param(3, 7, rng);
  backward(sum_all(matmul(a, constant(Matrix::randn(7, 1, rng, 1.0)))));
  REQUIRE_FALSE(a->grad.empty());
  CHECK(a->grad.rows() == a->value.rows());
  CHECK(a->grad.cols() == a->value.cols());
}
