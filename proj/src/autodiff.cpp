#include "eul/autodiff.h"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "eul/kernels.h"

namespace eul {

Matrix& Node::grad_ref() {
  if (grad.empty() && value.size() > 0) grad = Matrix(value.rows(), value.cols());
  return grad;
}

void Node::accumulate(const Matrix& g) {
  if (!g.same_shape(value)) throw shape_error("gradient shape mismatch");
  grad_ref().add_in_place(g);
}

NodeRef constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

NodeRef parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

namespace {

bool any_needs_grad(const NodeRef& a) { return a->needs_grad(); }
bool any_needs_grad(const NodeRef& a, const NodeRef& b) {
  return a->needs_grad() || b->needs_grad();
}

NodeRef make_node(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

void record(const NodeRef& out, std::vector<NodeRef> parents,
            std::function<void(Node&)> fn) {
  out->parents = std::move(parents);
  out->backward_fn = std::move(fn);
}

}  // namespace

NodeRef add(const NodeRef& a, const NodeRef& b) {
  auto out = make_node(a->value + b->value);
  if (any_needs_grad(a, b)) {
    record(out, {a, b}, [a, b](Node& o) {
      if (a->needs_grad()) a->accumulate(o.grad);
      if (b->needs_grad()) b->accumulate(o.grad);
    });
  }
  return out;
}

NodeRef sub(const NodeRef& a, const NodeRef& b) {
  auto out = make_node(a->value - b->value);
  if (any_needs_grad(a, b)) {
    record(out, {a, b}, [a, b](Node& o) {
      if (a->needs_grad()) a->accumulate(o.grad);
      if (b->needs_grad()) b->grad_ref().add_scaled_in_place(-1.0, o.grad);
    });
  }
  return out;
}

NodeRef scale(const NodeRef& a, double s) {
  auto out = make_node(a->value * s);
  if (any_needs_grad(a)) {
    record(out, {a}, [a, s](Node& o) { a->grad_ref().add_scaled_in_place(s, o.grad); });
  }
  return out;
}

NodeRef neg(const NodeRef& a) { return scale(a, -1.0); }

NodeRef relu(const NodeRef& a) {
  Matrix y(a->value.rows(), a->value.cols());
  kernels::ops().relu(a->value.data(), y.data(), y.size());
  auto out = make_node(std::move(y));
  if (any_needs_grad(a)) {
    record(out, {a}, [a](Node& o) {
      kernels::ops().relu_grad(a->value.data(), o.grad.data(), a->grad_ref().data(),
                               o.grad.size());
    });
  }
  return out;
}

NodeRef hadamard_ad(const NodeRef& a, const NodeRef& b) {
  auto out = make_node(hadamard(a->value, b->value));
  if (any_needs_grad(a, b)) {
    record(out, {a, b}, [a, b](Node& o) {
      if (a->needs_grad()) a->accumulate(hadamard(o.grad, b->value));
      if (b->needs_grad()) b->accumulate(hadamard(o.grad, a->value));
    });
  }
  return out;
}

NodeRef add_const(const NodeRef& a, const Matrix& c) {
  auto out = make_node(a->value + c);
  if (any_needs_grad(a)) {
    record(out, {a}, [a](Node& o) { a->accumulate(o.grad); });
  }
  return out;
}

NodeRef add_row_broadcast(const NodeRef& a, const NodeRef& bias) {
  if (bias->value.rows() != 1 || bias->value.cols() != a->value.cols())
    throw shape_error("add_row_broadcast: bias must be 1 x cols");
  Matrix y = a->value;
  for (std::size_t r = 0; r < y.rows(); ++r)
    kernels::ops().add(y.row(r), bias->value.data(), y.row(r), y.cols());
  y.ensure_finite("add_row_broadcast");
  auto out = make_node(std::move(y));
  if (any_needs_grad(a, bias)) {
    record(out, {a, bias}, [a, bias](Node& o) {
      if (a->needs_grad()) a->accumulate(o.grad);
      if (bias->needs_grad()) {
        Matrix& bg = bias->grad_ref();
        for (std::size_t r = 0; r < o.grad.rows(); ++r)
          kernels::ops().add(bg.data(), o.grad.row(r), bg.data(), bg.cols());
      }
    });
  }
  return out;
}

NodeRef matmul(const NodeRef& a, const NodeRef& b) {
  auto out = make_node(matmul(a->value, b->value));
  if (any_needs_grad(a, b)) {
    record(out, {a, b}, [a, b](Node& o) {
      if (a->needs_grad()) a->accumulate(matmul_nt(o.grad, b->value));
      if (b->needs_grad()) b->accumulate(matmul_tn(a->value, o.grad));
    });
  }
  return out;
}

NodeRef matmul_nt(const NodeRef& a, const NodeRef& b) {
  auto out = make_node(matmul_nt(a->value, b->value));
  if (any_needs_grad(a, b)) {
    record(out, {a, b}, [a, b](Node& o) {
      if (a->needs_grad()) a->accumulate(matmul(o.grad, b->value));
      if (b->needs_grad()) b->accumulate(matmul_tn(o.grad, a->value));
    });
  }
  return out;
}

NodeRef take_rows(const NodeRef& a, std::vector<std::size_t> indices) {
  const std::size_t cols = a->value.cols();
  Matrix y(indices.size(), cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a->value.rows()) throw index_error("take_rows: row out of range");
    std::copy_n(a->value.row(indices[i]), cols, y.row(i));
  }
  auto out = make_node(std::move(y));
  if (any_needs_grad(a)) {
    auto idx = std::move(indices);
    record(out, {a}, [a, idx](Node& o) {
      Matrix& ag = a->grad_ref();
      for (std::size_t i = 0; i < idx.size(); ++i)
        kernels::ops().add(ag.row(idx[i]), o.grad.row(i), ag.row(idx[i]), ag.cols());
    });
  }
  return out;
}

NodeRef concat_rows(const std::vector<NodeRef>& parts) {
  if (parts.empty()) throw contract_error("concat_rows: no parts");
  const std::size_t cols = parts[0]->value.cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p->value.cols() != cols) throw shape_error("concat_rows: column mismatch");
    rows += p->value.rows();
  }
  Matrix y(rows, cols);
  std::size_t r = 0;
  for (const auto& p : parts) {
    std::copy_n(p->value.data(), p->value.size(), y.row(r));
    r += p->value.rows();
  }
  auto out = make_node(std::move(y));
  bool needs = false;
  for (const auto& p : parts) needs = needs || p->needs_grad();
  if (needs) {
    record(out, parts, [parts](Node& o) {
      std::size_t r0 = 0;
      for (const auto& p : parts) {
        const std::size_t pr = p->value.rows();
        if (p->needs_grad()) {
          Matrix& pg = p->grad_ref();
          kernels::ops().add(pg.data(), o.grad.row(r0), pg.data(), pg.size());
        }
        r0 += pr;
      }
    });
  }
  return out;
}

NodeRef slice_cols(const NodeRef& a, std::size_t c0, std::size_t c1) {
  if (c0 >= c1 || c1 > a->value.cols()) throw index_error("slice_cols: bad range");
  const std::size_t w = c1 - c0;
  Matrix y(a->value.rows(), w);
  for (std::size_t r = 0; r < y.rows(); ++r)
    std::copy_n(a->value.row(r) + c0, w, y.row(r));
  auto out = make_node(std::move(y));
  if (any_needs_grad(a)) {
    record(out, {a}, [a, c0, w](Node& o) {
      Matrix& ag = a->grad_ref();
      for (std::size_t r = 0; r < o.grad.rows(); ++r)
        kernels::ops().add(ag.row(r) + c0, o.grad.row(r), ag.row(r) + c0, w);
    });
  }
  return out;
}

NodeRef concat_cols(const std::vector<NodeRef>& parts) {
  if (parts.empty()) throw contract_error("concat_cols: no parts");
  const std::size_t rows = parts[0]->value.rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p->value.rows() != rows) throw shape_error("concat_cols: row mismatch");
    cols += p->value.cols();
  }
  Matrix y(rows, cols);
  std::size_t c = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p->value.row(r), p->value.cols(), y.row(r) + c);
    c += p->value.cols();
  }
  auto out = make_node(std::move(y));
  bool needs = false;
  for (const auto& p : parts) needs = needs || p->needs_grad();
  if (needs) {
    record(out, parts, [parts](Node& o) {
      std::size_t c0 = 0;
      for (const auto& p : parts) {
        const std::size_t w = p->value.cols();
        if (p->needs_grad()) {
          Matrix& pg = p->grad_ref();
          for (std::size_t r = 0; r < o.grad.rows(); ++r)
            kernels::ops().add(pg.row(r), o.grad.row(r) + c0, pg.row(r), w);
        }
        c0 += w;
      }
    });
  }
  return out;
}

NodeRef embedding_rows(const NodeRef& table, std::vector<std::size_t> ids) {
  return take_rows(table, std::move(ids));
}

NodeRef softmax_rows(const NodeRef& a) {
  const std::size_t rows = a->value.rows(), cols = a->value.cols();
  Matrix y(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double m = kernels::ops().max(a->value.row(r), cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double e = std::exp(a->value.at(r, c) - m);
      y.at(r, c) = e;
      z += e;
    }
    const double inv = 1.0 / z;
    kernels::ops().scale(y.row(r), inv, y.row(r), cols);
  }
  y.ensure_finite("softmax_rows");
  auto out = make_node(std::move(y));
  if (any_needs_grad(a)) {
    record(out, {a}, [a](Node& o) {
      Matrix gin(o.grad.rows(), o.grad.cols());
      for (std::size_t r = 0; r < o.grad.rows(); ++r) {
        const double gy = kernels::ops().dot(o.grad.row(r), o.value.row(r), o.grad.cols());
        for (std::size_t c = 0; c < o.grad.cols(); ++c)
          gin.at(r, c) = o.value.at(r, c) * (o.grad.at(r, c) - gy);
      }
      a->accumulate(gin);
    });
  }
  return out;
}

NodeRef layer_norm(const NodeRef& a, const NodeRef& gamma, const NodeRef& beta, double eps) {
  const std::size_t rows = a->value.rows(), cols = a->value.cols();
  if (gamma->value.cols() != cols || beta->value.cols() != cols)
    throw shape_error("layer_norm: gamma/beta width mismatch");
  Matrix xhat(rows, cols), y(rows, cols);
  std::vector<double> inv_sigma(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double mean = kernels::ops().sum(a->value.row(r), cols) / static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = a->value.at(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = inv;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (a->value.at(r, c) - mean) * inv;
      xhat.at(r, c) = xh;
      y.at(r, c) = xh * gamma->value.at(0, c) + beta->value.at(0, c);
    }
  }
  y.ensure_finite("layer_norm");
  auto out = make_node(std::move(y));
  if (a->needs_grad() || gamma->needs_grad() || beta->needs_grad()) {
    auto xh = std::make_shared<Matrix>(std::move(xhat));
    auto is = std::make_shared<std::vector<double>>(std::move(inv_sigma));
    record(out, {a, gamma, beta}, [a, gamma, beta, xh, is](Node& o) {
      const std::size_t rows = o.grad.rows(), cols = o.grad.cols();
      if (gamma->needs_grad() || beta->needs_grad()) {
        Matrix& gg = gamma->grad_ref();
        Matrix& bg = beta->grad_ref();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            if (gamma->needs_grad()) gg.at(0, c) += o.grad.at(r, c) * xh->at(r, c);
            if (beta->needs_grad()) bg.at(0, c) += o.grad.at(r, c);
          }
        }
      }
      if (a->needs_grad()) {
        Matrix gin(rows, cols);
        const double inv_n = 1.0 / static_cast<double>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const double gh = o.grad.at(r, c) * gamma->value.at(0, c);
            mean_g += gh;
            mean_gx += gh * xh->at(r, c);
          }
          mean_g *= inv_n;
          mean_gx *= inv_n;
          for (std::size_t c = 0; c < cols; ++c) {
            const double gh = o.grad.at(r, c) * gamma->value.at(0, c);
            gin.at(r, c) = (*is)[r] * (gh - mean_g - xh->at(r, c) * mean_gx);
          }
        }
        a->accumulate(gin);
      }
    });
  }
  return out;
}

NodeRef sum_all(const NodeRef& a) {
  Matrix y(1, 1);
  y.at(0, 0) = a->value.sum();
  auto out = make_node(std::move(y));
  if (any_needs_grad(a)) {
    record(out, {a}, [a](Node& o) {
      const double g = o.grad.at(0, 0);
      Matrix ones = Matrix::full(a->value.rows(), a->value.cols(), g);
      a->accumulate(ones);
    });
  }
  return out;
}

NodeRef mean_all(const NodeRef& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a->value.size()));
}

NodeRef clamp_max_scalar(const NodeRef& a, double cap) {
  if (a->value.size() != 1) throw contract_error("clamp_max_scalar: operand not scalar");
  const bool clipped = a->value.at(0, 0) > cap;
  Matrix y(1, 1);
  y.at(0, 0) = clipped ? cap : a->value.at(0, 0);
  auto out = make_node(std::move(y));
  if (any_needs_grad(a) && !clipped) {
    record(out, {a}, [a](Node& o) { a->accumulate(o.grad); });
  }
  return out;
}

NodeRef weighted_sum(const std::vector<std::pair<double, NodeRef>>& terms) {
  if (terms.empty()) return constant(Matrix(1, 1));
  NodeRef acc = scale(terms[0].second, terms[0].first);
  for (std::size_t i = 1; i < terms.size(); ++i)
    acc = add(acc, scale(terms[i].second, terms[i].first));
  return acc;
}

namespace {

// row-wise log-softmax into `out`, returns nothing; stabilized
void log_softmax_rows(const Matrix& x, Matrix& out) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double m = kernels::ops().max(x.row(r), x.cols());
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) z += std::exp(x.at(r, c) - m);
    const double logz = std::log(z) + m;
    for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(r, c) - logz;
  }
}

}  // namespace

NodeRef softmax_cross_entropy(const NodeRef& logits, std::span<const std::size_t> targets) {
  const std::size_t rows = logits->value.rows(), cols = logits->value.cols();
  if (targets.size() != rows) throw shape_error("cross_entropy: one target per row");
  for (std::size_t t : targets) {
    if (t >= cols) throw index_error("cross_entropy: target class out of range");
  }
  Matrix logp(rows, cols);
  log_softmax_rows(logits->value, logp);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) loss -= logp.at(r, targets[r]);
  loss /= static_cast<double>(rows);
  Matrix y(1, 1);
  y.at(0, 0) = loss;
  y.ensure_finite("softmax_cross_entropy");
  auto out = make_node(std::move(y));
  if (logits->needs_grad()) {
    auto lp = std::make_shared<Matrix>(std::move(logp));
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    record(out, {logits}, [logits, lp, tg](Node& o) {
      const double g = o.grad.at(0, 0) / static_cast<double>(lp->rows());
      Matrix gin(lp->rows(), lp->cols());
      for (std::size_t r = 0; r < lp->rows(); ++r) {
        for (std::size_t c = 0; c < lp->cols(); ++c)
          gin.at(r, c) = g * std::exp(lp->at(r, c));
        gin.at(r, tg[r]) -= g;
      }
      logits->accumulate(gin);
    });
  }
  return out;
}

NodeRef softmax_cross_entropy(const NodeRef& logits, std::size_t target) {
  const std::size_t t[1] = {target};
  return softmax_cross_entropy(logits, std::span<const std::size_t>(t, 1));
}

NodeRef kl_divergence(const NodeRef& p_logits, const NodeRef& q_logits) {
  if (!p_logits->value.same_shape(q_logits->value))
    throw shape_error("kl_divergence: shape mismatch");
  const std::size_t rows = p_logits->value.rows(), cols = p_logits->value.cols();
  Matrix logp(rows, cols), logq(rows, cols);
  log_softmax_rows(p_logits->value, logp);
  log_softmax_rows(q_logits->value, logq);
  double kl = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c)
      kl += std::exp(logp.at(r, c)) * (logp.at(r, c) - logq.at(r, c));
  }
  kl /= static_cast<double>(rows);
  Matrix y(1, 1);
  y.at(0, 0) = kl;
  y.ensure_finite("kl_divergence");
  auto out = make_node(std::move(y));
  if (q_logits->needs_grad()) {
    auto lp = std::make_shared<Matrix>(std::move(logp));
    auto lq = std::make_shared<Matrix>(std::move(logq));
    record(out, {q_logits}, [q_logits, lp, lq](Node& o) {
      const double g = o.grad.at(0, 0) / static_cast<double>(lp->rows());
      Matrix gin(lp->rows(), lp->cols());
      for (std::size_t r = 0; r < lp->rows(); ++r) {
        for (std::size_t c = 0; c < lp->cols(); ++c)
          gin.at(r, c) = g * (std::exp(lq->at(r, c)) - std::exp(lp->at(r, c)));
      }
      q_logits->accumulate(gin);
    });
  }
  return out;
}

void backward(const NodeRef& loss) {
  if (loss->value.size() != 1)
    throw contract_error("backward: loss must be a 1x1 scalar");
  // iterative post-order DFS, each node visited once
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next].get();
      ++next;
      if (!p->parents.empty() || p->backward_fn) {
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  loss->grad_ref().at(0, 0) += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

double scalar_value(const NodeRef& n) {
  if (n->value.size() != 1) throw contract_error("scalar_value: not a scalar node");
  return n->value.at(0, 0);
}

}  // namespace eul
