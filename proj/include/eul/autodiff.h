#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "eul/matrix.h"

namespace eul {

// Reverse-mode autodiff over whole matrices. A Node owns its value and a
// lazily allocated gradient of the same shape. Ops record parents and a
// backward rule only when some input needs a gradient, so forward passes
// through frozen weights build no graph at all.
struct Node {
  Matrix value;
  Matrix grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool needs_grad() const { return requires_grad || !parents.empty(); }
  Matrix& grad_ref();                 // allocates zeros on first use
  void accumulate(const Matrix& g);   // grad += g
  void zero_grad() { grad = Matrix(); }
};

using NodeRef = std::shared_ptr<Node>;

// leaves
NodeRef constant(Matrix value);
NodeRef parameter(Matrix value);  // requires_grad = true

// elementwise / structural
NodeRef add(const NodeRef& a, const NodeRef& b);
NodeRef sub(const NodeRef& a, const NodeRef& b);
NodeRef scale(const NodeRef& a, double s);
NodeRef neg(const NodeRef& a);
NodeRef relu(const NodeRef& a);
NodeRef hadamard_ad(const NodeRef& a, const NodeRef& b);
NodeRef add_const(const NodeRef& a, const Matrix& c);         // c carries no grad
NodeRef add_row_broadcast(const NodeRef& a, const NodeRef& bias);  // bias is 1 x cols

// products
NodeRef matmul(const NodeRef& a, const NodeRef& b);
NodeRef matmul_nt(const NodeRef& a, const NodeRef& b);  // a * b^T

// row selection/assembly
NodeRef take_rows(const NodeRef& a, std::vector<std::size_t> indices);
NodeRef concat_rows(const std::vector<NodeRef>& parts);
NodeRef slice_cols(const NodeRef& a, std::size_t c0, std::size_t c1);
NodeRef concat_cols(const std::vector<NodeRef>& parts);

// rows of `table` gathered by token id; backward scatter-adds into the table
NodeRef embedding_rows(const NodeRef& table, std::vector<std::size_t> ids);

// row-wise softmax (attention weights)
NodeRef softmax_rows(const NodeRef& a);

// y = (x - mean)/sqrt(var + eps) * gamma + beta, per row; gamma/beta 1 x cols
NodeRef layer_norm(const NodeRef& a, const NodeRef& gamma, const NodeRef& beta,
                   double eps = 1e-5);

// reductions to 1x1
NodeRef sum_all(const NodeRef& a);
NodeRef mean_all(const NodeRef& a);

// scalar helpers (all operands 1x1)
NodeRef clamp_max_scalar(const NodeRef& a, double cap);
NodeRef weighted_sum(const std::vector<std::pair<double, NodeRef>>& terms);

// losses
// mean over rows of -log softmax(logits)[target]; stabilized by max-subtraction
NodeRef softmax_cross_entropy(const NodeRef& logits, std::span<const std::size_t> targets);
NodeRef softmax_cross_entropy(const NodeRef& logits, std::size_t target);
// mean over rows of KL(softmax(p_logits) || softmax(q_logits)); the teacher
// side p_logits is treated as a detached constant, gradient flows into
// q_logits only
NodeRef kl_divergence(const NodeRef& p_logits, const NodeRef& q_logits);

// Reverse topological traversal from a scalar loss. Populates gradients of
// every ancestor that needs one; each node's rule runs exactly once.
void backward(const NodeRef& loss);

double scalar_value(const NodeRef& n);

}  // namespace eul
