#pragma once

// Shared test utilities: the central finite-difference gradient oracle and a
// few corpus/model helpers for the behavioral suites.

#include <cmath>
#include <functional>
#include <vector>

#include "eul/autodiff.h"
#include "eul/rng.h"

namespace eul::testing {

struct FdResult {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

// Central finite differences against the analytic gradient of a scalar loss.
// `build_loss` must rebuild the graph from the same parameter nodes so that
// value perturbations are visible. Relative error uses a floored denominator
// so near-zero gradients are compared absolutely at 1e-3 * tol precision.
inline FdResult fd_check(const std::vector<NodeRef>& params,
                         const std::function<NodeRef()>& build_loss, double h = 1e-5) {
  for (const auto& p : params) p->zero_grad();
  NodeRef loss = build_loss();
  backward(loss);
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (const auto& p : params)
    grads.push_back(p->grad.empty() ? Matrix(p->value.rows(), p->value.cols()) : p->grad);

  FdResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Node& p = *params[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.data()[i];
      p.value.data()[i] = saved + h;
      const double f_plus = scalar_value(build_loss());
      p.value.data()[i] = saved - h;
      const double f_minus = scalar_value(build_loss());
      p.value.data()[i] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * h);
      const double g = grads[pi].data()[i];
      const double denom = std::max({1e-3, std::fabs(fd), std::fabs(g)});
      const double rel = std::fabs(fd - g) / denom;
      res.max_rel = std::max(res.max_rel, rel);
      ++res.checked;
    }
    p.zero_grad();
  }
  return res;
}

}  // namespace eul::testing
