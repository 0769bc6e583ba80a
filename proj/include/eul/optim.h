#pragma once

#include <cstddef>
#include <vector>

#include "eul/autodiff.h"

namespace eul {

// Stochastic gradient descent with linear warmup then linear decay. The
// schedule is a function of the global step only, so two runs with the same
// seed and step count follow identical trajectories.
struct SgdConfig {
  double lr_max = 5e-2;
  double warmup_ratio = 0.06;
  std::size_t total_steps = 1;
  double momentum = 0.0;
};

class Sgd {
 public:
  Sgd(std::vector<NodeRef> params, const SgdConfig& cfg);

  double lr_at(std::size_t step) const;
  double current_lr() const { return lr_at(step_); }
  std::size_t step_count() const { return step_; }

  // applies one update from accumulated gradients, then zeroes them
  void step();
  void zero_grad();

 private:
  std::vector<NodeRef> params_;
  SgdConfig cfg_;
  std::size_t warmup_steps_ = 0;
  std::size_t step_ = 0;
  std::vector<Matrix> velocity_;
};

}  // namespace eul
