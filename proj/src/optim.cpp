#include "eul/optim.h"

#include <algorithm>

#include "eul/errors.h"

namespace eul {

Sgd::Sgd(std::vector<NodeRef> params, const SgdConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.total_steps == 0) throw config_error("sgd: total_steps must be positive");
  if (cfg_.warmup_ratio < 0.0 || cfg_.warmup_ratio >= 1.0)
    throw config_error("sgd: warmup_ratio must be in [0, 1)");
  warmup_steps_ =
      static_cast<std::size_t>(cfg_.warmup_ratio * static_cast<double>(cfg_.total_steps));
  if (cfg_.momentum != 0.0) {
    velocity_.reserve(params_.size());
    for (const auto& p : params_)
      velocity_.emplace_back(p->value.rows(), p->value.cols());
  }
}

double Sgd::lr_at(std::size_t step) const {
  const double t = static_cast<double>(std::min(step, cfg_.total_steps - 1));
  const double w = static_cast<double>(warmup_steps_);
  const double total = static_cast<double>(cfg_.total_steps);
  if (t < w) return cfg_.lr_max * (t + 1.0) / w;
  return cfg_.lr_max * (total - t) / (total - w);
}

void Sgd::step() {
  const double lr = current_lr();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Node& p = *params_[i];
    if (p.grad.empty()) continue;
    if (cfg_.momentum != 0.0) {
      velocity_[i].scale_in_place(cfg_.momentum);
      velocity_[i].add_in_place(p.grad);
      p.value.add_scaled_in_place(-lr, velocity_[i]);
    } else {
      p.value.add_scaled_in_place(-lr, p.grad);
    }
  }
  zero_grad();
  ++step_;
}

void Sgd::zero_grad() {
  for (const auto& p : params_) p->zero_grad();
}

}  // namespace eul
