#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eul/data.h"
#include "eul/model.h"

namespace eul {

// Hyperparameters of the selective teacher-student objective and its
// alternating retain/forget schedule. Defaults follow the toolkit's tuned
// values: alpha 0.8, lambda 1.0, gamma 0.2.
struct UnlearnConfig {
  double alpha = 0.8;        // weight of the retain-side KL term
  double lambda_task = 1.0;  // weight of the retain-side task loss
  double gamma_lm = 0.2;     // weight of the negated masked-lm term
  double kl_forget_cap = 5.0;  // nats; bounds the divergence reward
  double cap_lm = 10.0;        // nats; bounds the negated lm term
  double learning_rate = 5e-2;
  std::size_t epochs = 3;  // alternating rounds (retain epoch + forget epoch)
  double warmup_ratio = 0.06;
  std::size_t batch_size = 16;
  std::size_t d_bottleneck = 8;
  bool enable_kl = true;
  bool enable_task = true;
  bool enable_lm = true;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochLosses {
  double kl_retain = 0.0;         // raw KL on retain batches
  double task = 0.0;              // cross-entropy on retain batches
  double retain_total = 0.0;      // alpha*kl_retain + lambda*task (enabled terms)
  double kl_forget_capped = 0.0;  // min(KL, cap) on forget batches
  double lm_ce_capped = 0.0;      // min(masked CE, cap_lm) on forget batches
  double forget_total = 0.0;      // -kl_forget_capped - gamma*lm_ce_capped
};

struct UnlearnReport {
  std::vector<EpochLosses> epochs;
  double update_time_s = 0.0;
  AdapterSet adapters;
};

// Loss terms. The teacher side is always treated as a detached constant.
NodeRef loss_kl(const NodeRef& teacher_logits, const NodeRef& student_logits,
                bool is_forget, double alpha, double cap);
NodeRef loss_task(const NodeRef& student_logits, std::span<const std::size_t> labels);
NodeRef loss_lm_negated(const NodeRef& student_mlm_logits,
                        std::span<const std::size_t> masked_targets, double cap_lm);

// Trains the adapter slots already inserted in `model` against its own
// frozen backbone as the teacher. Alternates one epoch over the retain set
// (alpha*KL + lambda*task) with one epoch over the forget set
// (-min(KL,cap) + gamma * negated lm) for `epochs` rounds. Only adapter
// parameters change.
UnlearnReport train_unlearn(TransformerModel& model, const CorpusSplit& split,
                            const UnlearnConfig& cfg);

// Convenience strategy entry: copies the original model, inserts fresh
// adapters at every layer, and runs train_unlearn.
struct EulResult {
  TransformerModel model;
  UnlearnReport report;
};
EulResult eul_unlearn(const TransformerModel& original, const CorpusSplit& split,
                      const UnlearnConfig& cfg);

}  // namespace eul
