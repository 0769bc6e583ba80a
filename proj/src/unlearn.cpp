#include "eul/unlearn.h"

#include <algorithm>
#include <chrono>

#include "eul/optim.h"
#include "eul/rng.h"

namespace eul {

void UnlearnConfig::validate() const {
  if (alpha < 0.0 || lambda_task < 0.0 || gamma_lm < 0.0)
    throw config_error("unlearn: loss weights must be non-negative");
  if (kl_forget_cap <= 0.0) throw config_error("unlearn: kl_forget_cap must be positive");
  if (cap_lm <= 0.0) throw config_error("unlearn: cap_lm must be positive");
  if (learning_rate <= 0.0) throw config_error("unlearn: learning_rate must be positive");
  if (batch_size == 0) throw config_error("unlearn: batch_size must be positive");
  if (d_bottleneck == 0) throw config_error("unlearn: d_bottleneck must be positive");
  if (warmup_ratio < 0.0 || warmup_ratio >= 1.0)
    throw config_error("unlearn: warmup_ratio must be in [0, 1)");
}

NodeRef loss_kl(const NodeRef& teacher_logits, const NodeRef& student_logits,
                bool is_forget, double alpha, double cap) {
  NodeRef kl = kl_divergence(teacher_logits, student_logits);
  if (is_forget) return neg(clamp_max_scalar(kl, cap));
  return scale(kl, alpha);
}

NodeRef loss_task(const NodeRef& student_logits, std::span<const std::size_t> labels) {
  return softmax_cross_entropy(student_logits, labels);
}

NodeRef loss_lm_negated(const NodeRef& student_mlm_logits,
                        std::span<const std::size_t> masked_targets, double cap_lm) {
  if (masked_targets.empty()) throw contract_error("loss_lm_negated: no masked positions");
  NodeRef ce = softmax_cross_entropy(student_mlm_logits, masked_targets);
  return neg(clamp_max_scalar(ce, cap_lm));
}

namespace {

struct PhaseAverager {
  double weighted = 0.0;
  std::size_t count = 0;
  void add(double v, std::size_t n) {
    weighted += v * static_cast<double>(n);
    count += n;
  }
  double mean() const { return count == 0 ? 0.0 : weighted / static_cast<double>(count); }
};

std::vector<std::vector<const Record*>> shuffled_batches(const std::vector<Record>& records,
                                                         std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<const Record*>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::vector<const Record*> b;
    const std::size_t end = std::min(order.size(), start + batch_size);
    for (std::size_t i = start; i < end; ++i) b.push_back(&records[order[i]]);
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace

UnlearnReport train_unlearn(TransformerModel& model, const CorpusSplit& split,
                            const UnlearnConfig& cfg) {
  cfg.validate();
  if (split.retain.empty())
    throw config_error(
        "unlearn: retain set empty; total-deletion requests need the retrain strategy");
  if (split.forget.empty()) throw config_error("unlearn: forget set empty");
  if (!model.any_adapter()) throw contract_error("unlearn: model has no adapter slots inserted");
  if (model.adapter_parameter_ratio() > 0.01)
    throw config_error("unlearn: adapter parameters exceed 1% of the backbone");

  const auto started = std::chrono::steady_clock::now();
  const std::uint64_t checksum_before = backbone_checksum(model);

  BoundModel bound = bind(model, {.train_backbone = false, .train_adapters = true});
  const std::size_t retain_steps =
      (split.retain.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t forget_steps =
      (split.forget.size() + cfg.batch_size - 1) / cfg.batch_size;
  Sgd opt(bound.trainable,
          {.lr_max = cfg.learning_rate,
           .warmup_ratio = cfg.warmup_ratio,
           .total_steps = std::max<std::size_t>(1, cfg.epochs * (retain_steps + forget_steps))});

  Rng shuffle_rng(Rng::derive(cfg.seed, 0x756e6cULL));
  UnlearnReport report;
  report.epochs.reserve(cfg.epochs);

  for (std::size_t round = 0; round < cfg.epochs; ++round) {
    EpochLosses ep;

    // retain epoch: follow the teacher, keep the task
    {
      PhaseAverager kl_avg, task_avg;
      auto batches = shuffled_batches(split.retain, cfg.batch_size, shuffle_rng);
      for (const auto& batch : batches) {
        std::vector<std::vector<std::size_t>> rows;
        std::vector<std::size_t> labels;
        for (const Record* r : batch) {
          rows.push_back(r->tokens);
          labels.push_back(r->label);
        }
        EncodedBatch enc = encode_batch(model.cfg, rows);
        std::vector<std::pair<double, NodeRef>> terms;
        NodeRef student;
        if (cfg.enable_kl || cfg.enable_task) student = forward_class(bound, enc, true);
        if (cfg.enable_kl) {
          NodeRef teacher = forward_class(bound, enc, false);
          NodeRef kl = kl_divergence(teacher, student);
          kl_avg.add(scalar_value(kl), batch.size());
          terms.emplace_back(cfg.alpha, kl);
        }
        if (cfg.enable_task) {
          NodeRef task = loss_task(student, labels);
          task_avg.add(scalar_value(task), batch.size());
          terms.emplace_back(cfg.lambda_task, task);
        }
        if (terms.empty()) continue;
        backward(weighted_sum(terms));
        opt.step();
      }
      ep.kl_retain = kl_avg.mean();
      ep.task = task_avg.mean();
      ep.retain_total = (cfg.enable_kl ? cfg.alpha * ep.kl_retain : 0.0) +
                        (cfg.enable_task ? cfg.lambda_task * ep.task : 0.0);
    }

    // forget epoch: diverge from the teacher, negate the lm objective
    {
      PhaseAverager kl_avg, lm_avg;
      auto batches = shuffled_batches(split.forget, cfg.batch_size, shuffle_rng);
      for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const auto& batch = batches[bi];
        std::vector<std::vector<std::size_t>> rows;
        std::vector<Record> copies;
        for (const Record* r : batch) {
          rows.push_back(r->tokens);
          copies.push_back(*r);
        }
        std::vector<std::pair<double, NodeRef>> terms;
        if (cfg.enable_kl) {
          EncodedBatch enc = encode_batch(model.cfg, rows);
          NodeRef teacher = forward_class(bound, enc, false);
          NodeRef student = forward_class(bound, enc, true);
          NodeRef capped = clamp_max_scalar(kl_divergence(teacher, student),
                                            cfg.kl_forget_cap);
          kl_avg.add(scalar_value(capped), batch.size());
          terms.emplace_back(-1.0, capped);
        }
        if (cfg.enable_lm) {
          MaskedBatch mb = build_masked_batch(
              copies, MaskMode::random15,
              Rng::derive(cfg.seed, 0x666f726765ULL + round, bi));
          if (!mb.rows.empty()) {
            MlmForward mf = forward_mlm(bound, mb, true);
            NodeRef ce = softmax_cross_entropy(mf.logits, mf.targets);
            NodeRef capped = clamp_max_scalar(ce, cfg.cap_lm);
            lm_avg.add(scalar_value(capped), batch.size());
            terms.emplace_back(-cfg.gamma_lm, capped);
          }
        }
        if (terms.empty()) continue;
        backward(weighted_sum(terms));
        opt.step();
      }
      ep.kl_forget_capped = kl_avg.mean();
      ep.lm_ce_capped = lm_avg.mean();
      ep.forget_total = (cfg.enable_kl ? -ep.kl_forget_capped : 0.0) +
                        (cfg.enable_lm ? -cfg.gamma_lm * ep.lm_ce_capped : 0.0);
    }

    report.epochs.push_back(ep);
  }

  commit(bound, model);
  if (backbone_checksum(model) != checksum_before)
    throw contract_error("unlearn: backbone weights changed during adapter training");

  report.adapters = extract_adapter_set(model, split.provenance.request_id);
  const auto elapsed = std::chrono::steady_clock::now() - started;
  report.update_time_s =
      std::max(1e-9, std::chrono::duration<double>(elapsed).count());
  return report;
}

EulResult eul_unlearn(const TransformerModel& original, const CorpusSplit& split,
                      const UnlearnConfig& cfg) {
  EulResult result;
  result.model = original;
  clear_adapters(result.model);
  Rng rng(Rng::derive(cfg.seed, 0x616461707465ULL));
  for (std::size_t i = 0; i < result.model.cfg.n_layers; ++i)
    insert_adapter(result.model, i,
                   UnlearningLayer::init(result.model.cfg.d_model, cfg.d_bottleneck, rng));
  result.report = train_unlearn(result.model, split, cfg);
  return result;
}

}  // namespace eul
