#include "eul/training.h"

#include <algorithm>

#include "eul/optim.h"
#include "eul/rng.h"

namespace eul {

std::size_t argmax_row(const Matrix& logits, std::size_t row) {
  std::size_t best = 0;
  double best_v = logits.at(row, 0);
  for (std::size_t c = 1; c < logits.cols(); ++c) {
    if (logits.at(row, c) > best_v) {
      best_v = logits.at(row, c);
      best = c;
    }
  }
  return best;
}

TrainStats train_backbone(TransformerModel& model, const std::vector<Record>& records,
                          const TrainConfig& cfg, const EpochObserver& observer,
                          const ReverseSpec* reverse) {
  if (records.empty()) throw config_error("train_backbone: no records");
  if (cfg.epochs == 0) return {};

  BoundModel bound = bind(model, {.train_backbone = true, .train_adapters = false});
  const std::size_t steps_per_epoch = (records.size() + cfg.batch_size - 1) / cfg.batch_size;
  Sgd opt(bound.trainable,
          {.lr_max = cfg.lr,
           .warmup_ratio = cfg.warmup_ratio,
           .total_steps = std::max<std::size_t>(1, cfg.epochs * steps_per_epoch)});

  Rng shuffle_rng(Rng::derive(cfg.seed, 0x747261696eULL));
  TrainStats stats;
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    if (observer) {
      std::vector<std::string> ids;
      ids.reserve(order.size());
      for (std::size_t i : order) ids.push_back(records[i].id);
      observer(epoch, ids);
    }

    double class_loss_sum = 0.0, mlm_loss_sum = 0.0;
    std::size_t correct = 0, seen_normal = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);

      // batch window split by loss polarity (reverse side usually empty)
      std::vector<const Record*> normal, reversed;
      for (std::size_t i = start; i < end; ++i) {
        const Record& r = records[order[i]];
        if (reverse != nullptr && reverse->reverse_ids.count(r.id))
          reversed.push_back(&r);
        else
          normal.push_back(&r);
      }

      std::vector<std::pair<double, NodeRef>> terms;
      if (!normal.empty()) {
        std::vector<std::vector<std::size_t>> rows;
        std::vector<std::size_t> labels;
        std::vector<Record> copies;
        rows.reserve(normal.size());
        copies.reserve(normal.size());
        for (const Record* r : normal) {
          rows.push_back(r->tokens);
          labels.push_back(r->label);
          copies.push_back(*r);
        }
        EncodedBatch enc = encode_batch(model.cfg, rows);
        NodeRef logits = forward_class(bound, enc, false);
        for (std::size_t s = 0; s < labels.size(); ++s) {
          if (argmax_row(logits->value, s) == labels[s]) ++correct;
        }
        seen_normal += labels.size();
        NodeRef class_loss = softmax_cross_entropy(logits, labels);
        class_loss_sum += scalar_value(class_loss) * static_cast<double>(labels.size());
        terms.emplace_back(1.0, class_loss);

        if (cfg.mlm_weight > 0.0) {
          MaskedBatch mb = build_masked_batch(
              copies, MaskMode::random15,
              Rng::derive(cfg.seed, 0x6d6c6dULL + epoch, batch_index));
          MlmForward mf = forward_mlm(bound, mb, false);
          NodeRef mlm_loss = softmax_cross_entropy(mf.logits, mf.targets);
          mlm_loss_sum += scalar_value(mlm_loss) * static_cast<double>(labels.size());
          terms.emplace_back(cfg.mlm_weight, mlm_loss);
        }
      }
      if (!reversed.empty()) {
        std::vector<std::vector<std::size_t>> rows;
        std::vector<std::size_t> labels;
        for (const Record* r : reversed) {
          rows.push_back(r->tokens);
          labels.push_back(r->label);
        }
        EncodedBatch enc = encode_batch(model.cfg, rows);
        NodeRef logits = forward_class(bound, enc, false);
        NodeRef ce = softmax_cross_entropy(logits, labels);
        terms.emplace_back(-1.0, clamp_max_scalar(ce, reverse->cap));
      }
      if (terms.empty()) continue;
      backward(weighted_sum(terms));
      opt.step();
    }

    stats.epochs_run = epoch + 1;
    if (seen_normal > 0) {
      stats.final_class_loss = class_loss_sum / static_cast<double>(seen_normal);
      stats.final_mlm_loss = mlm_loss_sum / static_cast<double>(seen_normal);
      stats.final_train_accuracy =
          static_cast<double>(correct) / static_cast<double>(seen_normal);
    }

    if (cfg.early_stop_at_full_accuracy && epoch + 1 >= cfg.min_epochs &&
        seen_normal == records.size() && stats.final_train_accuracy >= 1.0)
      break;
  }
  commit(bound, model);
  return stats;
}

}  // namespace eul
