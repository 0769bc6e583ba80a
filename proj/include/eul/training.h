#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "eul/data.h"
#include "eul/model.h"

namespace eul {

// Backbone task training: classification cross-entropy plus a weighted
// masked-token objective so the lm head is meaningful. Used for the original
// model and reused verbatim by the full-model unlearning baselines.
struct TrainConfig {
  double lr = 0.3;
  std::size_t epochs = 30;
  std::size_t min_epochs = 8;  // keep the lm head training a while
  std::size_t batch_size = 16;
  double warmup_ratio = 0.06;
  double mlm_weight = 0.2;
  bool early_stop_at_full_accuracy = true;
  std::uint64_t seed = 1;
};

struct TrainStats {
  std::size_t epochs_run = 0;
  double final_class_loss = 0.0;
  double final_mlm_loss = 0.0;
  double final_train_accuracy = 0.0;
};

// Called once per epoch with the ids of every record the optimizer saw, in
// order. Lets tests audit exactly which data influenced a model.
using EpochObserver =
    std::function<void(std::size_t epoch, const std::vector<std::string>& record_ids)>;

// Records whose id appears in `reverse_ids` contribute a sign-flipped,
// capped task loss (and are excluded from the masked-token term); everything
// else trains normally. With reverse_ids empty the code path is identical to
// plain training, so trajectories match bit for bit.
struct ReverseSpec {
  std::set<std::string> reverse_ids;
  double cap = 5.0;  // nats of cross-entropy beyond which the push stops
};

TrainStats train_backbone(TransformerModel& model, const std::vector<Record>& records,
                          const TrainConfig& cfg, const EpochObserver& observer = {},
                          const ReverseSpec* reverse = nullptr);

// argmax with ties broken toward the lowest class index
std::size_t argmax_row(const Matrix& logits, std::size_t row);

}  // namespace eul
