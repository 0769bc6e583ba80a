#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eul/data.h"
#include "eul/model.h"
#include "eul/training.h"

namespace eul {

// Majority-vote ensemble produced by sharded training. Ties break toward the
// lowest class index.
struct SisaModel {
  std::vector<TransformerModel> shards;
};

struct StrategyResult {
  std::string strategy;
  std::optional<TransformerModel> model;
  std::optional<SisaModel> sisa;
  double update_time_s = 0.0;
  std::string config_snapshot;  // json text of the effective config
};

// Fresh backbone trained only on the retain set; the gold forgetting
// reference. `model_init_seed` defaults to the training seed.
StrategyResult retrain(const CorpusSplit& split, const BackboneConfig& bcfg,
                       const TrainConfig& tcfg,
                       std::optional<std::uint64_t> model_init_seed = std::nullopt,
                       const EpochObserver& observer = {});

// Continues training the full original model on the retain set only.
StrategyResult finetune_retain(const TransformerModel& original, const CorpusSplit& split,
                               const TrainConfig& tcfg);

// Fine-tunes the full model on retain + forget with the task-loss sign
// flipped (capped) on forget batches.
StrategyResult reverse_gradient(const TransformerModel& original, const CorpusSplit& split,
                                const TrainConfig& tcfg, double reverse_cap = 5.0);

// ---------------------------------------------------------------------------
// SISA-lite: sharded, isolated, sliced training with checkpoint rollback.

struct SisaConfig {
  std::size_t n_shards = 4;
  std::size_t n_slices = 4;
  TrainConfig train;
  std::string checkpoint_dir;  // optional; per-slice checkpoints written here
};

struct SisaDetail {
  std::vector<TransformerModel> original_shards;
  std::vector<TransformerModel> updated_shards;
  std::vector<std::uint8_t> shard_touched;
  std::vector<std::size_t> rollback_slice;  // first retrained slice per shard (n_slices if none)
  double initial_train_time_s = 0.0;
  double update_time_s = 0.0;  // rollback + forward retraining only
};

// Records are assigned to shards by hashing their lowest entity key, so a
// single-entity deletion touches one shard; slices partition each shard
// sequentially. Stage k trains on the union of slices 1..k starting from the
// checkpoint taken before the stage.
SisaDetail sisa_lite(const std::vector<Record>& train_records, const DeletionRequest& request,
                     const std::vector<std::string>& known_entities, const SisaConfig& cfg,
                     const BackboneConfig& bcfg);

StrategyResult sisa_strategy(const std::vector<Record>& train_records,
                             const DeletionRequest& request,
                             const std::vector<std::string>& known_entities,
                             const SisaConfig& cfg, const BackboneConfig& bcfg);

// Seed derivations, exposed so tests can align a bare retrain with a
// degenerate 1x1 SISA run.
std::uint64_t sisa_model_seed(std::uint64_t master, std::size_t shard);
std::uint64_t sisa_stage_seed(std::uint64_t master, std::size_t shard, std::size_t stage);
std::size_t sisa_shard_of(const Record& record, std::size_t n_shards);

}  // namespace eul
