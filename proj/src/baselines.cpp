#include "eul/baselines.h"

#include <algorithm>
#include <chrono>

#include <json.hpp>

#include "eul/checkpoint.h"
#include "eul/rng.h"

namespace eul {

namespace {

using nlohmann::json;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  const auto elapsed = std::chrono::steady_clock::now() - t0;
  return std::max(1e-9, std::chrono::duration<double>(elapsed).count());
}

std::string train_config_json(const TrainConfig& t, const char* strategy) {
  json j;
  j["strategy"] = strategy;
  j["lr"] = t.lr;
  j["epochs"] = t.epochs;
  j["min_epochs"] = t.min_epochs;
  j["batch_size"] = t.batch_size;
  j["warmup_ratio"] = t.warmup_ratio;
  j["mlm_weight"] = t.mlm_weight;
  j["seed"] = t.seed;
  return j.dump();
}

}  // namespace

StrategyResult retrain(const CorpusSplit& split, const BackboneConfig& bcfg,
                       const TrainConfig& tcfg, std::optional<std::uint64_t> model_init_seed,
                       const EpochObserver& observer) {
  if (split.retain.empty()) throw config_error("retrain: retain set empty");
  StrategyResult res;
  res.strategy = "retrain";
  res.config_snapshot = train_config_json(tcfg, "retrain");
  const auto t0 = std::chrono::steady_clock::now();
  TransformerModel model =
      TransformerModel::init(bcfg, model_init_seed.value_or(tcfg.seed));
  train_backbone(model, split.retain, tcfg, observer);
  res.update_time_s = seconds_since(t0);
  res.model = std::move(model);
  return res;
}

StrategyResult finetune_retain(const TransformerModel& original, const CorpusSplit& split,
                               const TrainConfig& tcfg) {
  if (split.retain.empty()) throw config_error("finetune: retain set empty");
  StrategyResult res;
  res.strategy = "finetune";
  res.config_snapshot = train_config_json(tcfg, "finetune");
  const auto t0 = std::chrono::steady_clock::now();
  TransformerModel model = original;
  if (tcfg.epochs > 0) train_backbone(model, split.retain, tcfg);
  res.update_time_s = seconds_since(t0);
  res.model = std::move(model);
  return res;
}

StrategyResult reverse_gradient(const TransformerModel& original, const CorpusSplit& split,
                                const TrainConfig& tcfg, double reverse_cap) {
  StrategyResult res;
  res.strategy = "revgrad";
  res.config_snapshot = train_config_json(tcfg, "revgrad");
  const auto t0 = std::chrono::steady_clock::now();
  TransformerModel model = original;
  std::vector<Record> all = split.retain;
  all.insert(all.end(), split.forget.begin(), split.forget.end());
  ReverseSpec reverse;
  reverse.cap = reverse_cap;
  for (const auto& r : split.forget) reverse.reverse_ids.insert(r.id);
  if (tcfg.epochs > 0) train_backbone(model, all, tcfg, {}, &reverse);
  res.update_time_s = seconds_since(t0);
  res.model = std::move(model);
  return res;
}

// ---------------------------------------------------------------------------
// SISA-lite

std::uint64_t sisa_model_seed(std::uint64_t master, std::size_t shard) {
  return Rng::derive(master, 0x73697361ULL, shard);
}

std::uint64_t sisa_stage_seed(std::uint64_t master, std::size_t shard, std::size_t stage) {
  return Rng::derive(master, 0x736c696365ULL + shard, stage);
}

std::size_t sisa_shard_of(const Record& record, std::size_t n_shards) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  if (!record.entities.empty()) {
    for (char c : *record.entities.begin()) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  }
  return static_cast<std::size_t>(h % n_shards);
}

namespace {

struct ShardPlan {
  std::vector<std::vector<Record>> slices;
};

std::vector<ShardPlan> plan_shards(const std::vector<Record>& records, std::size_t n_shards,
                                   std::size_t n_slices) {
  std::vector<std::vector<Record>> by_shard(n_shards);
  for (const auto& r : records) by_shard[sisa_shard_of(r, n_shards)].push_back(r);
  std::vector<ShardPlan> plans(n_shards);
  for (std::size_t s = 0; s < n_shards; ++s) {
    plans[s].slices.resize(n_slices);
    const std::size_t n = by_shard[s].size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t slice = std::min(n_slices - 1, i * n_slices / std::max<std::size_t>(1, n));
      plans[s].slices[slice].push_back(by_shard[s][i]);
    }
  }
  return plans;
}

std::size_t stage_epochs(const TrainConfig& t, std::size_t n_slices) {
  return std::max<std::size_t>(1, (t.epochs + n_slices - 1) / n_slices);
}

// trains stages [first_stage, n_slices) from `model`, which must hold the
// checkpoint taken before first_stage; returns per-stage pre-checkpoints
void train_stages(TransformerModel& model, const ShardPlan& plan, std::size_t shard,
                  std::size_t first_stage, const SisaConfig& cfg,
                  std::vector<TransformerModel>* pre_checkpoints) {
  std::vector<Record> cumulative;
  for (std::size_t k = 0; k < first_stage; ++k)
    cumulative.insert(cumulative.end(), plan.slices[k].begin(), plan.slices[k].end());
  for (std::size_t k = first_stage; k < plan.slices.size(); ++k) {
    if (pre_checkpoints) (*pre_checkpoints)[k] = model;
    cumulative.insert(cumulative.end(), plan.slices[k].begin(), plan.slices[k].end());
    if (cumulative.empty()) continue;
    TrainConfig stage_cfg = cfg.train;
    stage_cfg.epochs = stage_epochs(cfg.train, plan.slices.size());
    stage_cfg.min_epochs = std::min(stage_cfg.min_epochs, stage_cfg.epochs);
    stage_cfg.seed = sisa_stage_seed(cfg.train.seed, shard, k);
    train_backbone(model, cumulative, stage_cfg);
  }
}

}  // namespace

SisaDetail sisa_lite(const std::vector<Record>& train_records, const DeletionRequest& request,
                     const std::vector<std::string>& known_entities, const SisaConfig& cfg,
                     const BackboneConfig& bcfg) {
  if (cfg.n_shards == 0 || cfg.n_slices == 0)
    throw config_error("sisa: shard and slice counts must be positive");
  for (const auto& key : request.entity_keys) {
    if (std::find(known_entities.begin(), known_entities.end(), key) == known_entities.end())
      throw config_error("sisa: unknown entity key '" + key + "'");
  }

  const auto plans = plan_shards(train_records, cfg.n_shards, cfg.n_slices);

  SisaDetail detail;
  detail.original_shards.reserve(cfg.n_shards);
  detail.shard_touched.assign(cfg.n_shards, 0);
  detail.rollback_slice.assign(cfg.n_shards, cfg.n_slices);

  // initial sharded training with per-slice checkpoints
  std::vector<std::vector<TransformerModel>> pre_checkpoints(
      cfg.n_shards, std::vector<TransformerModel>(cfg.n_slices));
  const auto t_init = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < cfg.n_shards; ++s) {
    TransformerModel model =
        TransformerModel::init(bcfg, sisa_model_seed(cfg.train.seed, s));
    train_stages(model, plans[s], s, 0, cfg, &pre_checkpoints[s]);
    detail.original_shards.push_back(std::move(model));
  }
  detail.initial_train_time_s = seconds_since(t_init);

  if (!cfg.checkpoint_dir.empty()) {
    for (std::size_t s = 0; s < cfg.n_shards; ++s) {
      for (std::size_t k = 0; k < cfg.n_slices; ++k) {
        save_checkpoint(cfg.checkpoint_dir + "/shard" + std::to_string(s) + "_slice" +
                            std::to_string(k) + ".ckpt",
                        pre_checkpoints[s][k]);
      }
    }
  }

  auto is_forget = [&request](const Record& r) {
    for (const auto& key : request.entity_keys) {
      if (r.entities.count(key)) return true;
    }
    return false;
  };

  // deletion: roll affected shards back and retrain forward without the data
  const auto t_update = std::chrono::steady_clock::now();
  detail.updated_shards = detail.original_shards;
  for (std::size_t s = 0; s < cfg.n_shards; ++s) {
    std::size_t first_affected = cfg.n_slices;
    for (std::size_t k = 0; k < cfg.n_slices && first_affected == cfg.n_slices; ++k) {
      for (const auto& r : plans[s].slices[k]) {
        if (is_forget(r)) {
          first_affected = k;
          break;
        }
      }
    }
    if (first_affected == cfg.n_slices) continue;  // untouched shard, checkpoint reuse
    detail.shard_touched[s] = 1;
    detail.rollback_slice[s] = first_affected;

    ShardPlan filtered = plans[s];
    for (auto& slice : filtered.slices) {
      std::erase_if(slice, is_forget);
    }
    TransformerModel model = pre_checkpoints[s][first_affected];
    train_stages(model, filtered, s, first_affected, cfg, nullptr);
    detail.updated_shards[s] = std::move(model);
  }
  detail.update_time_s = seconds_since(t_update);
  return detail;
}

StrategyResult sisa_strategy(const std::vector<Record>& train_records,
                             const DeletionRequest& request,
                             const std::vector<std::string>& known_entities,
                             const SisaConfig& cfg, const BackboneConfig& bcfg) {
  SisaDetail detail = sisa_lite(train_records, request, known_entities, cfg, bcfg);
  StrategyResult res;
  res.strategy = "sisa";
  res.config_snapshot = train_config_json(cfg.train, "sisa");
  {
    json j = json::parse(res.config_snapshot);
    j["n_shards"] = cfg.n_shards;
    j["n_slices"] = cfg.n_slices;
    res.config_snapshot = j.dump();
  }
  res.update_time_s = detail.update_time_s;
  SisaModel ensemble;
  ensemble.shards = std::move(detail.updated_shards);
  res.sisa = std::move(ensemble);
  return res;
}

}  // namespace eul
