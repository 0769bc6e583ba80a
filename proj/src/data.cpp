#include "eul/data.h"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "eul/rng.h"

namespace eul {

const char* const kMislabeledKey = "mislabeled";

void GenConfig::validate() const {
  if (n_records == 0) throw config_error("gen: n_records must be positive");
  if (n_entities < 2) throw config_error("gen: need at least two entities");
  if (n_classes < 2) throw config_error("gen: need at least two classes");
  if (label_noise_rate < 0.0 || label_noise_rate >= 1.0)
    throw config_error("gen: label_noise_rate must be in [0, 1)");
  if (body_len < 4) throw config_error("gen: body_len too small");
  const std::size_t reserved = tokens::kNumReserved + n_entities;
  if (vocab_size < reserved + 4 * n_classes)
    throw config_error("gen: vocab_size too small for entities and context pools");
}

std::vector<std::string> Corpus::entity_keys() const {
  std::vector<std::string> keys;
  keys.reserve(entity_tokens.size());
  for (const auto& [k, _] : entity_tokens) keys.push_back(k);
  return keys;
}

namespace {

std::string entity_key_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ent%02zu", i);
  return buf;
}

// Context vocabulary layout: after the reserved and entity tokens, the rest
// of the id space splits into per-class signal pools plus a shared noise
// pool (last quarter).
struct ContextPools {
  std::size_t first;       // first context token id
  std::size_t per_class;   // signal pool width
  std::size_t noise_first;
  std::size_t noise_count;
};

ContextPools context_pools(const GenConfig& cfg) {
  ContextPools p;
  p.first = tokens::kNumReserved + cfg.n_entities;
  const std::size_t span = cfg.vocab_size - p.first;
  p.noise_count = span / 4;
  p.per_class = (span - p.noise_count) / cfg.n_classes;
  p.noise_first = p.first + p.per_class * cfg.n_classes;
  p.noise_count = cfg.vocab_size - p.noise_first;
  return p;
}

Record make_record(const GenConfig& cfg, const ContextPools& pools, std::size_t index,
                   const char* prefix, Rng& rng, bool substitute_entities) {
  Record r;
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%06zu", prefix, index);
    r.id = buf;
  }
  r.label = rng.index(cfg.n_classes);
  const std::size_t entity = rng.index(cfg.n_entities);
  const std::size_t entity_token = tokens::kNumReserved + entity;

  r.tokens.resize(cfg.body_len);
  for (std::size_t p = 0; p < cfg.body_len; ++p) {
    if (rng.bernoulli(0.75))
      r.tokens[p] = pools.first + r.label * pools.per_class + rng.index(pools.per_class);
    else
      r.tokens[p] = pools.noise_first + rng.index(pools.noise_count);
  }
  const std::size_t mention_pos = rng.index(cfg.body_len);
  r.tokens[mention_pos] = substitute_entities ? tokens::kEntitySub : entity_token;

  const std::string key = entity_key_name(entity);
  r.entities.insert(key);
  r.entity_positions[key] = {mention_pos};
  return r;
}

}  // namespace

Corpus generate_corpus(const GenConfig& cfg) {
  cfg.validate();
  const ContextPools pools = context_pools(cfg);

  Corpus corpus;
  corpus.gen = cfg;
  corpus.vocab_size = cfg.vocab_size;
  corpus.n_classes = cfg.n_classes;
  for (std::size_t e = 0; e < cfg.n_entities; ++e)
    corpus.entity_tokens[entity_key_name(e)] = tokens::kNumReserved + e;

  Rng train_rng(Rng::derive(cfg.seed, 1));
  corpus.train.reserve(cfg.n_records);
  for (std::size_t i = 0; i < cfg.n_records; ++i)
    corpus.train.push_back(make_record(cfg, pools, i, "r", train_rng, false));

  if (cfg.label_noise_rate > 0.0) {
    Rng noise_rng(Rng::derive(cfg.seed, 2));
    for (auto& r : corpus.train) {
      if (noise_rng.bernoulli(cfg.label_noise_rate)) {
        const std::size_t shift = 1 + noise_rng.index(cfg.n_classes - 1);
        r.label = (r.label + shift) % cfg.n_classes;
        r.entities.insert(kMislabeledKey);
        r.entity_positions[kMislabeledKey] = {};
      }
    }
    corpus.entity_tokens[kMislabeledKey] = tokens::kEntitySub;
  }

  Rng dev_rng(Rng::derive(cfg.seed, 3));
  corpus.dev.reserve(cfg.n_dev);
  for (std::size_t i = 0; i < cfg.n_dev; ++i)
    corpus.dev.push_back(make_record(cfg, pools, i, "d", dev_rng, true));

  Rng test_rng(Rng::derive(cfg.seed, 4));
  corpus.test.reserve(cfg.n_test);
  for (std::size_t i = 0; i < cfg.n_test; ++i)
    corpus.test.push_back(make_record(cfg, pools, i, "t", test_rng, true));

  return corpus;
}

CorpusSplit resolve_request(const Corpus& corpus, const DeletionRequest& request) {
  if (request.entity_keys.empty())
    throw config_error("deletion request '" + request.request_id + "' names no entities");
  for (const auto& key : request.entity_keys) {
    if (corpus.entity_tokens.find(key) == corpus.entity_tokens.end()) {
      std::string known;
      for (const auto& [k, _] : corpus.entity_tokens) {
        if (!known.empty()) known += ", ";
        known += k;
      }
      throw config_error("unknown entity key '" + key + "' (known: " + known + ")");
    }
  }
  CorpusSplit split;
  split.provenance = request;
  for (const auto& r : corpus.train) {
    bool mentioned = false;
    for (const auto& key : request.entity_keys) {
      if (r.entities.count(key)) {
        mentioned = true;
        break;
      }
    }
    (mentioned ? split.forget : split.retain).push_back(r);
  }
  return split;
}

MaskedBatch build_masked_batch(const std::vector<Record>& records, MaskMode mode,
                               std::uint64_t seed) {
  MaskedBatch batch;
  Rng rng(Rng::derive(seed, 0x6d61736bULL));
  for (const auto& r : records) {
    std::vector<std::size_t> positions;
    if (mode == MaskMode::entity_only) {
      for (const auto& [_, pos] : r.entity_positions)
        positions.insert(positions.end(), pos.begin(), pos.end());
      std::sort(positions.begin(), positions.end());
      positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
    } else {
      for (std::size_t p = 0; p < r.tokens.size(); ++p) {
        if (rng.bernoulli(0.15)) positions.push_back(p);
      }
      if (positions.empty() && !r.tokens.empty())
        positions.push_back(rng.index(r.tokens.size()));
    }
    if (positions.empty()) {
      ++batch.skipped;
      continue;
    }
    for (std::size_t p : positions) {
      if (p >= r.tokens.size())
        throw contract_error("record " + r.id + ": entity position out of bounds");
    }
    std::vector<std::size_t> row = r.tokens;
    std::vector<std::size_t> targets;
    targets.reserve(positions.size());
    for (std::size_t p : positions) {
      targets.push_back(row[p]);
      row[p] = tokens::kMask;
    }
    batch.rows.push_back(std::move(row));
    batch.positions.push_back(std::move(positions));
    batch.targets.push_back(std::move(targets));
  }
  return batch;
}

std::vector<std::vector<std::size_t>> token_rows(const std::vector<Record>& records) {
  std::vector<std::vector<std::size_t>> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(r.tokens);
  return rows;
}

std::vector<std::size_t> labels_of(const std::vector<Record>& records) {
  std::vector<std::size_t> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(r.label);
  return labels;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

using nlohmann::json;

json record_to_json(const Record& r) {
  json j;
  j["id"] = r.id;
  j["tokens"] = r.tokens;
  j["label"] = r.label;
  j["entities"] = r.entities;
  json pos = json::object();
  for (const auto& [k, v] : r.entity_positions) pos[k] = v;
  j["entity_positions"] = pos;
  return j;
}

Record record_from_json(const json& j) {
  Record r;
  r.id = j.at("id").get<std::string>();
  r.tokens = j.at("tokens").get<std::vector<std::size_t>>();
  r.label = j.at("label").get<std::size_t>();
  for (const auto& e : j.at("entities")) r.entities.insert(e.get<std::string>());
  for (const auto& [k, v] : j.at("entity_positions").items())
    r.entity_positions[k] = v.get<std::vector<std::size_t>>();
  for (const auto& [k, pos] : r.entity_positions) {
    if (!r.entities.count(k))
      throw io_error("record " + r.id + ": positions for unlisted entity " + k);
    for (std::size_t p : pos) {
      if (p >= r.tokens.size())
        throw io_error("record " + r.id + ": entity position out of bounds");
    }
  }
  return r;
}

}  // namespace

void save_records_jsonl(const std::vector<Record>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + path);
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  if (!out) throw io_error("write failed: " + path);
}

std::vector<Record> load_records_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open: " + path);
  std::vector<Record> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw io_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_records_jsonl(corpus.train, dir + "/train.jsonl");
  save_records_jsonl(corpus.dev, dir + "/dev.jsonl");
  save_records_jsonl(corpus.test, dir + "/test.jsonl");
  json v;
  v["vocab_size"] = corpus.vocab_size;
  v["n_classes"] = corpus.n_classes;
  v["entity_tokens"] = corpus.entity_tokens;
  v["gen"] = {{"seed", corpus.gen.seed},
              {"n_records", corpus.gen.n_records},
              {"n_dev", corpus.gen.n_dev},
              {"n_test", corpus.gen.n_test},
              {"n_entities", corpus.gen.n_entities},
              {"n_classes", corpus.gen.n_classes},
              {"label_noise_rate", corpus.gen.label_noise_rate},
              {"body_len", corpus.gen.body_len},
              {"vocab_size", corpus.gen.vocab_size}};
  std::ofstream out(dir + "/vocab.json", std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + dir + "/vocab.json");
  out << v.dump(2) << '\n';
  if (!out) throw io_error("write failed: " + dir + "/vocab.json");
}

Corpus load_corpus(const std::string& dir) {
  std::ifstream in(dir + "/vocab.json", std::ios::binary);
  if (!in) throw io_error("cannot open: " + dir + "/vocab.json");
  json v;
  try {
    in >> v;
  } catch (const json::exception& e) {
    throw io_error(dir + "/vocab.json: " + e.what());
  }
  Corpus corpus;
  corpus.vocab_size = v.at("vocab_size").get<std::size_t>();
  corpus.n_classes = v.at("n_classes").get<std::size_t>();
  corpus.entity_tokens =
      v.at("entity_tokens").get<std::map<std::string, std::size_t>>();
  const auto& g = v.at("gen");
  corpus.gen.seed = g.at("seed").get<std::uint64_t>();
  corpus.gen.n_records = g.at("n_records").get<std::size_t>();
  corpus.gen.n_dev = g.at("n_dev").get<std::size_t>();
  corpus.gen.n_test = g.at("n_test").get<std::size_t>();
  corpus.gen.n_entities = g.at("n_entities").get<std::size_t>();
  corpus.gen.n_classes = g.at("n_classes").get<std::size_t>();
  corpus.gen.label_noise_rate = g.at("label_noise_rate").get<double>();
  corpus.gen.body_len = g.at("body_len").get<std::size_t>();
  corpus.gen.vocab_size = g.at("vocab_size").get<std::size_t>();
  corpus.train = load_records_jsonl(dir + "/train.jsonl");
  corpus.dev = load_records_jsonl(dir + "/dev.jsonl");
  corpus.test = load_records_jsonl(dir + "/test.jsonl");
  return corpus;
}

}  // namespace eul
