#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "eul/model.h"

namespace eul {

// One training example: a token sequence whose label is predictable from its
// context tokens, carrying entity mentions as explicit token spans.
struct Record {
  std::string id;
  std::vector<std::size_t> tokens;  // body coordinates, CLS excluded
  std::size_t label = 0;
  std::set<std::string> entities;
  std::map<std::string, std::vector<std::size_t>> entity_positions;
};

struct DeletionRequest {
  std::string request_id;
  std::set<std::string> entity_keys;
};

// Forget/retain partition of a training corpus under one deletion request.
struct CorpusSplit {
  std::vector<Record> forget;
  std::vector<Record> retain;
  DeletionRequest provenance;
};

struct GenConfig {
  std::uint64_t seed = 1;
  std::size_t n_records = 2000;
  std::size_t n_dev = 200;
  std::size_t n_test = 500;
  std::size_t n_entities = 10;
  std::size_t n_classes = 2;
  double label_noise_rate = 0.0;
  std::size_t body_len = 12;
  std::size_t vocab_size = 1200;

  void validate() const;
};

// Key attached (with no token span) to records whose label was flipped, so a
// mislabeled-data cleanup can be expressed as an ordinary deletion request.
extern const char* const kMislabeledKey;

struct Corpus {
  GenConfig gen;                                 // provenance
  std::vector<Record> train, dev, test;
  std::map<std::string, std::size_t> entity_tokens;  // key -> token id
  std::size_t vocab_size = 0;
  std::size_t n_classes = 0;

  std::vector<std::string> entity_keys() const;
};

// Synthetic entity-tagged corpus. Labels depend only on context tokens;
// entity tokens are label-irrelevant markers. Dev/test mentions are replaced
// by the entity-substitute token.
Corpus generate_corpus(const GenConfig& cfg);

// Partitions the training corpus: every record mentioning a requested entity
// goes to the forget side. Unknown keys raise a lookup error listing the
// known ones.
CorpusSplit resolve_request(const Corpus& corpus, const DeletionRequest& request);

enum class MaskMode { entity_only, random15 };

// entity_only masks exactly the entity token positions (metric use);
// random15 masks each body position with probability 0.15, forcing at least
// one (training use). Records with nothing to mask are counted in `skipped`.
MaskedBatch build_masked_batch(const std::vector<Record>& records, MaskMode mode,
                               std::uint64_t seed);

std::vector<std::vector<std::size_t>> token_rows(const std::vector<Record>& records);
std::vector<std::size_t> labels_of(const std::vector<Record>& records);

// jsonl persistence (one record object per line) plus a vocab sidecar
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);
void save_records_jsonl(const std::vector<Record>& records, const std::string& path);
std::vector<Record> load_records_jsonl(const std::string& path);

}  // namespace eul
