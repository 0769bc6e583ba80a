#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eul/data.h"
#include "eul/model.h"

namespace eul {

// Sufficient statistics for merging one trained adapter set: per adapter
// sub-layer, the inner-product matrix of its input rows (gram = sum x x^T
// over forget-set hidden vectors) and gram * W for that sub-layer's weight.
// No raw tokens or per-record vectors are retained.
struct GramSublayer {
  Matrix gram;   // d_in x d_in
  Matrix cross;  // d_in x d_out, equals gram * W at record time
};

struct GramLayer {
  std::size_t layer_index = 0;
  GramSublayer down;  // inputs: hidden rows entering the adapter (d_model wide)
  GramSublayer up;    // inputs: the adapter's post-activation bottleneck rows
};

struct GramRecord {
  std::string request_id;
  std::size_t d_model = 0;
  std::size_t d_bottleneck = 0;
  std::uint64_t sample_count = 0;  // token vectors accumulated per sub-layer
  std::vector<GramLayer> layers;
};

// Runs the adapted model over the forget records (token-level, adapters
// active) and accumulates the Gram statistics in 64-bit floats.
GramRecord record_gram(const TransformerModel& model_with_adapters,
                       const std::vector<Record>& forget_records,
                       const std::string& request_id, std::size_t batch_size = 32);

struct FusedAdapterSet {
  AdapterSet merged;
  std::vector<std::string> contributing_request_ids;
  double ridge_scale = 0.0;
  std::vector<double> applied_ridges;  // down, up per layer in order
};

// Closed-form merge: per sub-layer solve (sum gram_i + ridge I) W = sum
// cross_i with ridge = ridge_scale * trace(sum gram_i) / d_in. Biases are
// sample-count-weighted means. records[i] and adapters[i] must carry the
// same request_id.
FusedAdapterSet fuse(const std::vector<GramRecord>& records,
                     const std::vector<AdapterSet>& adapters, double ridge_scale = 1e-6);

// Fixed little-endian binary layout (all integers LE, floats IEEE-754 f64):
//   offset 0   magic "EULGRAM1" (8 bytes)
//   offset 8   version u32 (= 1)
//   offset 12  n_layers u32
//   offset 16  d_model u32
//   offset 20  d_bottleneck u32
//   offset 24  sample_count u64
//   offset 32  payload crc32 u32
//   offset 36  request_id length u32, then that many bytes
//   then n_layers * u32 layer indices
//   then per layer: gram_down (d*d), cross_down (d*db), gram_up (db*db),
//        cross_up (db*d) as f64 runs — this is the payload the crc covers
// File size is fully determined by the header, so a record for two forget
// rows and one for twenty thousand are byte-for-byte the same size.
void save_gram(const GramRecord& record, const std::string& path);
GramRecord load_gram(const std::string& path);

// Exact size a well-formed file must have; the structural audit in the test
// suite checks serialized records against it.
std::size_t gram_file_size(std::size_t n_layers, std::size_t d_model,
                           std::size_t d_bottleneck, std::size_t request_id_len);

}  // namespace eul
