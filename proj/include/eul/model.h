#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "eul/autodiff.h"
#include "eul/matrix.h"

namespace eul {

// Reserved token ids shared by the model and every corpus it consumes.
namespace tokens {
constexpr std::size_t kPad = 0;
constexpr std::size_t kMask = 1;
constexpr std::size_t kCls = 2;
constexpr std::size_t kEntitySub = 3;  // replaces entity mentions in dev/test sets
constexpr std::size_t kNumReserved = 4;
}  // namespace tokens

struct BackboneConfig {
  std::size_t vocab_size = 1200;
  std::size_t max_seq_len = 24;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 128;
  std::size_t n_classes = 2;

  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }
};

// The adapter inserted after a feed-forward block. Residual form:
// y = x + relu(x*w_down + b_down)*w_up + b_up. w_up starts at zero so a
// freshly inserted adapter is an exact identity.
struct UnlearningLayer {
  Matrix w_down;  // d_model x d_bottleneck
  Matrix b_down;  // 1 x d_bottleneck
  Matrix w_up;    // d_bottleneck x d_model
  Matrix b_up;    // 1 x d_model

  static UnlearningLayer init(std::size_t d_model, std::size_t d_bottleneck, Rng& rng);
  std::size_t parameter_count() const;
  std::size_t bottleneck_dim() const { return w_down.cols(); }
  bool bit_equal(const UnlearningLayer& o) const;
};

// A trained adapter per occupied transformer layer, keyed by deletion request.
struct AdapterSet {
  std::string request_id;
  std::vector<std::size_t> layer_indices;
  std::vector<UnlearningLayer> layers;
};

struct LayerWeights {
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln1_g, ln1_b, ln2_g, ln2_b;
  Matrix w_ff1, b_ff1, w_ff2, b_ff2;
};

// Frozen backbone F plus per-layer adapter slots. With every slot empty the
// model computes exactly the original F.
struct TransformerModel {
  BackboneConfig cfg;
  Matrix tok_emb;  // vocab x d_model
  Matrix pos_emb;  // max_seq_len x d_model
  std::vector<LayerWeights> layers;
  Matrix lnf_g, lnf_b;
  Matrix w_cls, b_cls;  // d_model x n_classes
  Matrix w_lm, b_lm;    // d_model x vocab
  std::vector<std::optional<UnlearningLayer>> adapter_slots;

  static TransformerModel init(const BackboneConfig& cfg, std::uint64_t seed);

  std::size_t backbone_parameter_count() const;
  std::size_t adapter_parameter_count() const;
  double adapter_parameter_ratio() const;
  bool any_adapter() const;
};

void insert_adapter(TransformerModel& model, std::size_t layer_index, UnlearningLayer adapter);
void clear_adapters(TransformerModel& model);
std::vector<std::pair<std::size_t, UnlearningLayer>> extract_adapters(const TransformerModel& model);
void insert_adapter_set(TransformerModel& model, const AdapterSet& set);
AdapterSet extract_adapter_set(const TransformerModel& model, const std::string& request_id);

// Visits every frozen tensor (embeddings, attention/ffn weights, norms, heads).
void for_each_backbone_tensor(const TransformerModel& model,
                              const std::function<void(const std::string&, const Matrix&)>& fn);
void for_each_backbone_tensor(TransformerModel& model,
                              const std::function<void(const std::string&, Matrix&)>& fn);
// FNV-1a over the raw bytes of all backbone tensors, for freeze audits.
std::uint64_t backbone_checksum(const TransformerModel& model);

// ---------------------------------------------------------------------------
// forward passes

// Token grid for one batch: every sequence padded to a common length, CLS
// prepended. Body positions map to model positions shifted by one.
struct EncodedBatch {
  std::size_t n_seq = 0;
  std::size_t seq_len = 0;            // includes CLS
  std::vector<std::size_t> ids;       // n_seq * seq_len
  std::vector<std::uint8_t> is_pad;   // same grid
  bool has_pad = false;

  std::size_t id_at(std::size_t s, std::size_t p) const { return ids[s * seq_len + p]; }
};

// Builds the grid from body-coordinate token rows. Overlong bodies are
// truncated to max_seq_len - 1.
EncodedBatch encode_batch(const BackboneConfig& cfg,
                          const std::vector<std::vector<std::size_t>>& body_rows);

// Rows with chosen positions replaced by MASK plus the original ids there.
// Coordinates are body-relative.
struct MaskedBatch {
  std::vector<std::vector<std::size_t>> rows;
  std::vector<std::vector<std::size_t>> positions;
  std::vector<std::vector<std::size_t>> targets;
  std::size_t skipped = 0;  // records dropped for having no maskable position

  std::size_t total_masked() const;
};

// Weight nodes for a model, built once per training run or evaluation pass.
struct BoundAdapter {
  NodeRef w_down, b_down, w_up, b_up;
};
struct BoundLayer {
  NodeRef wq, bq, wk, bk, wv, bv, wo, bo;
  NodeRef ln1_g, ln1_b, ln2_g, ln2_b;
  NodeRef w_ff1, b_ff1, w_ff2, b_ff2;
  std::optional<BoundAdapter> adapter;
};
struct BoundModel {
  BackboneConfig cfg;
  NodeRef tok_emb, pos_emb;
  std::vector<BoundLayer> layers;
  NodeRef lnf_g, lnf_b, w_cls, b_cls, w_lm, b_lm;
  std::vector<NodeRef> trainable;  // parameters in a fixed, documented order
};

struct BindOptions {
  bool train_backbone = false;
  bool train_adapters = false;
};

BoundModel bind(const TransformerModel& model, const BindOptions& opts = {});
// Writes node values back into the model (backbone and/or adapters that were
// bound trainable).
void commit(const BoundModel& bound, TransformerModel& model);

// Per-batch activations the fusion module needs: for each adapter, the hidden
// rows entering it and its post-activation bottleneck rows.
struct ForwardCapture {
  std::vector<Matrix> adapter_input;  // indexed by layer
  std::vector<Matrix> bottleneck;
};

// Final hidden states for the whole grid ((n_seq * seq_len) x d_model).
NodeRef forward_states(const BoundModel& bound, const EncodedBatch& batch,
                       bool use_adapters, ForwardCapture* capture = nullptr);

// CLS-pooled class logits, one row per sequence.
NodeRef forward_class(const BoundModel& bound, const EncodedBatch& batch, bool use_adapters);

// Vocabulary logits at masked positions only, with flattened targets aligned
// to the rows of the returned node. Throws contract_error on a row with no
// masked position.
struct MlmForward {
  NodeRef logits;
  std::vector<std::size_t> targets;
};
MlmForward forward_mlm(const BoundModel& bound, const MaskedBatch& batch, bool use_adapters);

// Convenience wrappers that bind a frozen model per call.
Matrix forward_class_values(const TransformerModel& model,
                            const std::vector<std::vector<std::size_t>>& body_rows,
                            bool use_adapters);

}  // namespace eul
