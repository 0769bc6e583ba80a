#include "eul/model.h"

#include <cmath>
#include <cstring>

#include "eul/rng.h"

namespace eul {

void BackboneConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0)
    throw config_error("backbone: zero-sized dimension");
  if (d_model % n_heads != 0)
    throw config_error("backbone: d_model must be divisible by n_heads");
  if (vocab_size <= tokens::kNumReserved)
    throw config_error("backbone: vocab_size must cover the reserved tokens");
  if (max_seq_len < 2) throw config_error("backbone: max_seq_len too small");
  if (n_classes < 2) throw config_error("backbone: need at least two classes");
}

UnlearningLayer UnlearningLayer::init(std::size_t d_model, std::size_t d_bottleneck, Rng& rng) {
  UnlearningLayer a;
  const double std_down = std::sqrt(2.0 / static_cast<double>(d_model + d_bottleneck));
  a.w_down = Matrix::randn(d_model, d_bottleneck, rng, std_down);
  a.b_down = Matrix(1, d_bottleneck);
  a.w_up = Matrix(d_bottleneck, d_model);  // zero: adapter starts as identity
  a.b_up = Matrix(1, d_model);
  return a;
}

std::size_t UnlearningLayer::parameter_count() const {
  return w_down.size() + b_down.size() + w_up.size() + b_up.size();
}

bool UnlearningLayer::bit_equal(const UnlearningLayer& o) const {
  return w_down.bit_equal(o.w_down) && b_down.bit_equal(o.b_down) &&
         w_up.bit_equal(o.w_up) && b_up.bit_equal(o.b_up);
}

namespace {

Matrix xavier(std::size_t rows, std::size_t cols, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(rows + cols));
  return Matrix::randn(rows, cols, rng, std);
}

}  // namespace

TransformerModel TransformerModel::init(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(Rng::derive(seed, 0x6d6f64656cULL));
  TransformerModel m;
  m.cfg = cfg;
  m.tok_emb = Matrix::randn(cfg.vocab_size, cfg.d_model, rng, 0.1);
  m.pos_emb = Matrix::randn(cfg.max_seq_len, cfg.d_model, rng, 0.1);
  m.layers.resize(cfg.n_layers);
  for (auto& l : m.layers) {
    l.wq = xavier(cfg.d_model, cfg.d_model, rng);
    l.bq = Matrix(1, cfg.d_model);
    l.wk = xavier(cfg.d_model, cfg.d_model, rng);
    l.bk = Matrix(1, cfg.d_model);
    l.wv = xavier(cfg.d_model, cfg.d_model, rng);
    l.bv = Matrix(1, cfg.d_model);
    l.wo = xavier(cfg.d_model, cfg.d_model, rng);
    l.bo = Matrix(1, cfg.d_model);
    l.ln1_g = Matrix::full(1, cfg.d_model, 1.0);
    l.ln1_b = Matrix(1, cfg.d_model);
    l.ln2_g = Matrix::full(1, cfg.d_model, 1.0);
    l.ln2_b = Matrix(1, cfg.d_model);
    l.w_ff1 = xavier(cfg.d_model, cfg.d_ff, rng);
    l.b_ff1 = Matrix(1, cfg.d_ff);
    l.w_ff2 = xavier(cfg.d_ff, cfg.d_model, rng);
    l.b_ff2 = Matrix(1, cfg.d_model);
  }
  m.lnf_g = Matrix::full(1, cfg.d_model, 1.0);
  m.lnf_b = Matrix(1, cfg.d_model);
  m.w_cls = xavier(cfg.d_model, cfg.n_classes, rng);
  m.b_cls = Matrix(1, cfg.n_classes);
  m.w_lm = xavier(cfg.d_model, cfg.vocab_size, rng);
  m.b_lm = Matrix(1, cfg.vocab_size);
  m.adapter_slots.assign(cfg.n_layers, std::nullopt);
  return m;
}

std::size_t TransformerModel::backbone_parameter_count() const {
  std::size_t n = 0;
  for_each_backbone_tensor(*this,
                           [&](const std::string&, const Matrix& t) { n += t.size(); });
  return n;
}

std::size_t TransformerModel::adapter_parameter_count() const {
  std::size_t n = 0;
  for (const auto& slot : adapter_slots) {
    if (slot) n += slot->parameter_count();
  }
  return n;
}

double TransformerModel::adapter_parameter_ratio() const {
  return static_cast<double>(adapter_parameter_count()) /
         static_cast<double>(backbone_parameter_count());
}

bool TransformerModel::any_adapter() const {
  for (const auto& slot : adapter_slots) {
    if (slot) return true;
  }
  return false;
}

void insert_adapter(TransformerModel& model, std::size_t layer_index, UnlearningLayer adapter) {
  if (layer_index >= model.cfg.n_layers)
    throw index_error("insert_adapter: layer index out of range");
  if (adapter.w_down.rows() != model.cfg.d_model || adapter.w_up.cols() != model.cfg.d_model)
    throw shape_error("insert_adapter: adapter width does not match d_model");
  model.adapter_slots[layer_index] = std::move(adapter);
}

void clear_adapters(TransformerModel& model) {
  model.adapter_slots.assign(model.cfg.n_layers, std::nullopt);
}

std::vector<std::pair<std::size_t, UnlearningLayer>> extract_adapters(
    const TransformerModel& model) {
  std::vector<std::pair<std::size_t, UnlearningLayer>> out;
  for (std::size_t i = 0; i < model.adapter_slots.size(); ++i) {
    if (model.adapter_slots[i]) out.emplace_back(i, *model.adapter_slots[i]);
  }
  return out;
}

void insert_adapter_set(TransformerModel& model, const AdapterSet& set) {
  if (set.layer_indices.size() != set.layers.size())
    throw contract_error("adapter set: index/layer count mismatch");
  for (std::size_t i = 0; i < set.layers.size(); ++i)
    insert_adapter(model, set.layer_indices[i], set.layers[i]);
}

AdapterSet extract_adapter_set(const TransformerModel& model, const std::string& request_id) {
  AdapterSet set;
  set.request_id = request_id;
  for (auto& [idx, layer] : extract_adapters(model)) {
    set.layer_indices.push_back(idx);
    set.layers.push_back(std::move(layer));
  }
  return set;
}

void for_each_backbone_tensor(const TransformerModel& model,
                              const std::function<void(const std::string&, const Matrix&)>& fn) {
  for_each_backbone_tensor(const_cast<TransformerModel&>(model),
                           [&](const std::string& name, Matrix& t) {
                             fn(name, static_cast<const Matrix&>(t));
                           });
}

void for_each_backbone_tensor(TransformerModel& model,
                              const std::function<void(const std::string&, Matrix&)>& fn) {
  fn("tok_emb", model.tok_emb);
  fn("pos_emb", model.pos_emb);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& l = model.layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    fn(p + "wq", l.wq);
    fn(p + "bq", l.bq);
    fn(p + "wk", l.wk);
    fn(p + "bk", l.bk);
    fn(p + "wv", l.wv);
    fn(p + "bv", l.bv);
    fn(p + "wo", l.wo);
    fn(p + "bo", l.bo);
    fn(p + "ln1_g", l.ln1_g);
    fn(p + "ln1_b", l.ln1_b);
    fn(p + "ln2_g", l.ln2_g);
    fn(p + "ln2_b", l.ln2_b);
    fn(p + "w_ff1", l.w_ff1);
    fn(p + "b_ff1", l.b_ff1);
    fn(p + "w_ff2", l.w_ff2);
    fn(p + "b_ff2", l.b_ff2);
  }
  fn("lnf_g", model.lnf_g);
  fn("lnf_b", model.lnf_b);
  fn("w_cls", model.w_cls);
  fn("b_cls", model.b_cls);
  fn("w_lm", model.w_lm);
  fn("b_lm", model.b_lm);
}

std::uint64_t backbone_checksum(const TransformerModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for_each_backbone_tensor(model, [&](const std::string& name, const Matrix& t) {
    mix(name.data(), name.size());
    mix(t.data(), t.size() * sizeof(double));
  });
  return h;
}

// ---------------------------------------------------------------------------

EncodedBatch encode_batch(const BackboneConfig& cfg,
                          const std::vector<std::vector<std::size_t>>& body_rows) {
  if (body_rows.empty()) throw contract_error("encode_batch: empty batch");
  const std::size_t body_cap = cfg.max_seq_len - 1;
  std::size_t longest = 0;
  for (const auto& r : body_rows) longest = std::max(longest, std::min(r.size(), body_cap));
  if (longest == 0) throw contract_error("encode_batch: all rows empty");

  EncodedBatch b;
  b.n_seq = body_rows.size();
  b.seq_len = longest + 1;
  b.ids.assign(b.n_seq * b.seq_len, tokens::kPad);
  b.is_pad.assign(b.n_seq * b.seq_len, 1);
  for (std::size_t s = 0; s < b.n_seq; ++s) {
    b.ids[s * b.seq_len] = tokens::kCls;
    b.is_pad[s * b.seq_len] = 0;
    const std::size_t n = std::min(body_rows[s].size(), body_cap);
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t id = body_rows[s][p];
      if (id >= cfg.vocab_size) throw index_error("encode_batch: token id out of vocabulary");
      b.ids[s * b.seq_len + 1 + p] = id;
      b.is_pad[s * b.seq_len + 1 + p] = 0;
    }
    if (n < longest) b.has_pad = true;
  }
  return b;
}

std::size_t MaskedBatch::total_masked() const {
  std::size_t n = 0;
  for (const auto& p : positions) n += p.size();
  return n;
}

namespace {

NodeRef bind_tensor(const Matrix& m, bool trainable, std::vector<NodeRef>& trainable_out) {
  NodeRef n = trainable ? parameter(m) : constant(m);
  if (trainable) trainable_out.push_back(n);
  return n;
}

}  // namespace

BoundModel bind(const TransformerModel& model, const BindOptions& opts) {
  BoundModel b;
  b.cfg = model.cfg;
  auto& tr = b.trainable;
  const bool bb = opts.train_backbone;
  b.tok_emb = bind_tensor(model.tok_emb, bb, tr);
  b.pos_emb = bind_tensor(model.pos_emb, bb, tr);
  b.layers.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    auto& o = b.layers[i];
    o.wq = bind_tensor(l.wq, bb, tr);
    o.bq = bind_tensor(l.bq, bb, tr);
    o.wk = bind_tensor(l.wk, bb, tr);
    o.bk = bind_tensor(l.bk, bb, tr);
    o.wv = bind_tensor(l.wv, bb, tr);
    o.bv = bind_tensor(l.bv, bb, tr);
    o.wo = bind_tensor(l.wo, bb, tr);
    o.bo = bind_tensor(l.bo, bb, tr);
    o.ln1_g = bind_tensor(l.ln1_g, bb, tr);
    o.ln1_b = bind_tensor(l.ln1_b, bb, tr);
    o.ln2_g = bind_tensor(l.ln2_g, bb, tr);
    o.ln2_b = bind_tensor(l.ln2_b, bb, tr);
    o.w_ff1 = bind_tensor(l.w_ff1, bb, tr);
    o.b_ff1 = bind_tensor(l.b_ff1, bb, tr);
    o.w_ff2 = bind_tensor(l.w_ff2, bb, tr);
    o.b_ff2 = bind_tensor(l.b_ff2, bb, tr);
    if (model.adapter_slots[i]) {
      const auto& a = *model.adapter_slots[i];
      BoundAdapter ba;
      ba.w_down = bind_tensor(a.w_down, opts.train_adapters, tr);
      ba.b_down = bind_tensor(a.b_down, opts.train_adapters, tr);
      ba.w_up = bind_tensor(a.w_up, opts.train_adapters, tr);
      ba.b_up = bind_tensor(a.b_up, opts.train_adapters, tr);
      o.adapter = std::move(ba);
    }
  }
  b.lnf_g = bind_tensor(model.lnf_g, bb, tr);
  b.lnf_b = bind_tensor(model.lnf_b, bb, tr);
  b.w_cls = bind_tensor(model.w_cls, bb, tr);
  b.b_cls = bind_tensor(model.b_cls, bb, tr);
  b.w_lm = bind_tensor(model.w_lm, bb, tr);
  b.b_lm = bind_tensor(model.b_lm, bb, tr);
  return b;
}

void commit(const BoundModel& bound, TransformerModel& model) {
  auto put = [](const NodeRef& n, Matrix& dst) {
    if (n->requires_grad) dst = n->value;
  };
  put(bound.tok_emb, model.tok_emb);
  put(bound.pos_emb, model.pos_emb);
  for (std::size_t i = 0; i < bound.layers.size(); ++i) {
    const auto& o = bound.layers[i];
    auto& l = model.layers[i];
    put(o.wq, l.wq);
    put(o.bq, l.bq);
    put(o.wk, l.wk);
    put(o.bk, l.bk);
    put(o.wv, l.wv);
    put(o.bv, l.bv);
    put(o.wo, l.wo);
    put(o.bo, l.bo);
    put(o.ln1_g, l.ln1_g);
    put(o.ln1_b, l.ln1_b);
    put(o.ln2_g, l.ln2_g);
    put(o.ln2_b, l.ln2_b);
    put(o.w_ff1, l.w_ff1);
    put(o.b_ff1, l.b_ff1);
    put(o.w_ff2, l.w_ff2);
    put(o.b_ff2, l.b_ff2);
    if (o.adapter && model.adapter_slots[i]) {
      auto& a = *model.adapter_slots[i];
      put(o.adapter->w_down, a.w_down);
      put(o.adapter->b_down, a.b_down);
      put(o.adapter->w_up, a.w_up);
      put(o.adapter->b_up, a.b_up);
    }
  }
  put(bound.lnf_g, model.lnf_g);
  put(bound.lnf_b, model.lnf_b);
  put(bound.w_cls, model.w_cls);
  put(bound.b_cls, model.b_cls);
  put(bound.w_lm, model.w_lm);
  put(bound.b_lm, model.b_lm);
}

namespace {

// additive key mask per sequence, 1 x seq_len with -1e9 on pad columns
Matrix pad_bias_row(const EncodedBatch& batch, std::size_t s) {
  Matrix m(1, batch.seq_len);
  for (std::size_t p = 0; p < batch.seq_len; ++p) {
    if (batch.is_pad[s * batch.seq_len + p]) m.at(0, p) = -1e9;
  }
  return m;
}

}  // namespace

NodeRef forward_states(const BoundModel& bound, const EncodedBatch& batch,
                       bool use_adapters, ForwardCapture* capture) {
  const auto& cfg = bound.cfg;
  const std::size_t L = batch.seq_len;
  if (L > cfg.max_seq_len) throw contract_error("forward: sequence longer than max_seq_len");
  if (capture) {
    capture->adapter_input.assign(cfg.n_layers, Matrix());
    capture->bottleneck.assign(cfg.n_layers, Matrix());
  }

  std::vector<std::size_t> pos_ids(batch.n_seq * L);
  for (std::size_t s = 0; s < batch.n_seq; ++s)
    for (std::size_t p = 0; p < L; ++p) pos_ids[s * L + p] = p;

  NodeRef x = add(embedding_rows(bound.tok_emb, batch.ids),
                  embedding_rows(bound.pos_emb, pos_ids));

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));

  for (std::size_t li = 0; li < cfg.n_layers; ++li) {
    const auto& l = bound.layers[li];

    // attention block (pre-norm)
    NodeRef a = layer_norm(x, l.ln1_g, l.ln1_b);
    NodeRef q = add_row_broadcast(matmul(a, l.wq), l.bq);
    NodeRef k = add_row_broadcast(matmul(a, l.wk), l.bk);
    NodeRef v = add_row_broadcast(matmul(a, l.wv), l.bv);

    std::vector<NodeRef> seq_ctx;
    seq_ctx.reserve(batch.n_seq);
    for (std::size_t s = 0; s < batch.n_seq; ++s) {
      std::vector<std::size_t> rows(L);
      for (std::size_t p = 0; p < L; ++p) rows[p] = s * L + p;
      NodeRef qs = take_rows(q, rows);
      NodeRef ks = take_rows(k, rows);
      NodeRef vs = take_rows(v, rows);
      Matrix bias;
      if (batch.has_pad) {
        const Matrix row = pad_bias_row(batch, s);
        bias = Matrix(L, L);
        for (std::size_t i = 0; i < L; ++i)
          std::memcpy(bias.row(i), row.data(), L * sizeof(double));
      }
      std::vector<NodeRef> head_ctx;
      head_ctx.reserve(cfg.n_heads);
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const std::size_t c0 = h * cfg.head_dim(), c1 = c0 + cfg.head_dim();
        NodeRef qh = slice_cols(qs, c0, c1);
        NodeRef kh = slice_cols(ks, c0, c1);
        NodeRef vh = slice_cols(vs, c0, c1);
        NodeRef scores = scale(matmul_nt(qh, kh), inv_sqrt_dh);
        if (batch.has_pad) scores = add_const(scores, bias);
        NodeRef attn = softmax_rows(scores);
        head_ctx.push_back(matmul(attn, vh));
      }
      seq_ctx.push_back(concat_cols(head_ctx));
    }
    NodeRef ctx = concat_rows(seq_ctx);
    NodeRef attn_out = add_row_broadcast(matmul(ctx, l.wo), l.bo);
    x = add(x, attn_out);

    // feed-forward block (pre-norm), adapter applied to the ffn output
    NodeRef f_in = layer_norm(x, l.ln2_g, l.ln2_b);
    NodeRef h1 = relu(add_row_broadcast(matmul(f_in, l.w_ff1), l.b_ff1));
    NodeRef f = add_row_broadcast(matmul(h1, l.w_ff2), l.b_ff2);
    if (use_adapters && l.adapter) {
      const auto& ad = *l.adapter;
      if (capture) capture->adapter_input[li] = f->value;
      NodeRef z = relu(add_row_broadcast(matmul(f, ad.w_down), ad.b_down));
      if (capture) capture->bottleneck[li] = z->value;
      NodeRef delta = add_row_broadcast(matmul(z, ad.w_up), ad.b_up);
      f = add(f, delta);
    }
    x = add(x, f);
  }
  return layer_norm(x, bound.lnf_g, bound.lnf_b);
}

NodeRef forward_class(const BoundModel& bound, const EncodedBatch& batch, bool use_adapters) {
  NodeRef states = forward_states(bound, batch, use_adapters);
  std::vector<std::size_t> cls_rows(batch.n_seq);
  for (std::size_t s = 0; s < batch.n_seq; ++s) cls_rows[s] = s * batch.seq_len;
  NodeRef pooled = take_rows(states, cls_rows);
  return add_row_broadcast(matmul(pooled, bound.w_cls), bound.b_cls);
}

MlmForward forward_mlm(const BoundModel& bound, const MaskedBatch& batch, bool use_adapters) {
  if (batch.rows.empty()) throw contract_error("forward_mlm: empty batch");
  const std::size_t body_cap = bound.cfg.max_seq_len - 1;
  EncodedBatch enc = encode_batch(bound.cfg, batch.rows);
  std::vector<std::size_t> flat_rows;
  std::vector<std::size_t> targets;
  for (std::size_t s = 0; s < batch.rows.size(); ++s) {
    std::size_t in_range = 0;
    for (std::size_t i = 0; i < batch.positions[s].size(); ++i) {
      const std::size_t body_pos = batch.positions[s][i];
      if (body_pos >= body_cap) continue;  // truncated away
      flat_rows.push_back(s * enc.seq_len + 1 + body_pos);
      targets.push_back(batch.targets[s][i]);
      ++in_range;
    }
    if (in_range == 0)
      throw contract_error("forward_mlm: row " + std::to_string(s) +
                           " has no masked position");
  }
  NodeRef states = forward_states(bound, enc, use_adapters);
  NodeRef picked = take_rows(states, std::move(flat_rows));
  NodeRef logits = add_row_broadcast(matmul(picked, bound.w_lm), bound.b_lm);
  return {logits, std::move(targets)};
}

Matrix forward_class_values(const TransformerModel& model,
                            const std::vector<std::vector<std::size_t>>& body_rows,
                            bool use_adapters) {
  BoundModel b = bind(model);
  EncodedBatch enc = encode_batch(model.cfg, body_rows);
  return forward_class(b, enc, use_adapters)->value;
}

}  // namespace eul
