#include "eul/fusion.h"

#include <algorithm>
#include <cstring>

#include "eul/checkpoint.h"

namespace eul {

namespace {

// rows of m with pad rows dropped; fast path when nothing is padded
Matrix live_rows(const Matrix& m, const EncodedBatch& enc) {
  if (!enc.has_pad) return m;
  std::size_t live = 0;
  for (std::uint8_t p : enc.is_pad) live += (p == 0);
  Matrix out(live, m.cols());
  std::size_t r = 0;
  for (std::size_t i = 0; i < enc.is_pad.size(); ++i) {
    if (!enc.is_pad[i]) {
      std::copy_n(m.row(i), m.cols(), out.row(r));
      ++r;
    }
  }
  return out;
}

}  // namespace

GramRecord record_gram(const TransformerModel& model, const std::vector<Record>& forget_records,
                       const std::string& request_id, std::size_t batch_size) {
  if (forget_records.empty()) throw contract_error("record_gram: forget set empty");
  if (!model.any_adapter()) throw contract_error("record_gram: model has no adapters");

  const auto occupied = extract_adapters(model);
  GramRecord rec;
  rec.request_id = request_id;
  rec.d_model = model.cfg.d_model;
  rec.d_bottleneck = occupied.front().second.bottleneck_dim();
  rec.layers.resize(occupied.size());
  for (std::size_t i = 0; i < occupied.size(); ++i) {
    rec.layers[i].layer_index = occupied[i].first;
    rec.layers[i].down.gram = Matrix(rec.d_model, rec.d_model);
    rec.layers[i].up.gram = Matrix(rec.d_bottleneck, rec.d_bottleneck);
  }

  BoundModel bound = bind(model);
  for (std::size_t start = 0; start < forget_records.size(); start += batch_size) {
    const std::size_t end = std::min(forget_records.size(), start + batch_size);
    std::vector<std::vector<std::size_t>> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(forget_records[i].tokens);
    EncodedBatch enc = encode_batch(model.cfg, rows);
    ForwardCapture capture;
    forward_states(bound, enc, true, &capture);
    for (std::size_t i = 0; i < occupied.size(); ++i) {
      const std::size_t li = occupied[i].first;
      const Matrix x_down = live_rows(capture.adapter_input[li], enc);
      const Matrix x_up = live_rows(capture.bottleneck[li], enc);
      rec.layers[i].down.gram.add_in_place(matmul_tn(x_down, x_down));
      rec.layers[i].up.gram.add_in_place(matmul_tn(x_up, x_up));
      if (i == 0) rec.sample_count += x_down.rows();
    }
  }

  for (std::size_t i = 0; i < occupied.size(); ++i) {
    const UnlearningLayer& a = occupied[i].second;
    rec.layers[i].down.cross = matmul(rec.layers[i].down.gram, a.w_down);
    rec.layers[i].up.cross = matmul(rec.layers[i].up.gram, a.w_up);
  }
  return rec;
}

namespace {

double trace_of(const Matrix& m) {
  double t = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) t += m.at(i, i);
  return t;
}

Matrix weighted_bias_mean(const std::vector<const Matrix*>& biases,
                          const std::vector<double>& weights) {
  Matrix out(biases[0]->rows(), biases[0]->cols());
  double total = 0.0;
  for (double w : weights) total += w;
  for (std::size_t i = 0; i < biases.size(); ++i)
    out.add_scaled_in_place(weights[i] / total, *biases[i]);
  return out;
}

}  // namespace

FusedAdapterSet fuse(const std::vector<GramRecord>& records,
                     const std::vector<AdapterSet>& adapters, double ridge_scale) {
  if (records.empty()) throw contract_error("fuse: no records");
  if (records.size() != adapters.size())
    throw contract_error("fuse: record/adapter count mismatch");
  if (ridge_scale < 0.0) throw contract_error("fuse: negative ridge_scale");
  const std::size_t n_layers = records[0].layers.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].request_id != adapters[i].request_id)
      throw contract_error("fuse: request id mismatch at position " + std::to_string(i) +
                           " ('" + records[i].request_id + "' vs '" +
                           adapters[i].request_id + "')");
    if (records[i].layers.size() != n_layers || adapters[i].layers.size() != n_layers)
      throw shape_error("fuse: layer count mismatch across inputs");
    if (records[i].d_model != records[0].d_model ||
        records[i].d_bottleneck != records[0].d_bottleneck)
      throw shape_error("fuse: dimension mismatch across records");
    for (std::size_t l = 0; l < n_layers; ++l) {
      if (records[i].layers[l].layer_index != records[0].layers[l].layer_index ||
          adapters[i].layer_indices[l] != records[0].layers[l].layer_index)
        throw shape_error("fuse: layer index mismatch across inputs");
    }
  }

  FusedAdapterSet fused;
  fused.ridge_scale = ridge_scale;
  fused.merged.request_id = "fused";
  for (const auto& r : records) fused.contributing_request_ids.push_back(r.request_id);

  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::size_t layer_index = records[0].layers[l].layer_index;
    const std::string where = "layer " + std::to_string(layer_index);

    auto solve_sublayer = [&](auto pick_gram, const char* name) {
      const GramSublayer& first = pick_gram(records[0].layers[l]);
      Matrix gram_sum(first.gram.rows(), first.gram.cols());
      Matrix cross_sum(first.cross.rows(), first.cross.cols());
      for (const auto& r : records) {
        gram_sum.add_in_place(pick_gram(r.layers[l]).gram);
        cross_sum.add_in_place(pick_gram(r.layers[l]).cross);
      }
      const double ridge =
          ridge_scale * trace_of(gram_sum) / static_cast<double>(gram_sum.rows());
      fused.applied_ridges.push_back(ridge);
      const std::string what = where + " " + name + " sub-layer";
      return solve_spd(gram_sum, cross_sum, ridge, what.c_str());
    };

    UnlearningLayer merged;
    merged.w_down =
        solve_sublayer([](const GramLayer& g) -> const GramSublayer& { return g.down; },
                       "down");
    merged.w_up = solve_sublayer(
        [](const GramLayer& g) -> const GramSublayer& { return g.up; }, "up");

    std::vector<const Matrix*> b_down, b_up;
    std::vector<double> weights;
    for (std::size_t i = 0; i < adapters.size(); ++i) {
      b_down.push_back(&adapters[i].layers[l].b_down);
      b_up.push_back(&adapters[i].layers[l].b_up);
      weights.push_back(static_cast<double>(records[i].sample_count));
    }
    merged.b_down = weighted_bias_mean(b_down, weights);
    merged.b_up = weighted_bias_mean(b_up, weights);

    fused.merged.layer_indices.push_back(layer_index);
    fused.merged.layers.push_back(std::move(merged));
  }
  return fused;
}

// ---------------------------------------------------------------------------
// gram file io

namespace {

constexpr char kGramMagic[8] = {'E', 'U', 'L', 'G', 'R', 'A', 'M', '1'};
constexpr std::uint32_t kGramVersion = 1;

void append_matrix_le(std::string& buf, const Matrix& m) {
  for (std::size_t i = 0; i < m.size(); ++i) wire::put_f64(buf, m.data()[i]);
}

Matrix read_matrix_le(const std::string& buf, std::size_t& off, std::size_t rows,
                      std::size_t cols) {
  std::vector<double> data(rows * cols);
  for (double& v : data) v = wire::get_f64(buf, off);
  return Matrix::from_rows(rows, cols, std::move(data));
}

}  // namespace

std::size_t gram_file_size(std::size_t n_layers, std::size_t d_model,
                           std::size_t d_bottleneck, std::size_t request_id_len) {
  const std::size_t per_layer =
      d_model * d_model + 2 * d_model * d_bottleneck + d_bottleneck * d_bottleneck;
  return 40 + request_id_len + 4 * n_layers + n_layers * per_layer * sizeof(double);
}

void save_gram(const GramRecord& record, const std::string& path) {
  std::string payload;
  for (const auto& l : record.layers) {
    append_matrix_le(payload, l.down.gram);
    append_matrix_le(payload, l.down.cross);
    append_matrix_le(payload, l.up.gram);
    append_matrix_le(payload, l.up.cross);
  }
  std::string out;
  out.append(kGramMagic, sizeof(kGramMagic));
  wire::put_u32(out, kGramVersion);
  wire::put_u32(out, static_cast<std::uint32_t>(record.layers.size()));
  wire::put_u32(out, static_cast<std::uint32_t>(record.d_model));
  wire::put_u32(out, static_cast<std::uint32_t>(record.d_bottleneck));
  wire::put_u64(out, record.sample_count);
  wire::put_u32(out, wire::crc32(reinterpret_cast<const unsigned char*>(payload.data()),
                                 payload.size()));
  wire::put_u32(out, static_cast<std::uint32_t>(record.request_id.size()));
  out += record.request_id;
  for (const auto& l : record.layers)
    wire::put_u32(out, static_cast<std::uint32_t>(l.layer_index));
  out += payload;
  wire::write_file_atomic(path, out);
}

GramRecord load_gram(const std::string& path) {
  const std::string buf = wire::read_file(path);
  if (buf.size() < 40 || std::memcmp(buf.data(), kGramMagic, sizeof(kGramMagic)) != 0)
    throw io_error("not a gram file: " + path);
  std::size_t off = sizeof(kGramMagic);
  const std::uint32_t version = wire::get_u32(buf, off);
  if (version != kGramVersion)
    throw io_error("unsupported gram file version " + std::to_string(version));
  GramRecord rec;
  const std::uint32_t n_layers = wire::get_u32(buf, off);
  rec.d_model = wire::get_u32(buf, off);
  rec.d_bottleneck = wire::get_u32(buf, off);
  rec.sample_count = wire::get_u64(buf, off);
  const std::uint32_t expected_crc = wire::get_u32(buf, off);
  const std::uint32_t id_len = wire::get_u32(buf, off);
  if (buf.size() != gram_file_size(n_layers, rec.d_model, rec.d_bottleneck, id_len))
    throw io_error("gram file corrupt: size does not match header (" + path + ")");
  rec.request_id = buf.substr(off, id_len);
  off += id_len;
  rec.layers.resize(n_layers);
  for (auto& l : rec.layers) l.layer_index = wire::get_u32(buf, off);
  const std::uint32_t actual_crc =
      wire::crc32(reinterpret_cast<const unsigned char*>(buf.data() + off), buf.size() - off);
  if (actual_crc != expected_crc)
    throw io_error("gram file corrupt: checksum mismatch (" + path + ")");
  for (auto& l : rec.layers) {
    l.down.gram = read_matrix_le(buf, off, rec.d_model, rec.d_model);
    l.down.cross = read_matrix_le(buf, off, rec.d_model, rec.d_bottleneck);
    l.up.gram = read_matrix_le(buf, off, rec.d_bottleneck, rec.d_bottleneck);
    l.up.cross = read_matrix_le(buf, off, rec.d_bottleneck, rec.d_model);
  }
  return rec;
}

}  // namespace eul
