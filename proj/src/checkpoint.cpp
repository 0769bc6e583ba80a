#include "eul/checkpoint.h"

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace eul {

namespace wire {

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(buf, bits);
}

namespace {
void need(const std::string& buf, std::size_t off, std::size_t n) {
  if (off + n > buf.size()) throw io_error("truncated file");
}
}  // namespace

std::uint32_t get_u32(const std::string& buf, std::size_t& off) {
  need(buf, off, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
  off += 4;
  return v;
}

std::uint64_t get_u64(const std::string& buf, std::size_t& off) {
  need(buf, off, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
  off += 8;
  return v;
}

double get_f64(const std::string& buf, std::size_t& off) {
  const std::uint64_t bits = get_u64(buf, off);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::uint32_t crc32(const unsigned char* data, std::size_t n) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xffffffffu;
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open for writing: " + tmp);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw io_error("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw io_error("rename failed: " + path + " (" + ec.message() + ")");
  }
}

}  // namespace wire

// ---------------------------------------------------------------------------
// container layout:
//   magic "EULCKPT1" | version u32 | header_len u64 | header json | payload
// The header carries the backbone config and a shape table (name, rows, cols,
// payload offset) for every tensor; payload is raw little-endian f64 runs plus
// a trailing crc32 recorded in the header.

namespace {

constexpr char kMagic[8] = {'E', 'U', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

using nlohmann::json;

void append_matrix(std::string& payload, const Matrix& m) {
  static_assert(std::endian::native == std::endian::little,
                "payload fast path assumes a little-endian host");
  const char* p = reinterpret_cast<const char*>(m.data());
  payload.append(p, m.size() * sizeof(double));
}

Matrix read_matrix(const std::string& payload, std::size_t& off, std::size_t rows,
                   std::size_t cols) {
  const std::size_t bytes = rows * cols * sizeof(double);
  if (off + bytes > payload.size()) throw io_error("checkpoint payload truncated");
  std::vector<double> data(rows * cols);
  std::memcpy(data.data(), payload.data() + off, bytes);
  off += bytes;
  return Matrix::from_rows(rows, cols, std::move(data));
}

json shape_entry(const std::string& name, const Matrix& m) {
  return json{{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}};
}

}  // namespace

const AdapterSet* Checkpoint::find_adapter_set(const std::string& request_id) const {
  for (const auto& s : adapter_sets) {
    if (s.request_id == request_id) return &s;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const TransformerModel& model,
                     const std::vector<AdapterSet>& adapter_sets) {
  json shapes = json::array();
  std::string payload;
  for_each_backbone_tensor(model, [&](const std::string& name, const Matrix& t) {
    shapes.push_back(shape_entry(name, t));
    append_matrix(payload, t);
  });

  json sets = json::array();
  for (const auto& s : adapter_sets) {
    json set;
    set["request_id"] = s.request_id;
    json layers = json::array();
    for (std::size_t i = 0; i < s.layers.size(); ++i) {
      const auto& a = s.layers[i];
      json layer;
      layer["layer_index"] = s.layer_indices[i];
      layer["shapes"] = json::array({shape_entry("w_down", a.w_down),
                                     shape_entry("b_down", a.b_down),
                                     shape_entry("w_up", a.w_up),
                                     shape_entry("b_up", a.b_up)});
      layers.push_back(layer);
      append_matrix(payload, a.w_down);
      append_matrix(payload, a.b_down);
      append_matrix(payload, a.w_up);
      append_matrix(payload, a.b_up);
    }
    set["layers"] = layers;
    sets.push_back(set);
  }

  json header;
  header["config"] = {{"vocab_size", model.cfg.vocab_size},
                      {"max_seq_len", model.cfg.max_seq_len},
                      {"d_model", model.cfg.d_model},
                      {"n_heads", model.cfg.n_heads},
                      {"n_layers", model.cfg.n_layers},
                      {"d_ff", model.cfg.d_ff},
                      {"n_classes", model.cfg.n_classes}};
  header["backbone_shapes"] = shapes;
  header["adapter_sets"] = sets;
  header["payload_crc32"] =
      wire::crc32(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());
  const std::string header_str = header.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  wire::put_u32(out, kVersion);
  wire::put_u64(out, header_str.size());
  out += header_str;
  out += payload;
  wire::write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = wire::read_file(path);
  if (buf.size() < sizeof(kMagic) + 12 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw io_error("not a checkpoint file: " + path);
  std::size_t off = sizeof(kMagic);
  const std::uint32_t version = wire::get_u32(buf, off);
  if (version != kVersion)
    throw io_error("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t header_len = wire::get_u64(buf, off);
  if (off + header_len > buf.size()) throw io_error("checkpoint header truncated");
  json header;
  try {
    header = json::parse(buf.substr(off, header_len));
  } catch (const json::exception& e) {
    throw io_error(std::string("checkpoint header corrupt: ") + e.what());
  }
  off += header_len;

  Checkpoint ckpt;
  const auto& c = header.at("config");
  ckpt.cfg.vocab_size = c.at("vocab_size").get<std::size_t>();
  ckpt.cfg.max_seq_len = c.at("max_seq_len").get<std::size_t>();
  ckpt.cfg.d_model = c.at("d_model").get<std::size_t>();
  ckpt.cfg.n_heads = c.at("n_heads").get<std::size_t>();
  ckpt.cfg.n_layers = c.at("n_layers").get<std::size_t>();
  ckpt.cfg.d_ff = c.at("d_ff").get<std::size_t>();
  ckpt.cfg.n_classes = c.at("n_classes").get<std::size_t>();
  ckpt.cfg.validate();

  // validate the shape table and total payload size before reading weights
  const std::string payload = buf.substr(off);
  std::size_t expected = 0;
  for (const auto& s : header.at("backbone_shapes"))
    expected += s.at("rows").get<std::size_t>() * s.at("cols").get<std::size_t>();
  for (const auto& set : header.at("adapter_sets")) {
    for (const auto& layer : set.at("layers")) {
      for (const auto& s : layer.at("shapes"))
        expected += s.at("rows").get<std::size_t>() * s.at("cols").get<std::size_t>();
    }
  }
  if (payload.size() != expected * sizeof(double))
    throw io_error("checkpoint payload size mismatch");
  const std::uint32_t crc =
      wire::crc32(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());
  if (crc != header.at("payload_crc32").get<std::uint32_t>())
    throw io_error("checkpoint payload checksum mismatch");

  ckpt.model.cfg = ckpt.cfg;
  ckpt.model.layers.resize(ckpt.cfg.n_layers);
  ckpt.model.adapter_slots.assign(ckpt.cfg.n_layers, std::nullopt);
  std::size_t poff = 0;
  std::size_t shape_idx = 0;
  const auto& shapes = header.at("backbone_shapes");
  for_each_backbone_tensor(ckpt.model, [&](const std::string& name, Matrix& t) {
    const auto& s = shapes.at(shape_idx++);
    if (s.at("name").get<std::string>() != name)
      throw io_error("checkpoint shape table order mismatch at " + name);
    t = read_matrix(payload, poff, s.at("rows").get<std::size_t>(),
                    s.at("cols").get<std::size_t>());
  });

  for (const auto& set : header.at("adapter_sets")) {
    AdapterSet as;
    as.request_id = set.at("request_id").get<std::string>();
    for (const auto& layer : set.at("layers")) {
      as.layer_indices.push_back(layer.at("layer_index").get<std::size_t>());
      const auto& ls = layer.at("shapes");
      UnlearningLayer a;
      a.w_down = read_matrix(payload, poff, ls.at(0).at("rows").get<std::size_t>(),
                             ls.at(0).at("cols").get<std::size_t>());
      a.b_down = read_matrix(payload, poff, ls.at(1).at("rows").get<std::size_t>(),
                             ls.at(1).at("cols").get<std::size_t>());
      a.w_up = read_matrix(payload, poff, ls.at(2).at("rows").get<std::size_t>(),
                           ls.at(2).at("cols").get<std::size_t>());
      a.b_up = read_matrix(payload, poff, ls.at(3).at("rows").get<std::size_t>(),
                           ls.at(3).at("cols").get<std::size_t>());
      as.layers.push_back(std::move(a));
    }
    ckpt.adapter_sets.push_back(std::move(as));
  }
  return ckpt;
}

}  // namespace eul
