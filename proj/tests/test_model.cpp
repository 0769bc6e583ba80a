#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "eul/checkpoint.h"
#include "eul/data.h"
#include "eul/model.h"
#include "eul/rng.h"
#include "eul/training.h"
#include "helpers.h"

using namespace eul;

namespace {

BackboneConfig tiny_config() {
  BackboneConfig cfg;
  cfg.vocab_size = 40;
  cfg.max_seq_len = 10;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.d_ff = 32;
  cfg.n_classes = 2;
  return cfg;
}

std::vector<std::vector<std::size_t>> tiny_rows(std::size_t n, std::size_t len,
                                                std::size_t vocab, Rng& rng) {
  std::vector<std::vector<std::size_t>> rows(n);
  for (auto& r : rows) {
    r.resize(len);
    for (auto& t : r) t = tokens::kNumReserved + rng.index(vocab - tokens::kNumReserved);
  }
  return rows;
}

}  // namespace

TEST_CASE("config validation") {
  BackboneConfig cfg = tiny_config();
  cfg.d_model = 15;  // not divisible by n_heads
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = tiny_config();
  cfg.vocab_size = 3;
  CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("empty adapter slots: adapters flag has no effect, bitwise") {
  Rng rng(1);
  TransformerModel model = TransformerModel::init(tiny_config(), 42);
  auto rows = tiny_rows(4, 7, model.cfg.vocab_size, rng);
  Matrix with = forward_class_values(model, rows, true);
  Matrix without = forward_class_values(model, rows, false);
  CHECK(with.bit_equal(without));
}

TEST_CASE("zero-initialized adapter is an exact identity") {
  Rng rng(2);
  TransformerModel model = TransformerModel::init(tiny_config(), 43);
  Rng arng(7);
  for (std::size_t i = 0; i < model.cfg.n_layers; ++i)
    insert_adapter(model, i, UnlearningLayer::init(model.cfg.d_model, 4, arng));
  auto rows = tiny_rows(5, 8, model.cfg.vocab_size, rng);
  Matrix student = forward_class_values(model, rows, true);
  Matrix teacher = forward_class_values(model, rows, false);
  CHECK(student.bit_equal(teacher));
}

TEST_CASE("adapter insert/extract round-trips bitwise") {
  TransformerModel model = TransformerModel::init(tiny_config(), 44);
  Rng arng(8);
  UnlearningLayer a = UnlearningLayer::init(model.cfg.d_model, 4, arng);
  a.w_up = Matrix::randn(4, model.cfg.d_model, arng, 0.3);  // make it non-trivial
  insert_adapter(model, 1, a);
  auto extracted = extract_adapters(model);
  REQUIRE(extracted.size() == 1);
  CHECK(extracted[0].first == 1);
  CHECK(extracted[0].second.bit_equal(a));
}

TEST_CASE("extract on empty slots returns an empty list") {
  TransformerModel model = TransformerModel::init(tiny_config(), 45);
  CHECK(extract_adapters(model).empty());
}

TEST_CASE("insert_adapter rejects out-of-range layers") {
  TransformerModel model = TransformerModel::init(tiny_config(), 46);
  Rng arng(9);
  CHECK_THROWS_AS(
      insert_adapter(model, model.cfg.n_layers, UnlearningLayer::init(16, 4, arng)),
      index_error);
}

TEST_CASE("default-size model keeps adapters at or under 1% of the backbone") {
  BackboneConfig cfg;  // defaults: the desk-scale model
  TransformerModel model = TransformerModel::init(cfg, 47);
  Rng arng(10);
  for (std::size_t i = 0; i < cfg.n_layers; ++i)
    insert_adapter(model, i, UnlearningLayer::init(cfg.d_model, 8, arng));
  CHECK(model.adapter_parameter_ratio() <= 0.01);
  CHECK(model.adapter_parameter_count() ==
        cfg.n_layers * (cfg.d_model * 8 + 8 + 8 * cfg.d_model + cfg.d_model));
}

TEST_CASE("same seed and config give bit-identical initialization") {
  TransformerModel a = TransformerModel::init(tiny_config(), 48);
  TransformerModel b = TransformerModel::init(tiny_config(), 48);
  CHECK(backbone_checksum(a) == backbone_checksum(b));
  CHECK(a.tok_emb.bit_equal(b.tok_emb));
}

TEST_CASE("encode_batch truncates overlong bodies instead of failing") {
  BackboneConfig cfg = tiny_config();  // max_seq_len 10 -> body cap 9
  std::vector<std::vector<std::size_t>> rows = {
      std::vector<std::size_t>(20, tokens::kNumReserved)};
  EncodedBatch enc = encode_batch(cfg, rows);
  CHECK(enc.seq_len == cfg.max_seq_len);
  CHECK(enc.id_at(0, 0) == tokens::kCls);
}

TEST_CASE("encode_batch rejects out-of-vocabulary ids") {
  BackboneConfig cfg = tiny_config();
  std::vector<std::vector<std::size_t>> rows = {{cfg.vocab_size}};
  CHECK_THROWS_AS(encode_batch(cfg, rows), index_error);
}

TEST_CASE("padded batches mask attention and keep ragged rows usable") {
  Rng rng(3);
  TransformerModel model = TransformerModel::init(tiny_config(), 49);
  // a short row evaluated alone must equal the same row inside a ragged batch
  auto rows = tiny_rows(3, 8, model.cfg.vocab_size, rng);
  std::vector<std::size_t> short_row(rows[0].begin(), rows[0].begin() + 4);
  Matrix alone = forward_class_values(model, {short_row}, false);
  Matrix batched = forward_class_values(model, {short_row, rows[1], rows[2]}, false);
  for (std::size_t c = 0; c < alone.cols(); ++c)
    CHECK(batched.at(0, c) == doctest::Approx(alone.at(0, c)).epsilon(1e-9));
}

TEST_CASE("forward_mlm rejects rows with no masked positions") {
  TransformerModel model = TransformerModel::init(tiny_config(), 50);
  BoundModel bound = bind(model);
  MaskedBatch batch;
  batch.rows = {{5, 6, 7}};
  batch.positions = {{}};
  batch.targets = {{}};
  CHECK_THROWS_AS(forward_mlm(bound, batch, false), contract_error);
}

TEST_CASE("untrained model mlm loss is near ln(vocab)") {
  Rng rng(4);
  TransformerModel model = TransformerModel::init(tiny_config(), 51);
  BoundModel bound = bind(model);
  MaskedBatch batch;
  for (int i = 0; i < 8; ++i) {
    auto row = tiny_rows(1, 8, model.cfg.vocab_size, rng)[0];
    batch.targets.push_back({row[2], row[5]});
    batch.positions.push_back({2, 5});
    row[2] = tokens::kMask;
    row[5] = tokens::kMask;
    batch.rows.push_back(row);
  }
  MlmForward mf = forward_mlm(bound, batch, false);
  const double loss = scalar_value(softmax_cross_entropy(mf.logits, mf.targets));
  const double uniform = std::log(static_cast<double>(model.cfg.vocab_size));
  CHECK(loss > uniform * 0.8);
  CHECK(loss < uniform * 1.2);
}

TEST_CASE("gradients through the full model match finite differences") {
  // every parameter of a small two-layer model, class and mlm paths
  BackboneConfig cfg;
  cfg.vocab_size = 12;
  cfg.max_seq_len = 6;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.d_ff = 12;
  cfg.n_classes = 2;
  TransformerModel model = TransformerModel::init(cfg, 52);
  BoundModel bound = bind(model, {.train_backbone = true, .train_adapters = false});

  std::vector<std::vector<std::size_t>> rows = {{4, 5, 6, 7}, {8, 9, 10, 11}};
  std::vector<std::size_t> labels = {0, 1};
  EncodedBatch enc = encode_batch(cfg, rows);

  auto res = eul::testing::fd_check(bound.trainable, [&] {
    return softmax_cross_entropy(forward_class(bound, enc, false), labels);
  });
  CHECK(res.max_rel < 1e-4);
  CHECK(res.checked > 1000);
}

TEST_CASE("checkpoint round-trips the model and adapter sets bitwise") {
  const std::string path = std::filesystem::temp_directory_path() / "eul_test_model.ckpt";
  TransformerModel model = TransformerModel::init(tiny_config(), 53);
  Rng arng(11);
  AdapterSet set;
  set.request_id = "req-a";
  for (std::size_t i = 0; i < model.cfg.n_layers; ++i) {
    set.layer_indices.push_back(i);
    UnlearningLayer a = UnlearningLayer::init(model.cfg.d_model, 4, arng);
    a.w_up = Matrix::randn(4, model.cfg.d_model, arng, 0.2);
    set.layers.push_back(std::move(a));
  }
  save_checkpoint(path, model, {set});
  Checkpoint loaded = load_checkpoint(path);
  CHECK(backbone_checksum(loaded.model) == backbone_checksum(model));
  REQUIRE(loaded.adapter_sets.size() == 1);
  CHECK(loaded.adapter_sets[0].request_id == "req-a");
  for (std::size_t i = 0; i < set.layers.size(); ++i)
    CHECK(loaded.adapter_sets[0].layers[i].bit_equal(set.layers[i]));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader validates version and payload before reading weights") {
  const std::string path = std::filesystem::temp_directory_path() / "eul_test_bad.ckpt";
  TransformerModel model = TransformerModel::init(tiny_config(), 54);
  save_checkpoint(path, model);
  std::string bytes = wire::read_file(path);

  SUBCASE("wrong version") {
    bytes[8] = 9;  // version field
    std::ofstream(path, std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(path), io_error);
  }
  SUBCASE("truncated payload") {
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 64);
    CHECK_THROWS_AS(load_checkpoint(path), io_error);
  }
  SUBCASE("corrupted payload byte") {
    bytes[bytes.size() - 5] ^= 0x40;
    std::ofstream(path, std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(path), io_error);
  }
  std::filesystem::remove(path);
}

TEST_CASE("toy model trains to high accuracy on separable data") {
  GenConfig gen;
  gen.seed = 5;
  gen.n_records = 200;
  gen.n_dev = 20;
  gen.n_test = 50;
  gen.n_entities = 4;
  gen.body_len = 8;
  gen.vocab_size = 120;
  Corpus corpus = generate_corpus(gen);

  BackboneConfig cfg;
  cfg.vocab_size = gen.vocab_size;
  cfg.max_seq_len = 12;
  cfg.d_model = 32;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.d_ff = 64;
  TransformerModel model = TransformerModel::init(cfg, 55);

  TrainConfig tcfg;
  tcfg.epochs = 20;
  tcfg.min_epochs = 4;
  tcfg.seed = 55;
  TrainStats stats = train_backbone(model, corpus.train, tcfg);
  CHECK(stats.final_train_accuracy >= 0.95);
}
