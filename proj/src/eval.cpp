#include "eul/eval.h"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "eul/rng.h"
#include "eul/training.h"

namespace eul {

namespace {

constexpr std::size_t kEvalBatch = 64;

std::vector<std::size_t> predictions(const TransformerModel& model,
                                     const std::vector<Record>& records) {
  BoundModel bound = bind(model);
  std::vector<std::size_t> preds;
  preds.reserve(records.size());
  for (std::size_t start = 0; start < records.size(); start += kEvalBatch) {
    const std::size_t end = std::min(records.size(), start + kEvalBatch);
    std::vector<std::vector<std::size_t>> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(records[i].tokens);
    EncodedBatch enc = encode_batch(model.cfg, rows);
    const Matrix logits = forward_class(bound, enc, true)->value;
    for (std::size_t s = 0; s < rows.size(); ++s) preds.push_back(argmax_row(logits, s));
  }
  return preds;
}

}  // namespace

double accuracy(const TransformerModel& model, const std::vector<Record>& records) {
  if (records.empty()) throw contract_error("accuracy: no records");
  const auto preds = predictions(model, records);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < records.size(); ++i) correct += (preds[i] == records[i].label);
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double accuracy(const SisaModel& ensemble, const std::vector<Record>& records,
                std::size_t n_classes) {
  if (records.empty()) throw contract_error("accuracy: no records");
  if (ensemble.shards.empty()) throw contract_error("accuracy: empty ensemble");
  std::vector<std::vector<std::size_t>> votes(records.size(),
                                              std::vector<std::size_t>(n_classes, 0));
  for (const auto& shard : ensemble.shards) {
    const auto preds = predictions(shard, records);
    for (std::size_t i = 0; i < records.size(); ++i) ++votes[i][preds[i]];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_classes; ++c) {
      if (votes[i][c] > votes[i][best]) best = c;
    }
    correct += (best == records[i].label);
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double mlm_loss_on_forgot(const TransformerModel& model,
                          const std::vector<Record>& forget_records) {
  if (forget_records.empty()) throw contract_error("mlm_loss_on_forgot: no records");
  MaskedBatch batch = build_masked_batch(forget_records, MaskMode::entity_only, 0);
  if (batch.rows.empty())
    throw contract_error("mlm_loss_on_forgot: no record has a maskable entity");
  BoundModel bound = bind(model);
  double weighted = 0.0;
  std::size_t total_positions = 0;
  for (std::size_t start = 0; start < batch.rows.size(); start += kEvalBatch) {
    const std::size_t end = std::min(batch.rows.size(), start + kEvalBatch);
    MaskedBatch sub;
    for (std::size_t i = start; i < end; ++i) {
      sub.rows.push_back(batch.rows[i]);
      sub.positions.push_back(batch.positions[i]);
      sub.targets.push_back(batch.targets[i]);
    }
    MlmForward mf = forward_mlm(bound, sub, true);
    NodeRef ce = softmax_cross_entropy(mf.logits, mf.targets);
    weighted += scalar_value(ce) * static_cast<double>(mf.targets.size());
    total_positions += mf.targets.size();
  }
  return weighted / static_cast<double>(total_positions);
}

double mlm_loss_on_forgot(const SisaModel& ensemble,
                          const std::vector<Record>& forget_records) {
  if (ensemble.shards.empty()) throw contract_error("mlm_loss_on_forgot: empty ensemble");
  double sum = 0.0;
  for (const auto& shard : ensemble.shards) sum += mlm_loss_on_forgot(shard, forget_records);
  return sum / static_cast<double>(ensemble.shards.size());
}

Matrix pooled_representations(const TransformerModel& model,
                              const std::vector<Record>& records) {
  if (records.empty()) throw contract_error("pooled_representations: no records");
  BoundModel bound = bind(model);
  Matrix out(records.size(), model.cfg.d_model);
  std::size_t row = 0;
  for (std::size_t start = 0; start < records.size(); start += kEvalBatch) {
    const std::size_t end = std::min(records.size(), start + kEvalBatch);
    std::vector<std::vector<std::size_t>> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(records[i].tokens);
    EncodedBatch enc = encode_batch(model.cfg, rows);
    const Matrix states = forward_states(bound, enc, true)->value;
    for (std::size_t s = 0; s < rows.size(); ++s) {
      std::size_t live = 0;
      for (std::size_t p = 0; p < enc.seq_len; ++p) {
        if (enc.is_pad[s * enc.seq_len + p]) continue;
        for (std::size_t c = 0; c < model.cfg.d_model; ++c)
          out.at(row, c) += states.at(s * enc.seq_len + p, c);
        ++live;
      }
      for (std::size_t c = 0; c < model.cfg.d_model; ++c)
        out.at(row, c) /= static_cast<double>(live);
      ++row;
    }
  }
  return out;
}

namespace {

// logistic regression by full-batch gradient descent; features standardized
// with training-split statistics
double logistic_probe(const Matrix& features, const std::vector<std::size_t>& labels,
                      const std::vector<std::size_t>& train_idx,
                      const std::vector<std::size_t>& test_idx) {
  const std::size_t d = features.cols();
  std::vector<double> mean(d, 0.0), inv_std(d, 0.0);
  for (std::size_t i : train_idx) {
    for (std::size_t c = 0; c < d; ++c) mean[c] += features.at(i, c);
  }
  for (std::size_t c = 0; c < d; ++c) mean[c] /= static_cast<double>(train_idx.size());
  for (std::size_t i : train_idx) {
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = features.at(i, c) - mean[c];
      inv_std[c] += dv * dv;
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    const double var = inv_std[c] / static_cast<double>(train_idx.size());
    inv_std[c] = 1.0 / std::sqrt(var + 1e-8);
  }
  auto feature = [&](std::size_t i, std::size_t c) {
    return (features.at(i, c) - mean[c]) * inv_std[c];
  };

  std::vector<double> w(d, 0.0);
  double b = 0.0;
  constexpr std::size_t kSteps = 200;
  constexpr double kLr = 0.3;
  const double inv_n = 1.0 / static_cast<double>(train_idx.size());
  for (std::size_t step = 0; step < kSteps; ++step) {
    std::vector<double> gw(d, 0.0);
    double gb = 0.0;
    for (std::size_t i : train_idx) {
      double z = b;
      for (std::size_t c = 0; c < d; ++c) z += w[c] * feature(i, c);
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double err = p - static_cast<double>(labels[i]);
      for (std::size_t c = 0; c < d; ++c) gw[c] += err * feature(i, c);
      gb += err;
    }
    for (std::size_t c = 0; c < d; ++c) w[c] -= kLr * gw[c] * inv_n;
    b -= kLr * gb * inv_n;
  }

  std::size_t correct = 0;
  for (std::size_t i : test_idx) {
    double z = b;
    for (std::size_t c = 0; c < d; ++c) z += w[c] * feature(i, c);
    const std::size_t pred = z > 0.0 ? 1 : 0;
    correct += (pred == labels[i]);
  }
  return static_cast<double>(correct) / static_cast<double>(test_idx.size());
}

double probe_on_features(const Matrix& class0, const Matrix& class1,
                         std::uint64_t probe_seed) {
  if (class0.rows() < 10 || class1.rows() < 10)
    throw insufficient_data_error("mia probe: need at least 10 samples per class");
  Rng rng(Rng::derive(probe_seed, 0x6d6961ULL));

  // balance by subsampling the larger class
  const std::size_t n = std::min(class0.rows(), class1.rows());
  std::vector<std::size_t> idx0(class0.rows()), idx1(class1.rows());
  for (std::size_t i = 0; i < idx0.size(); ++i) idx0[i] = i;
  for (std::size_t i = 0; i < idx1.size(); ++i) idx1[i] = i;
  rng.shuffle(idx0);
  rng.shuffle(idx1);
  idx0.resize(n);
  idx1.resize(n);

  const std::size_t d = class0.cols();
  Matrix features(2 * n, d);
  std::vector<std::size_t> labels(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      features.at(i, c) = class0.at(idx0[i], c);
      features.at(n + i, c) = class1.at(idx1[i], c);
    }
    labels[i] = 0;
    labels[n + i] = 1;
  }

  // disjoint 70/30 split, per class
  const std::size_t n_train = (n * 7) / 10;
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? train_idx : test_idx).push_back(i);
    (i < n_train ? train_idx : test_idx).push_back(n + i);
  }
  return logistic_probe(features, labels, train_idx, test_idx);
}

}  // namespace

double probe_accuracy(const Matrix& class0, const Matrix& class1, std::uint64_t probe_seed) {
  return probe_on_features(class0, class1, probe_seed);
}

double mia_attack(const TransformerModel& model, const CorpusSplit& split,
                  std::uint64_t probe_seed) {
  if (split.forget.empty() || split.retain.empty())
    throw contract_error("mia_attack: both forget and retain sets must be nonempty");
  const Matrix forget_reps = pooled_representations(model, split.forget);
  const Matrix retain_reps = pooled_representations(model, split.retain);
  return probe_on_features(forget_reps, retain_reps, probe_seed);
}

double mia_attack(const SisaModel& ensemble, const CorpusSplit& split,
                  std::uint64_t probe_seed) {
  if (split.forget.empty() || split.retain.empty())
    throw contract_error("mia_attack: both forget and retain sets must be nonempty");
  if (ensemble.shards.empty()) throw contract_error("mia_attack: empty ensemble");
  Matrix forget_reps(split.forget.size(), ensemble.shards[0].cfg.d_model);
  Matrix retain_reps(split.retain.size(), ensemble.shards[0].cfg.d_model);
  for (const auto& shard : ensemble.shards) {
    forget_reps.add_in_place(pooled_representations(shard, split.forget));
    retain_reps.add_in_place(pooled_representations(shard, split.retain));
  }
  const double inv = 1.0 / static_cast<double>(ensemble.shards.size());
  forget_reps.scale_in_place(inv);
  retain_reps.scale_in_place(inv);
  return probe_on_features(forget_reps, retain_reps, probe_seed);
}

MetricsReport full_report(const StrategyResult& result, const CorpusSplit& split,
                          const std::vector<Record>& test_records, std::uint64_t seed) {
  MetricsReport r;
  r.strategy = result.strategy;
  r.seed = seed;
  r.update_time_s = result.update_time_s;
  if (result.sisa) {
    const std::size_t n_classes = result.sisa->shards.at(0).cfg.n_classes;
    r.test_accuracy = accuracy(*result.sisa, test_records, n_classes);
    r.retained_accuracy = accuracy(*result.sisa, split.retain, n_classes);
    r.forgot_accuracy = accuracy(*result.sisa, split.forget, n_classes);
    r.mlm_loss_forgot = mlm_loss_on_forgot(*result.sisa, split.forget);
    r.mia_accuracy = mia_attack(*result.sisa, split, seed);
  } else if (result.model) {
    r.test_accuracy = accuracy(*result.model, test_records);
    r.retained_accuracy = accuracy(*result.model, split.retain);
    r.forgot_accuracy = accuracy(*result.model, split.forget);
    r.mlm_loss_forgot = mlm_loss_on_forgot(*result.model, split.forget);
    r.mia_accuracy = mia_attack(*result.model, split, seed);
  } else {
    throw contract_error("full_report: strategy result carries no model");
  }
  return r;
}

std::string report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["strategy"] = r.strategy;
  j["seed"] = r.seed;
  j["test_accuracy"] = r.test_accuracy;
  j["retained_accuracy"] = r.retained_accuracy;
  j["forgot_accuracy"] = r.forgot_accuracy;
  j["mlm_loss_forgot"] = r.mlm_loss_forgot;
  j["update_time_s"] = r.update_time_s;
  j["mia_accuracy"] = r.mia_accuracy;
  return j.dump(2);
}

MetricsReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw io_error(std::string("bad metrics report: ") + e.what());
  }
  MetricsReport r;
  r.strategy = j.at("strategy").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.test_accuracy = j.at("test_accuracy").get<double>();
  r.retained_accuracy = j.at("retained_accuracy").get<double>();
  r.forgot_accuracy = j.at("forgot_accuracy").get<double>();
  r.mlm_loss_forgot = j.at("mlm_loss_forgot").get<double>();
  r.update_time_s = j.at("update_time_s").get<double>();
  r.mia_accuracy = j.at("mia_accuracy").get<double>();
  return r;
}

std::string render_report_table(const std::vector<MetricsReport>& reports) {
  char line[256];
  std::string out;
  std::snprintf(line, sizeof(line), "%-12s %9s %12s %10s %11s %8s %10s\n", "strategy",
                "test_acc", "retained_acc", "forgot_acc", "mlm_forgot", "mia",
                "update_s");
  out += line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof(line), "%-12s %9.4f %12.4f %10.4f %11.4f %8.4f %10.3f\n",
                  r.strategy.c_str(), r.test_accuracy, r.retained_accuracy,
                  r.forgot_accuracy, r.mlm_loss_forgot, r.mia_accuracy, r.update_time_s);
    out += line;
  }
  return out;
}

bool reports_equal_ignoring_time(const MetricsReport& a, const MetricsReport& b) {
  return a.strategy == b.strategy && a.seed == b.seed &&
         a.test_accuracy == b.test_accuracy && a.retained_accuracy == b.retained_accuracy &&
         a.forgot_accuracy == b.forgot_accuracy && a.mlm_loss_forgot == b.mlm_loss_forgot &&
         a.mia_accuracy == b.mia_accuracy;
}

}  // namespace eul
