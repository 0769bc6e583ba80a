#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eul/baselines.h"
#include "eul/data.h"
#include "eul/model.h"

namespace eul {

struct MetricsReport {
  std::string strategy;
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double retained_accuracy = 0.0;
  double forgot_accuracy = 0.0;
  double mlm_loss_forgot = 0.0;  // nats, entity-masked
  double update_time_s = 0.0;
  double mia_accuracy = 0.0;
};

// argmax-match fraction; ties break to the lowest class index
double accuracy(const TransformerModel& model, const std::vector<Record>& records);
double accuracy(const SisaModel& ensemble, const std::vector<Record>& records,
                std::size_t n_classes);

// mean masked cross-entropy over the forget set with entity-only masking
double mlm_loss_on_forgot(const TransformerModel& model,
                          const std::vector<Record>& forget_records);
double mlm_loss_on_forgot(const SisaModel& ensemble,
                          const std::vector<Record>& forget_records);

// Mean over non-pad token positions of the final-layer states, one row per
// record. The membership probe and its tests run on these.
Matrix pooled_representations(const TransformerModel& model,
                              const std::vector<Record>& records);

// Logistic probe (gradient descent, 200 steps) on balanced pooled
// representations, 70/30 split; returns held-out accuracy. Throws
// insufficient_data_error when either class has fewer than 10 samples.
double mia_attack(const TransformerModel& model, const CorpusSplit& split,
                  std::uint64_t probe_seed);
double mia_attack(const SisaModel& ensemble, const CorpusSplit& split,
                  std::uint64_t probe_seed);

// Probe on caller-supplied features (row-per-sample, parallel label vector);
// exposed for the separability and shuffled-control tests.
double probe_accuracy(const Matrix& class0, const Matrix& class1, std::uint64_t probe_seed);

MetricsReport full_report(const StrategyResult& result, const CorpusSplit& split,
                          const std::vector<Record>& test_records, std::uint64_t seed);

std::string report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& text);
// aligned-column table over several strategies
std::string render_report_table(const std::vector<MetricsReport>& reports);
// equality on everything except the wall-clock field
bool reports_equal_ignoring_time(const MetricsReport& a, const MetricsReport& b);

}  // namespace eul
