#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finre/corpus.hpp"
#include "finre/promptkit.hpp"

namespace finre {

struct PredictionRecord {
  std::string test_id;
  std::string gold;
  std::string predicted;
  ParseStatus parse_status = ParseStatus::fallback;
  std::string prompt_digest;
  std::vector<std::string> demo_ids;
  std::string raw_completion;
  std::string template_version;
  double latency_ms = 0.0;  // kept out of records.jsonl; see timings.jsonl

  bool operator==(const PredictionRecord&) const = default;
};

/// Deterministic fields only (no latency).
nlohmann::json to_json(const PredictionRecord& r);
PredictionRecord record_from_json(const nlohmann::json& j);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // gold count
};

inline constexpr int kReportSchemaVersion = 1;

struct MetricsReport {
  double micro_f1_excl_norel = 0.0;  // headline
  double micro_f1_incl_norel = 0.0;  // equals accuracy
  double macro_f1 = 0.0;             // over classes with support > 0
  std::map<std::string, ClassMetrics> per_class;
  double fallback_rate = 0.0;
  double error_rate = 0.0;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::string split_digest;
  nlohmann::json config_echo = nlohmann::json::object();
};

/// Digest over the sorted (test_id, gold) pairs of a record set.
std::string split_digest(const std::vector<PredictionRecord>& records);

/// Throws EmptyTestSet on no records. `schema` contributes zero-support rows
/// for relations never seen in gold or predictions.
MetricsReport compute_metrics(const std::vector<PredictionRecord>& records,
                              const RelationSchema& schema);

nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

struct DeltaTable {
  std::map<std::string, double> metrics;                           // b - a
  std::map<std::string, std::map<std::string, double>> per_class;  // class -> field -> b - a
};

/// Throws SplitMismatch when the reports cover different test splits.
DeltaTable compare_runs(const MetricsReport& a, const MetricsReport& b);

nlohmann::json to_json(const DeltaTable& d);
std::string format_delta_table(const DeltaTable& d);

}  // namespace finre
