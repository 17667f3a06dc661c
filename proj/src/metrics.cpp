#include "finre/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "finre/digest.hpp"
#include "finre/errors.hpp"

namespace finre {

using nlohmann::json;

json to_json(const PredictionRecord& r) {
  return {{"test_id", r.test_id},
          {"gold", r.gold},
          {"predicted", r.predicted},
          {"parse_status", to_string(r.parse_status)},
          {"prompt_digest", r.prompt_digest},
          {"demo_ids", r.demo_ids},
          {"raw_completion", r.raw_completion},
          {"template_version", r.template_version}};
}

PredictionRecord record_from_json(const json& j) {
  PredictionRecord r;
  r.test_id = j.at("test_id").get<std::string>();
  r.gold = j.at("gold").get<std::string>();
  r.predicted = j.at("predicted").get<std::string>();
  r.parse_status = parse_status_from(j.at("parse_status").get<std::string>());
  r.prompt_digest = j.value("prompt_digest", "");
  r.demo_ids = j.value("demo_ids", std::vector<std::string>{});
  r.raw_completion = j.value("raw_completion", "");
  r.template_version = j.value("template_version", "");
  return r;
}

std::string split_digest(const std::vector<PredictionRecord>& records) {
  std::vector<std::pair<std::string, std::string>> keys;
  keys.reserve(records.size());
  for (const auto& r : records) keys.emplace_back(r.test_id, r.gold);
  std::sort(keys.begin(), keys.end());
  std::string buf;
  for (const auto& [id, gold] : keys) {
    buf += id;
    buf += '\x1f';
    buf += gold;
    buf += '\n';
  }
  return sha256_hex(buf);
}

namespace {

double f1_of(std::size_t tp, std::size_t predicted, std::size_t gold) {
  const std::size_t denom = predicted + gold;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport compute_metrics(const std::vector<PredictionRecord>& records,
                              const RelationSchema& schema) {
  if (records.empty()) throw EmptyTestSet("no prediction records to evaluate");

  struct Counts {
    std::size_t tp = 0, predicted = 0, gold = 0;
  };
  std::map<std::string, Counts> counts;
  for (const auto& rel : schema.all_relations) counts[rel];

  std::size_t correct = 0, tp_rel = 0, pred_rel = 0, gold_rel = 0, fallback = 0, errors = 0;
  for (const auto& r : records) {
    auto& g = counts[r.gold];
    auto& p = counts[r.predicted];
    ++g.gold;
    ++p.predicted;
    const bool hit = r.gold == r.predicted;
    if (hit) {
      ++g.tp;
      ++correct;
    }
    if (r.gold != kNoRelation) ++gold_rel;
    if (r.predicted != kNoRelation) ++pred_rel;
    if (hit && r.gold != kNoRelation) ++tp_rel;
    if (r.parse_status == ParseStatus::fallback) ++fallback;
    if (r.parse_status == ParseStatus::error) ++errors;
  }

  MetricsReport rep;
  rep.total = records.size();
  rep.correct = correct;
  rep.micro_f1_excl_norel = f1_of(tp_rel, pred_rel, gold_rel);
  rep.micro_f1_incl_norel = ratio(correct, records.size());
  rep.fallback_rate = ratio(fallback, records.size());
  rep.error_rate = ratio(errors, records.size());

  double f1_sum = 0.0;
  std::size_t supported = 0;
  for (const auto& [label, c] : counts) {
    ClassMetrics m;
    m.support = c.gold;
    m.precision = ratio(c.tp, c.predicted);
    m.recall = ratio(c.tp, c.gold);
    m.f1 = f1_of(c.tp, c.predicted, c.gold);
    rep.per_class[label] = m;
    if (m.support > 0) {
      f1_sum += m.f1;
      ++supported;
    }
  }
  rep.macro_f1 = supported == 0 ? 0.0 : f1_sum / static_cast<double>(supported);
  rep.split_digest = split_digest(records);
  return rep;
}

json to_json(const MetricsReport& r) {
  json per_class = json::object();
  for (const auto& [label, m] : r.per_class) {
    per_class[label] = {{"precision", m.precision},
                        {"recall", m.recall},
                        {"f1", m.f1},
                        {"support", m.support}};
  }
  return {{"schema_version", kReportSchemaVersion},
          {"headline", "micro_f1_excl_norel"},
          {"micro_f1_excl_norel", r.micro_f1_excl_norel},
          {"micro_f1_incl_norel", r.micro_f1_incl_norel},
          {"macro_f1", r.macro_f1},
          {"per_class", per_class},
          {"fallback_rate", r.fallback_rate},
          {"error_rate", r.error_rate},
          {"total", r.total},
          {"correct", r.correct},
          {"split_digest", r.split_digest},
          {"config", r.config_echo}};
}

MetricsReport report_from_json(const json& j) {
  try {
    if (j.at("schema_version").get<int>() != kReportSchemaVersion) {
      throw DataError("unsupported report schema_version " + j.at("schema_version").dump());
    }
    MetricsReport r;
    r.micro_f1_excl_norel = j.at("micro_f1_excl_norel").get<double>();
    r.micro_f1_incl_norel = j.at("micro_f1_incl_norel").get<double>();
    r.macro_f1 = j.at("macro_f1").get<double>();
    for (const auto& [label, m] : j.at("per_class").items()) {
      r.per_class[label] = {m.at("precision").get<double>(), m.at("recall").get<double>(),
                            m.at("f1").get<double>(), m.at("support").get<std::size_t>()};
    }
    r.fallback_rate = j.at("fallback_rate").get<double>();
    r.error_rate = j.value("error_rate", 0.0);
    r.total = j.at("total").get<std::size_t>();
    r.correct = j.value("correct", std::size_t{0});
    r.split_digest = j.at("split_digest").get<std::string>();
    r.config_echo = j.value("config", json::object());
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

DeltaTable compare_runs(const MetricsReport& a, const MetricsReport& b) {
  if (a.split_digest != b.split_digest) {
    throw SplitMismatch("reports cover different test splits (" + a.split_digest.substr(0, 12) +
                        " vs " + b.split_digest.substr(0, 12) + ")");
  }
  DeltaTable d;
  d.metrics["micro_f1_excl_norel"] = b.micro_f1_excl_norel - a.micro_f1_excl_norel;
  d.metrics["micro_f1_incl_norel"] = b.micro_f1_incl_norel - a.micro_f1_incl_norel;
  d.metrics["macro_f1"] = b.macro_f1 - a.macro_f1;
  d.metrics["fallback_rate"] = b.fallback_rate - a.fallback_rate;
  d.metrics["error_rate"] = b.error_rate - a.error_rate;

  std::set<std::string> labels;
  for (const auto& [l, _] : a.per_class) labels.insert(l);
  for (const auto& [l, _] : b.per_class) labels.insert(l);
  for (const auto& l : labels) {
    const auto ia = a.per_class.find(l);
    const auto ib = b.per_class.find(l);
    const ClassMetrics ma = ia == a.per_class.end() ? ClassMetrics{} : ia->second;
    const ClassMetrics mb = ib == b.per_class.end() ? ClassMetrics{} : ib->second;
    d.per_class[l] = {{"precision", mb.precision - ma.precision},
                      {"recall", mb.recall - ma.recall},
                      {"f1", mb.f1 - ma.f1}};
  }
  return d;
}

json to_json(const DeltaTable& d) { return {{"metrics", d.metrics}, {"per_class", d.per_class}}; }

std::string format_delta_table(const DeltaTable& d) {
  std::ostringstream out;
  char line[160];
  out << "metric                      delta (b - a)\n";
  for (const auto& [name, v] : d.metrics) {
    std::snprintf(line, sizeof line, "%-27s %+.4f\n", name.c_str(), v);
    out << line;
  }
  out << "\nclass                       d_precision  d_recall     d_f1\n";
  for (const auto& [label, m] : d.per_class) {
    std::snprintf(line, sizeof line, "%-27s %+.4f      %+.4f      %+.4f\n", label.c_str(),
                  m.at("precision"), m.at("recall"), m.at("f1"));
    out << line;
  }
  return out.str();
}

}  // namespace finre
