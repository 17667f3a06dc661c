#include <doctest.h>

#include <random>

#include "finre/errors.hpp"
#include "finre/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace finre;
using namespace finre::testing;

namespace {

std::vector<PredictionRecord> records(const std::vector<std::string>& gold,
                                      const std::vector<std::string>& pred) {
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    PredictionRecord r;
    r.test_id = "t" + std::to_string(i);
    r.gold = gold[i];
    r.predicted = pred[i];
    r.parse_status = ParseStatus::exact;
    out.push_back(r);
  }
  return out;
}

RelationSchema schema_of(std::set<std::string> labels) {
  RelationSchema s;
  s.entries[{"A", "B"}] = labels;
  s.all_relations = labels;
  return s;
}

}  // namespace

TEST_CASE("5-instance hand case") {
  const auto rs = records({"a", "a", "b", "no_relation", "b"}, {"a", "b", "b", "no_relation", "a"});
  const auto m = compute_metrics(rs, schema_of({"a", "b", "no_relation"}));
  CHECK(m.micro_f1_excl_norel == 0.5);
  CHECK(m.macro_f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(m.micro_f1_incl_norel == 0.6);
  CHECK(m.per_class.at("a").f1 == 0.5);
  CHECK(m.per_class.at("b").precision == 0.5);
  CHECK(m.per_class.at("no_relation").f1 == 1.0);
  CHECK(m.per_class.at("a").support == 2);
  CHECK(m.total == 5);
  CHECK(m.correct == 3);

  const auto o = count_metrics({"a", "a", "b", "no_relation", "b"}, {"a", "b", "b", "no_relation", "a"});
  CHECK(o.micro_excl == m.micro_f1_excl_norel);
  CHECK(o.macro == m.macro_f1);
  CHECK(o.micro_incl == m.micro_f1_incl_norel);
}

TEST_CASE("trivial cases") {
  const auto all = compute_metrics(records({"a", "b", "no_relation"}, {"a", "b", "no_relation"}),
                                   schema_of({"a", "b", "no_relation"}));
  CHECK(all.micro_f1_excl_norel == 1.0);
  CHECK(all.micro_f1_incl_norel == 1.0);
  CHECK(all.macro_f1 == 1.0);

  const auto one = compute_metrics(records({"a"}, {"a"}), schema_of({"a", "no_relation"}));
  CHECK(one.per_class.at("a").support == 1);
  CHECK(one.per_class.at("a").f1 == 1.0);
  CHECK(one.per_class.at("no_relation").support == 0);
  CHECK(one.macro_f1 == 1.0);

  CHECK_THROWS_AS(compute_metrics({}, schema_of({"a"})), EmptyTestSet);
}

TEST_CASE("rates and serialization") {
  auto rs = records({"a", "b", "a", "b"}, {"a", "no_relation", "no_relation", "b"});
  rs[1].parse_status = ParseStatus::fallback;
  rs[2].parse_status = ParseStatus::error;
  const auto m = compute_metrics(rs, schema_of({"a", "b", "no_relation"}));
  CHECK(m.fallback_rate == 0.25);
  CHECK(m.error_rate == 0.25);

  const auto j = to_json(m);
  CHECK(j.at("schema_version") == kReportSchemaVersion);
  const auto back = report_from_json(j);
  CHECK(back.micro_f1_excl_norel == m.micro_f1_excl_norel);
  CHECK(back.per_class.at("b").recall == m.per_class.at("b").recall);
  CHECK(back.split_digest == m.split_digest);

  const auto rj = to_json(rs[2]);
  CHECK_FALSE(rj.contains("latency_ms"));
  CHECK(record_from_json(rj) == rs[2]);
}

TEST_CASE("fuzz: 500 random prediction sets agree with the counting oracle exactly") {
  std::mt19937_64 rng(2024);
  const std::vector<std::string> labels = {"a", "b", "c", "d", "no_relation"};
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    const std::size_t k = 2 + rng() % 4;
    std::vector<std::string> gold, pred;
    for (std::size_t i = 0; i < n; ++i) {
      gold.push_back(labels[rng() % k]);
      pred.push_back(rng() % 3 == 0 ? gold.back() : labels[rng() % k]);
    }
    const auto m = compute_metrics(records(gold, pred), schema_of({labels.begin(), labels.end()}));
    const auto o = count_metrics(gold, pred);
    REQUIRE(m.micro_f1_excl_norel == o.micro_excl);
    REQUIRE(m.micro_f1_incl_norel == o.micro_incl);
    REQUIRE(m.macro_f1 == o.macro);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += gold[i] == pred[i];
    REQUIRE(m.micro_f1_incl_norel == static_cast<double>(correct) / static_cast<double>(n));
  }
}

TEST_CASE("compare_runs") {
  const auto s = schema_of({"a", "b", "no_relation"});
  const auto ra = compute_metrics(records({"a", "b", "no_relation", "a"}, {"a", "a", "no_relation", "b"}), s);
  const auto rb = compute_metrics(records({"a", "b", "no_relation", "a"}, {"a", "b", "no_relation", "a"}), s);

  const auto self = compare_runs(ra, ra);
  for (const auto& [k, v] : self.metrics) CHECK_MESSAGE(v == 0.0, k);
  for (const auto& [cls, fields] : self.per_class) {
    for (const auto& [f, v] : fields) CHECK(v == 0.0);
  }

  // ra: a tp1 pred2 gold2 -> 0.5; b tp0 -> 0; micro-excl 2*1/(3+3)=1/3; incl 0.5
  const auto d = compare_runs(ra, rb);
  CHECK(d.metrics.at("micro_f1_excl_norel") == doctest::Approx(1.0 - 1.0 / 3.0));
  CHECK(d.metrics.at("micro_f1_incl_norel") == doctest::Approx(0.5));
  CHECK(d.per_class.at("a").at("f1") == doctest::Approx(0.5));
  CHECK(d.per_class.at("b").at("f1") == doctest::Approx(1.0));
  CHECK_FALSE(format_delta_table(d).empty());

  const auto rc = compute_metrics(records({"a", "b"}, {"a", "b"}), s);
  CHECK_THROWS_AS(compare_runs(ra, rc), SplitMismatch);
}
