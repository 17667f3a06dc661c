#include <doctest.h>

#include <fstream>

#include "finre/config.hpp"
#include "finre/errors.hpp"
#include "test_util.hpp"

using namespace finre;
using namespace finre::testing;

TEST_CASE("defaults parse and match the typed defaults") {
  const auto cfg = parse_config("", "/base");
  CHECK(cfg.seed == 7);
  CHECK(cfg.retriever == RetrieverKind::knn);
  CHECK(cfg.k_retrieved == 5);
  CHECK(cfg.r_per_class == 4);
  CHECK(cfg.epr_candidates == 50);
  CHECK(cfg.epr_positives == 3);
  CHECK(cfg.epr_negatives == 10);
  CHECK(cfg.adapter.lr == 0.05);
  CHECK(cfg.adapter.batch_size == 32);
  CHECK(cfg.adapter.epochs == 30);
  CHECK(cfg.completion.max_parallel == 4);
  CHECK(cfg.completion.retry.max_attempts == 3);
  CHECK(cfg.prompt.order == DemoOrder::random_first);
  CHECK(cfg.digest.size() == 64);
  CHECK_FALSE(cfg.echo["run"].contains("output_dir"));
}

TEST_CASE("values, overrides and path resolution") {
  const std::string text = R"(
seed = 3
[data]
train_path = "d/train.jsonl"
test_path = "/abs/test.jsonl"
[retriever]
kind = "epr"
[prompt]
r_per_class = 2
)";
  const auto cfg = parse_config(text, "/cfgdir", {"retriever.k_retrieved=3", "epr.lr=0.5",
                                                  "providers.completion.model=gpt-x",
                                                  "prompt.order=retrieved_first"});
  CHECK(cfg.seed == 3);
  CHECK(cfg.train_path == std::filesystem::path("/cfgdir/d/train.jsonl"));
  CHECK(cfg.test_path == std::filesystem::path("/abs/test.jsonl"));
  CHECK(cfg.retriever == RetrieverKind::epr);
  CHECK(cfg.k_retrieved == 3);
  CHECK(cfg.r_per_class == 2);
  CHECK(cfg.adapter.lr == 0.5);
  CHECK(cfg.completion.model_name == "gpt-x");
  CHECK(cfg.prompt.order == DemoOrder::retrieved_first);
  CHECK(cfg.echo["retriever"]["k_retrieved"] == 3);
}

TEST_CASE("digest covers the merged result and ignores the output directory") {
  const auto a = parse_config("", "/x");
  const auto b = parse_config("", "/y", {"run.output_dir=elsewhere"});
  const auto c = parse_config("[retriever]\nk_retrieved = 5\n", "/x");
  const auto d = parse_config("", "/x", {"retriever.k_retrieved=6"});
  CHECK(a.digest == b.digest);
  CHECK(a.digest == c.digest);
  CHECK(a.digest != d.digest);
  CHECK(b.output_dir == std::filesystem::path("elsewhere"));
  CHECK(b.completion.cache_dir == std::filesystem::path("elsewhere/cache"));

  auto e = a;
  e.echo["cli"] = {{"mock_providers", true}};
  refresh_digest(e);
  CHECK(e.digest != a.digest);
  CHECK(section_digest(a.echo, {"data"}) == section_digest(d.echo, {"data"}));
  CHECK(section_digest(a.echo, {"retriever"}) != section_digest(d.echo, {"retriever"}));
}

TEST_CASE("rejections") {
  CHECK_THROWS_AS(parse_config("api_key = \"sk-123\"\n", "/"), ConfigError);
  CHECK_THROWS_AS(parse_config("[providers.completion]\napi_key = \"sk\"\n", "/"), ConfigError);
  CHECK_THROWS_AS(parse_config("[providers.completion]\nAPI_KEY = \"sk\"\n", "/"), ConfigError);
  CHECK_THROWS_AS(parse_config("[retriever]\nk = 5\n", "/"), ConfigError);
  CHECK_THROWS_AS(parse_config("[retriever]\nk_retrieved = \"five\"\n", "/"), ConfigError);
  CHECK_THROWS_AS(parse_config("[retriever]\nkind = \"bm25\"\n", "/"), ConfigError);
  CHECK_THROWS_AS(parse_config("this is not toml", "/"), ConfigError);
  CHECK_THROWS_AS(parse_config("[epr]\nlr = -1.0\n", "/"), ConfigError);
  CHECK_THROWS_AS(parse_config("[retriever]\nk_retrieved = 0\n[prompt]\nr_per_class = 0\n", "/"),
                  ConfigError);
  CHECK_NOTHROW(parse_config(
      "[retriever]\nk_retrieved = 0\n[prompt]\nr_per_class = 0\nallow_zero_shot = true\n", "/"));

  CHECK_THROWS_AS(parse_config("", "/", {"retriever.nope=1"}), UsageError);
  CHECK_THROWS_AS(parse_config("", "/", {"justakey"}), UsageError);
  CHECK_THROWS_AS(parse_config("", "/", {"providers.completion.api_key=x"}), UsageError);
  CHECK_THROWS_AS(parse_config("", "/", {"retriever.k_retrieved=many"}), UsageError);
  CHECK_THROWS_AS(load_config("/definitely/not/here.toml"), UsageError);
}

TEST_CASE("load_config resolves relative to the file") {
  TempDir tmp;
  {
    std::ofstream out(tmp / "c.toml");
    out << "[data]\ntrain_path = \"t.jsonl\"\n";
  }
  const auto cfg = load_config(tmp / "c.toml");
  CHECK(cfg.train_path == tmp / "t.jsonl");
}
