#include <doctest.h>

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>
#include <thread>

#include "finre/errors.hpp"
#include "finre/http_transport.hpp"
#include "finre/mock_providers.hpp"
#include "finre/parallel.hpp"
#include "finre/providers.hpp"
#include "test_util.hpp"

using namespace finre;
using namespace finre::testing;
using nlohmann::json;

namespace {

ProviderConfig mock_cfg(std::string model = "mock") {
  ProviderConfig c;
  c.model_name = std::move(model);
  c.retry.base_delay = std::chrono::milliseconds(1);
  return c;
}

// Counts calls and wraps another transport.
class Counting : public Transport {
 public:
  explicit Counting(std::shared_ptr<Transport> inner) : inner_(std::move(inner)) {}
  json post(Capability cap, const json& body) override {
    ++calls;
    return inner_->post(cap, body);
  }
  bool is_mock() const override { return true; }
  std::atomic<int> calls{0};

 private:
  std::shared_ptr<Transport> inner_;
};

// Fails the first `failures` calls with the given exception type.
template <typename E>
class Flaky : public Transport {
 public:
  explicit Flaky(int failures) : failures_(failures) {}
  json post(Capability, const json&) override {
    if (calls++ < failures_) throw E("simulated failure");
    return {{"text", "ok"}};
  }
  std::atomic<int> calls{0};

 private:
  int failures_;
};

// Sleeps a little per call and records peak concurrency.
class Slow : public Transport {
 public:
  json post(Capability, const json& body) override {
    const int now = ++in_flight;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --in_flight;
    return {{"text", body["prompt"]}};
  }
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
};

// Textbook full-matrix Levenshtein, kept apart from the library's version.
std::size_t levenshtein_oracle(const std::string& a, const std::string& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
  }
  return d[a.size()][b.size()];
}

}  // namespace

TEST_CASE("mock embeddings: cache, determinism, unit norm") {
  auto counting = std::make_shared<Counting>(std::make_shared<HashEmbeddingBackend>());
  ProviderClient client(mock_cfg("mock-hash"), counting);

  const auto a = client.embed_batch({"Acme bought Beta"});
  const auto b = client.embed_batch({"Acme bought Beta"});
  CHECK(a[0].values == b[0].values);
  CHECK(counting->calls == 1);
  CHECK(client.upstream_calls() == 1);
  CHECK(client.cache_hits() == 1);
  CHECK(a[0].dim() == 256);
  CHECK(a[0].model_tag == "mock-hash");

  for (const char* t : {"x", "a much longer text with [E1]markers[/E1]", "ünïcode"}) {
    const auto v = client.embed_batch({t})[0].values;
    double n = 0.0;
    for (double x : v) n += x * x;
    CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-9);
  }
}

TEST_CASE("mock embeddings: 1000 distinct texts give pairwise-distinct vectors") {
  HashEmbeddingBackend backend;
  std::set<std::vector<double>> seen;
  double max_cos = -1.0;
  std::vector<std::vector<double>> vs;
  for (int i = 0; i < 1000; ++i) {
    vs.push_back(backend.embed("text number " + std::to_string(i)));
    seen.insert(vs.back());
  }
  CHECK(seen.size() == 1000);
  for (std::size_t i = 0; i < vs.size(); ++i) {
    for (std::size_t j = i + 1; j < vs.size(); ++j) {
      double c = 0.0;
      for (std::size_t d = 0; d < vs[i].size(); ++d) c += vs[i][d] * vs[j][d];
      max_cos = std::max(max_cos, c);
    }
  }
  CHECK(max_cos < 0.5);
}

TEST_CASE("embed_batch: order, dedup, batching, invalid input") {
  auto counting = std::make_shared<Counting>(std::make_shared<HashEmbeddingBackend>(8));
  auto cfg = mock_cfg();
  cfg.embed_batch_size = 2;
  ProviderClient client(cfg, counting);
  const auto out = client.embed_batch({"a", "b", "a", "c", "d"});
  REQUIRE(out.size() == 5);
  CHECK(out[0].values == out[2].values);
  CHECK(out[0].values != out[1].values);
  CHECK(counting->calls == 2);  // 4 unique texts in chunks of 2
  HashEmbeddingBackend direct(8);
  CHECK(out[3].values == direct.embed("c"));

  CHECK_THROWS_AS(client.embed_batch({}), InvalidArgument);
  CHECK_THROWS_AS(client.embed_batch({"ok", "  "}), InvalidArgument);
}

TEST_CASE("persistent cache survives a new client") {
  TempDir tmp;
  auto cfg = mock_cfg();
  cfg.cache_dir = tmp.path();
  {
    ProviderClient c(cfg, std::make_shared<HashEmbeddingBackend>(16));
    c.embed_batch({"hello", "world"});
  }
  auto counting = std::make_shared<Counting>(std::make_shared<HashEmbeddingBackend>(16));
  ProviderClient c2(cfg, counting);
  const auto v = c2.embed_batch({"world", "hello"});
  CHECK(counting->calls == 0);
  CHECK(v[1].values == HashEmbeddingBackend(16).embed("hello"));

  // Another model tag never shares entries.
  auto cfg2 = cfg;
  cfg2.model_name = "other";
  auto counting2 = std::make_shared<Counting>(std::make_shared<HashEmbeddingBackend>(16));
  ProviderClient c3(cfg2, counting2);
  c3.embed_batch({"hello"});
  CHECK(counting2->calls == 1);
}

TEST_CASE("scripted completion mock") {
  auto counting = std::make_shared<Counting>(std::make_shared<ScriptedCompletionBackend>(
      std::map<std::string, std::string>{{"P1", "no relation"}}, "default text"));
  ProviderClient client(mock_cfg(), counting);
  CHECK(client.complete("P1") == "no relation");
  CHECK(client.complete("P2") == "default text");
  CHECK(client.complete("P1") == "no relation");
  CHECK(counting->calls == 2);

  // Nonzero temperature is never cached.
  CompletionOptions warm;
  warm.temperature = 0.7;
  client.complete("P1", warm);
  client.complete("P1", warm);
  CHECK(counting->calls == 4);
}

TEST_CASE("completion response shapes and refusals") {
  struct Canned : Transport {
    json reply;
    json post(Capability, const json&) override { return reply; }
  };
  auto t = std::make_shared<Canned>();
  ProviderClient client(mock_cfg(), t);
  t->reply = {{"choices", {{{"message", {{"content", "founder_of"}}}}}}};
  CHECK(client.complete("a") == "founder_of");
  t->reply = {{"choices", {{{"text", "employee_of"}}}}};
  CHECK(client.complete("b") == "employee_of");
  t->reply = {{"choices", {{{"text", ""}, {"finish_reason", "content_filter"}}}}};
  CHECK_THROWS_AS(client.complete("c"), ProviderRefusal);
  t->reply = {{"refusal", "no"}};
  CHECK_THROWS_AS(client.complete("d"), ProviderRefusal);
  t->reply = json::object();
  CHECK_THROWS_AS(client.complete("e"), ProviderError);
}

TEST_CASE("edit-distance scoring mock") {
  // Frozen from the oracle: 9 (one deletion plus eight substitutions).
  CHECK(levenshtein_oracle("no_relation", "founder_of") == 9);
  CHECK(edit_distance("no_relation", "founder_of") == 9);
  CHECK(edit_distance("", "abc") == 3);
  CHECK(edit_distance("kitten", "sitting") == levenshtein_oracle("kitten", "sitting"));

  ProviderClient scorer(mock_cfg(), std::make_shared<EditDistanceScoringBackend>());
  const std::string prefix = "[E1]Acme[/E1] founded by [E2]Bo[/E2]\nRelation: founder_of\n\nX\nRelation:";
  const auto same = scorer.score_output(prefix, "founder_of");
  CHECK(same.total_logprob == 0.0);
  const auto other = scorer.score_output(prefix, "no_relation");
  CHECK(other.total_logprob == -9.0);
  CHECK(other.token_count == 1);

  ProviderClient wrong(mock_cfg(), std::make_shared<HashEmbeddingBackend>());
  CHECK_THROWS_AS(wrong.score_output("p", "t"), CapabilityUnsupported);
}

TEST_CASE("retry: transport errors are retried, refusals are not") {
  SUBCASE("recovers within max_attempts") {
    auto t = std::make_shared<Flaky<TransportError>>(2);
    ProviderClient client(mock_cfg(), t);
    CHECK(client.complete("p") == "ok");
    CHECK(t->calls == 3);
  }
  SUBCASE("gives up after max_attempts") {
    auto t = std::make_shared<Flaky<TransportError>>(5);
    ProviderClient client(mock_cfg(), t);
    CHECK_THROWS_AS(client.complete("p"), TransportError);
    CHECK(t->calls == 3);
  }
  SUBCASE("refusal fails immediately") {
    auto t = std::make_shared<Flaky<ProviderRefusal>>(1);
    ProviderClient client(mock_cfg(), t);
    CHECK_THROWS_AS(client.complete("p"), ProviderRefusal);
    CHECK(t->calls == 1);
  }
}

TEST_CASE("concurrency: in-flight requests never exceed max_parallel") {
  auto slow = std::make_shared<Slow>();
  auto cfg = mock_cfg();
  cfg.max_parallel = 3;
  ProviderClient client(cfg, slow);
  parallel_for(100, 16, [&](std::size_t i) { client.complete("p" + std::to_string(i)); });
  CHECK(slow->peak.load() <= 3);
  CHECK(slow->peak.load() >= 2);
  CHECK(client.upstream_calls() == 100);
}

TEST_CASE("config validation") {
  auto cfg = mock_cfg();
  cfg.max_parallel = 0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = mock_cfg();
  cfg.retry.max_attempts = 0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("http transport against a local server") {
  httplib::Server server;
  std::atomic<int> hits_503{0};
  std::string seen_auth;
  server.Post("/v1/embeddings", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    json data = json::array();
    for (std::size_t i = 0; i < body["input"].size(); ++i) {
      data.push_back({{"embedding", {1.0, static_cast<double>(i)}}});
    }
    res.set_content(json{{"data", data}}.dump(), "application/json");
  });
  server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    if (hits_503++ == 0) {
      res.status = 503;
      return;
    }
    res.set_content(json{{"text", "founder_of"}}.dump(), "application/json");
  });
  server.Post("/v1/score", [](const httplib::Request&, httplib::Response& res) {
    res.status = 501;
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("FINRE_TEST_KEY", "sekret", 1);
  ProviderConfig cfg = mock_cfg("m");
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/";
  cfg.api_key_env = "FINRE_TEST_KEY";
  cfg.timeout_seconds = 5;
  ProviderClient client(cfg, std::make_shared<HttpTransport>(cfg));

  const auto v = client.embed_batch({"a", "b"});
  CHECK(v[1].values == std::vector<double>{1.0, 1.0});
  CHECK(client.complete("hi") == "founder_of");
  CHECK(hits_503 == 2);
  CHECK(seen_auth == "Bearer sekret");
  CHECK_THROWS_AS(client.score_output("p", "t"), CapabilityUnsupported);

  server.stop();
  th.join();

  // Nothing listening: a retryable transport failure.
  ProviderClient dead(cfg, std::make_shared<HttpTransport>(cfg));
  CHECK_THROWS_AS(dead.complete("again"), TransportError);
}

TEST_CASE("live provider (opt-in)") {
  const char* url = std::getenv("FINRE_LIVE_BASE_URL");
  const char* key = std::getenv("FINRE_LIVE_API_KEY");
  if (!url || !key) {
    MESSAGE("skipped: set FINRE_LIVE_BASE_URL and FINRE_LIVE_API_KEY to run");
    return;
  }
  ProviderConfig cfg;
  cfg.base_url = url;
  cfg.model_name = std::getenv("FINRE_LIVE_EMBED_MODEL") ? std::getenv("FINRE_LIVE_EMBED_MODEL")
                                                          : "text-embedding-ada-002";
  cfg.api_key_env = "FINRE_LIVE_API_KEY";
  ProviderClient client(cfg, std::make_shared<HttpTransport>(cfg));
  const auto v = client.embed_batch({"Acme acquired Beta."});
  CHECK(v[0].dim() > 0);
}
