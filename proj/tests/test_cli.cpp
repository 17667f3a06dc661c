#include <doctest.h>

#include <fstream>

#include "cli_util.hpp"
#include "test_util.hpp"

using namespace finre::testing;

namespace {

std::string cfg(const char* name) { return (data_dir() / name).string(); }

}  // namespace

TEST_CASE("ingest prints counts") {
  TempDir out;
  const auto r = run_cli("ingest --config " + cfg("fixture6.toml") + " --out " + out.path().string());
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("instances: 6") != std::string::npos);
  CHECK(r.output.find("relations: 3") != std::string::npos);
  CHECK(r.output.find("type pairs: 2") != std::string::npos);
  CHECK(std::filesystem::exists(out / "schema.json"));
}

TEST_CASE("exit codes") {
  TempDir out;
  const std::string o = " --out " + out.path().string();
  CHECK(run_cli("").exit_code == 1);
  CHECK(run_cli("frobnicate").exit_code == 1);
  CHECK(run_cli("ingest").exit_code == 1);
  CHECK(run_cli("ingest --config /no/such/file.toml").exit_code == 1);
  CHECK(run_cli("ingest --config " + cfg("fixture6.toml") + " --set retriever.bogus=1" + o).exit_code == 1);
  CHECK(run_cli("--help").exit_code == 0);

  {
    std::ofstream bad(out / "bad.toml");
    bad << "[providers.completion]\napi_key = \"sk-live\"\n";
  }
  const auto sec = run_cli("ingest --config " + (out / "bad.toml").string() + o);
  CHECK(sec.exit_code == 2);
  CHECK(sec.output.find("api_key") != std::string::npos);
  CHECK(sec.output.find("sk-live") == std::string::npos);

  const auto epr = run_cli("predict --mock-providers --config " + cfg("fixture40.toml") +
                           " --set retriever.kind=epr" + o);
  CHECK(epr.exit_code == 2);
  CHECK(epr.output.find((out / "adapter.bin").string()) != std::string::npos);
  CHECK(epr.output.find("stage=predict") != std::string::npos);

  const auto idx = run_cli("index --mock-providers --config " + cfg("fixture40.toml") + o);
  CHECK(idx.exit_code == 2);
  CHECK(idx.output.find("embeddings.bin") != std::string::npos);
}

TEST_CASE("dry run prints the first prompt without provider calls") {
  TempDir out;
  const std::string common = " --mock-providers --config " + cfg("fixture40.toml") + " --out " + out.path().string();
  REQUIRE(run_cli("embed" + common).exit_code == 0);
  REQUIRE(run_cli("index" + common).exit_code == 0);
  const auto r = run_cli("predict --dry-run" + common);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("Possible relations: employee_of, founder_of, no_relation") != std::string::npos);
  CHECK(r.output.find("after college .\nRelation:\n") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(out / "records.jsonl"));
  CHECK_FALSE(std::filesystem::exists(out / "cache" / "completion"));
}

TEST_CASE("stages reuse their artifacts") {
  TempDir out;
  const std::string common = " --mock-providers --config " + cfg("fixture40.toml") + " --out " + out.path().string();
  CHECK(run_cli("embed" + common).output.find("computed") != std::string::npos);
  CHECK(run_cli("embed" + common).output.find("reused") != std::string::npos);
  const auto changed = run_cli("embed" + common + " --set providers.mock_embedding_dim=32");
  CHECK(changed.output.find("computed") != std::string::npos);
}

TEST_CASE("gold-leak pipeline and compare") {
  TempDir a, b;
  auto pipeline = [](const TempDir& out, const std::string& extra) {
    const std::string common = " --mock-providers --config " + cfg("fixture40.toml") + " --out " +
                               out.path().string() + extra;
    for (const char* s : {"embed", "index", "predict", "evaluate"}) {
      const auto r = run_cli(std::string(s) + common);
      REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    }
  };
  pipeline(a, " --set providers.mock_completion=gold_leak");
  pipeline(b, " --set providers.mock_completion=constant");
  std::ifstream in(a / "report.json");
  const auto report = nlohmann::json::parse(in);
  CHECK(report["micro_f1_incl_norel"] == 1.0);

  const auto cmp = run_cli("compare " + (a / "report.json").string() + " " + (b / "report.json").string());
  CHECK(cmp.exit_code == 0);
  CHECK(cmp.output.find("micro_f1_incl_norel") != std::string::npos);
  CHECK(run_cli("compare " + (a / "report.json").string()).exit_code == 1);
  CHECK(run_cli("compare " + (a / "report.json").string() + " /nope.json").exit_code == 2);
}
