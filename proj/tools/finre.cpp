// finre: relation extraction by in-context learning, end to end.
//
//   finre ingest    --config cfg.toml          load + validate corpus, write schema.json
//   finre embed     --config cfg.toml          embed every instance -> embeddings.bin
//   finre index     --config cfg.toml          train-split index -> train.index
//   finre epr-mine  --config cfg.toml          mine + score + label -> epr_pairs.jsonl
//   finre epr-train --config cfg.toml          fit the adapter -> adapter.bin
//   finre predict   --config cfg.toml          prompts + completions -> records.jsonl
//   finre evaluate  --config cfg.toml          records -> report.json
//   finre compare   A/report.json B/report.json
//
// Exit codes: 0 ok, 1 usage, 2 data/validation, 3 provider failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "finre/config.hpp"
#include "finre/corpus.hpp"
#include "finre/digest.hpp"
#include "finre/epr.hpp"
#include "finre/errors.hpp"
#include "finre/http_transport.hpp"
#include "finre/metrics.hpp"
#include "finre/mock_providers.hpp"
#include "finre/promptkit.hpp"
#include "finre/providers.hpp"
#include "finre/runner.hpp"
#include "finre/vector_index.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace finre;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  bool dry_run = false;
  bool mock = false;
  int verbosity = 0;
  std::vector<std::string> reports;  // compare
};

struct Context {
  ExperimentConfig cfg;
  bool mock = false;

  fs::path dir() const { return cfg.output_dir; }
  fs::path path(const char* name) const { return cfg.output_dir / name; }
};

Context load_context(const Options& opt) {
  if (opt.config_path.empty()) throw UsageError("--config is required");
  Context ctx;
  ctx.cfg = load_config(opt.config_path, opt.sets);
  if (!opt.out.empty()) set_output_dir(ctx.cfg, opt.out);
  ctx.mock = opt.mock;
  if (opt.mock) {
    ctx.cfg.echo["cli"] = {{"mock_providers", true}};
    refresh_digest(ctx.cfg);
  }
  fs::create_directories(ctx.dir());
  return ctx;
}

Corpus load_corpus_from(const ExperimentConfig& cfg) {
  if (cfg.train_path.empty()) throw ConfigError("data.train_path is not set");
  auto instances = load_instances(cfg.train_path, cfg.format, Split::train, cfg.mapping);
  if (!cfg.test_path.empty()) {
    auto test = load_instances(cfg.test_path, cfg.format, Split::test, cfg.mapping);
    instances.insert(instances.end(), std::make_move_iterator(test.begin()),
                     std::make_move_iterator(test.end()));
  }
  if (!cfg.schema_override.empty()) {
    return Corpus(std::move(instances), load_schema_file(cfg.schema_override));
  }
  return Corpus(std::move(instances));
}

// Per-stage reuse bookkeeping: manifest.json maps stage -> input digest.
class Manifest {
 public:
  explicit Manifest(fs::path dir) : path_(std::move(dir) / "manifest.json") {
    if (std::ifstream in(path_); in) {
      try {
        doc_ = json::parse(in);
      } catch (const json::exception&) {
        doc_ = json::object();
      }
    }
  }

  bool fresh(const std::string& stage, const std::string& digest,
             const std::vector<fs::path>& artifacts) const {
    if (doc_.value(stage, "") != digest) return false;
    for (const auto& a : artifacts) {
      if (!fs::exists(a)) return false;
    }
    return true;
  }

  void record(const std::string& stage, const std::string& digest) {
    doc_[stage] = digest;
    std::ofstream out(path_);
    out << doc_.dump(2) << '\n';
  }

  std::string get(const std::string& stage) const { return doc_.value(stage, ""); }

 private:
  fs::path path_;
  json doc_ = json::object();
};

std::shared_ptr<Transport> http_or(bool mock, std::shared_ptr<Transport> mock_backend,
                                   const ProviderConfig& cfg) {
  if (mock) return mock_backend;
  if (!cfg.api_key_env.empty() && !std::getenv(cfg.api_key_env.c_str())) {
    spdlog::warn("environment variable {} is not set; requests go out unauthenticated",
                 cfg.api_key_env);
  }
  return std::make_shared<HttpTransport>(cfg);
}

std::unique_ptr<ProviderClient> make_embedder(const Context& ctx) {
  ProviderConfig pc = ctx.cfg.embedding;
  if (ctx.mock) pc.model_name = "mock-hash-" + std::to_string(ctx.cfg.mock_embedding_dim);
  auto backend = std::make_shared<HashEmbeddingBackend>(ctx.cfg.mock_embedding_dim);
  return std::make_unique<ProviderClient>(pc, http_or(ctx.mock, backend, pc));
}

std::unique_ptr<ProviderClient> make_scorer(const Context& ctx) {
  ProviderConfig pc = ctx.cfg.scoring;
  if (ctx.mock) pc.model_name = "mock-edit-distance";
  return std::make_unique<ProviderClient>(
      pc, http_or(ctx.mock, std::make_shared<EditDistanceScoringBackend>(), pc));
}

std::unique_ptr<ProviderClient> make_llm(const Context& ctx, const Corpus& corpus) {
  ProviderConfig pc = ctx.cfg.completion;
  std::shared_ptr<Transport> backend;
  if (ctx.mock) {
    switch (ctx.cfg.mock_completion) {
      case MockCompletion::majority:
        pc.model_name = "mock-majority";
        backend = std::make_shared<MajorityDemoCompletionBackend>();
        break;
      case MockCompletion::gold_leak: {
        pc.model_name = "mock-gold-leak";
        std::map<std::string, std::string> blocks;
        for (const auto* t : corpus.split(Split::test)) blocks[render_test_block(*t)] = t->relation;
        backend = std::make_shared<GoldLeakCompletionBackend>(std::move(blocks));
        break;
      }
      case MockCompletion::constant:
        pc.model_name = "mock-constant";
        backend = std::make_shared<ScriptedCompletionBackend>(
            std::map<std::string, std::string>{}, ctx.cfg.mock_constant_text);
        break;
    }
  }
  return std::make_unique<ProviderClient>(pc, http_or(ctx.mock, backend, pc));
}

std::string embed_digest(const Context& ctx) {
  return section_digest(ctx.cfg.echo,
                        {"data", "providers.embedding", "providers.mock_embedding_dim", "cli"});
}

std::string epr_mine_digest(const Context& ctx) {
  return section_digest(ctx.cfg.echo, {"data", "providers.embedding",
                                       "providers.mock_embedding_dim", "providers.scoring", "cli",
                                       "epr.candidates", "epr.positives", "epr.negatives",
                                       "epr.scoring_mode"});
}

std::string epr_train_digest(const Context& ctx) {
  return sha256_hex(epr_mine_digest(ctx) +
                    section_digest(ctx.cfg.echo, {"epr.epochs", "epr.lr", "epr.batch_size",
                                                  "epr.temperature", "epr.in_batch_negatives",
                                                  "epr.seed"}));
}

fs::path require(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifact(p.string());
  return p;
}

int cmd_ingest(const Options& opt) {
  Context ctx = load_context(opt);
  const Corpus corpus = load_corpus_from(ctx.cfg);
  save_schema_file(corpus.schema(), ctx.path("schema.json"));
  const auto train = corpus.split(Split::train).size();
  const auto test = corpus.split(Split::test).size();
  std::cout << "instances: " << corpus.instances().size() << " (train " << train << ", test "
            << test << ")\n"
            << "relations: " << corpus.schema().all_relations.size() << "\n"
            << "type pairs: " << corpus.schema().entries.size() << "\n";
  for (const auto& [pair, rels] : corpus.schema().entries) {
    std::cout << "  " << to_string(pair) << ": " << rels.size() << " relations\n";
  }
  return 0;
}

int cmd_embed(const Options& opt) {
  Context ctx = load_context(opt);
  Manifest manifest(ctx.dir());
  const std::string digest = embed_digest(ctx);
  const fs::path out = ctx.path("embeddings.bin");
  if (manifest.fresh("embed", digest, {out})) {
    spdlog::info("embed: reused {}", out.string());
    return 0;
  }
  const Corpus corpus = load_corpus_from(ctx.cfg);
  auto embedder = make_embedder(ctx);
  std::vector<std::string> texts;
  texts.reserve(corpus.instances().size());
  for (const auto& inst : corpus.instances()) texts.push_back(render_instance(inst, false));
  const auto vectors = embedder->embed_batch(texts);
  std::vector<std::pair<std::string, EmbeddingVector>> items;
  items.reserve(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    items.emplace_back(corpus.instances()[i].id, vectors[i]);
  }
  VectorIndex(items).save(out);
  manifest.record("embed", digest);
  spdlog::info("embed: computed {} vectors ({} upstream calls, {} cache hits) -> {}", items.size(),
               embedder->upstream_calls(), embedder->cache_hits(), out.string());
  return 0;
}

int cmd_index(const Options& opt) {
  Context ctx = load_context(opt);
  Manifest manifest(ctx.dir());
  const fs::path out = ctx.path("train.index");
  const std::string digest = sha256_hex("index:" + embed_digest(ctx));
  if (manifest.fresh("index", digest, {out})) {
    spdlog::info("index: reused {}", out.string());
    return 0;
  }
  if (manifest.get("embed") != embed_digest(ctx)) {
    throw MissingArtifact(ctx.path("embeddings.bin").string() + " (run `embed` for this config)");
  }
  const VectorIndex all = VectorIndex::load(require(ctx.path("embeddings.bin")));
  const Corpus corpus = load_corpus_from(ctx.cfg);
  std::vector<std::string> train_ids;
  for (const auto* inst : corpus.split(Split::train)) {
    if (!all.position(inst->id)) {
      throw DataError("embeddings.bin lacks train instance '" + inst->id + "'");
    }
    train_ids.push_back(inst->id);
  }
  all.subset(train_ids).save(out);
  manifest.record("index", digest);
  spdlog::info("index: computed {} entries, dim {} -> {}", train_ids.size(), all.dim(),
               out.string());
  return 0;
}

int cmd_epr_mine(const Options& opt) {
  Context ctx = load_context(opt);
  Manifest manifest(ctx.dir());
  const fs::path out = ctx.path("epr_pairs.jsonl");
  const std::string digest = epr_mine_digest(ctx);
  if (manifest.fresh("epr-mine", digest, {out})) {
    spdlog::info("epr-mine: reused {}", out.string());
    return 0;
  }
  const Corpus corpus = load_corpus_from(ctx.cfg);
  const VectorIndex index = VectorIndex::load(require(ctx.path("train.index")));
  const TypePairIndex parts(index, corpus);
  auto scorer = make_scorer(ctx);

  std::vector<TrainingPair> pairs;
  std::ofstream scores(ctx.path("epr_scores.jsonl"));
  std::size_t skipped = 0;
  for (const auto* anchor : corpus.split(Split::train)) {
    std::vector<std::string> cands;
    try {
      cands = mine_candidates(corpus, parts, *anchor, ctx.cfg.epr_candidates);
    } catch (const InsufficientCandidates& e) {
      spdlog::debug("epr-mine: skipping {}", e.what());
      ++skipped;
      continue;
    }
    const auto scored = score_candidates(*scorer, corpus, *anchor, cands, ctx.cfg.scoring_mode);
    json row = {{"anchor_id", anchor->id}, {"candidates", json::array()}};
    for (const auto& s : scored) row["candidates"].push_back({{"id", s.candidate_id}, {"score", s.score}});
    scores << row.dump() << '\n';

    // Small pools shrink p and n so both stay >= 1 and disjoint.
    const std::size_t p = std::min(ctx.cfg.epr_positives, scored.size() - 1);
    const std::size_t n = std::min(ctx.cfg.epr_negatives, scored.size() - p);
    for (auto& tp : label_pairs(scored, anchor->id, p, n)) pairs.push_back(std::move(tp));
  }
  save_pairs(pairs, out);
  manifest.record("epr-mine", digest);
  spdlog::info("epr-mine: computed {} training pairs ({} anchors skipped, {} scorer calls) -> {}",
               pairs.size(), skipped, scorer->upstream_calls(), out.string());
  return 0;
}

int cmd_epr_train(const Options& opt) {
  Context ctx = load_context(opt);
  Manifest manifest(ctx.dir());
  const fs::path out = ctx.path("adapter.bin");
  const std::string digest = epr_train_digest(ctx);
  if (manifest.fresh("epr-train", digest, {out})) {
    spdlog::info("epr-train: reused {}", out.string());
    return 0;
  }
  const auto pairs = load_pairs(require(ctx.path("epr_pairs.jsonl")));
  const VectorIndex index = VectorIndex::load(require(ctx.path("train.index")));
  EmbeddingTable table;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto v = index.vector(i);
    table.emplace(index.id(i), EmbeddingVector{{v.begin(), v.end()}, index.model_tag()});
  }
  const AdapterModel model = train_adapter(pairs, table, ctx.cfg.adapter);
  model.save(out);
  manifest.record("epr-train", digest);
  spdlog::info("epr-train: computed adapter dim {} over {} pairs, loss {:.4f} -> {:.4f}",
               model.dim(), pairs.size(), model.loss_curve.empty() ? 0.0 : model.loss_curve.front(),
               model.loss_curve.empty() ? 0.0 : model.loss_curve.back());
  return 0;
}

int cmd_predict(const Options& opt) {
  Context ctx = load_context(opt);
  const Corpus corpus = load_corpus_from(ctx.cfg);
  const PromptTemplate tpl = ctx.cfg.template_path.empty()
                                 ? PromptTemplate::builtin()
                                 : PromptTemplate::from_file(ctx.cfg.template_path);

  std::optional<VectorIndex> store, train;
  std::unique_ptr<DemoRetriever> retriever;
  switch (ctx.cfg.retriever) {
    case RetrieverKind::none:
      retriever = std::make_unique<NullRetriever>();
      break;
    case RetrieverKind::knn:
    case RetrieverKind::epr: {
      std::optional<AdapterModel> adapter;
      if (ctx.cfg.retriever == RetrieverKind::epr) {
        adapter = AdapterModel::load(require(ctx.path("adapter.bin")));
      }
      train = VectorIndex::load(require(ctx.path("train.index")));
      store = VectorIndex::load(require(ctx.path("embeddings.bin")));
      if (adapter) {
        retriever = std::make_unique<EprRetriever>(corpus, *train, *store,
                                                   ctx.cfg.restrict_to_type_pair, *adapter);
      } else {
        retriever = std::make_unique<KnnRetriever>(corpus, *train, *store,
                                                   ctx.cfg.restrict_to_type_pair);
      }
      break;
    }
  }

  const ExperimentRunner runner(ctx.cfg, corpus, *retriever, tpl);
  const auto tests = corpus.split(Split::test);
  if (opt.dry_run) {
    if (tests.empty()) throw EmptyTestSet("no test instances (data.test_path)");
    std::cout << runner.prepare(*tests.front()).text << '\n';
    return 0;
  }

  auto llm = make_llm(ctx, corpus);
  RunStore store_dir(ctx.dir(), ctx.cfg.echo, ctx.cfg.digest);
  const auto records = runner.run(*llm, store_dir);
  std::size_t errors = 0, fallback = 0;
  for (const auto& r : records) {
    errors += r.parse_status == ParseStatus::error;
    fallback += r.parse_status == ParseStatus::fallback;
  }
  std::cout << "records: " << records.size() << " (fallback " << fallback << ", errors " << errors
            << ") -> " << store_dir.records_path().string() << "\n";
  spdlog::info("predict: {} upstream completion calls, {} cache hits", llm->upstream_calls(),
               llm->cache_hits());
  return 0;
}

int cmd_evaluate(const Options& opt) {
  Context ctx = load_context(opt);
  const fs::path records_path = require(ctx.path("records.jsonl"));
  const auto records = read_records(records_path);
  const Corpus corpus = load_corpus_from(ctx.cfg);
  MetricsReport report = compute_metrics(records, corpus.schema());
  report.config_echo = ctx.cfg.echo;
  {
    std::ofstream out(ctx.path("report.json"));
    out << to_json(report).dump(2) << '\n';
  }
  std::printf("micro_f1_excl_norel (headline): %.4f\n", report.micro_f1_excl_norel);
  std::printf("micro_f1_incl_norel:            %.4f\n", report.micro_f1_incl_norel);
  std::printf("macro_f1:                       %.4f\n", report.macro_f1);
  std::printf("fallback_rate:                  %.4f\n", report.fallback_rate);
  std::printf("records:                        %zu\n", report.total);
  return 0;
}

MetricsReport read_report(const fs::path& p) {
  std::ifstream in(require(p));
  try {
    return report_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

int cmd_compare(const Options& opt) {
  if (opt.reports.size() != 2) throw UsageError("compare needs exactly two report paths");
  const auto a = read_report(opt.reports[0]);
  const auto b = read_report(opt.reports[1]);
  const DeltaTable d = compare_runs(a, b);
  std::cout << format_delta_table(d);
  if (!opt.out.empty()) {
    fs::create_directories(opt.out);
    std::ofstream out(fs::path(opt.out) / "compare.json");
    out << to_json(d).dump(2) << '\n';
  }
  return 0;
}

void add_common(CLI::App* sub, Options& opt) {
  sub->add_option("--config", opt.config_path, "experiment config (TOML)");
  sub->add_option("--set", opt.sets, "override a config key, K=V (repeatable)");
  sub->add_option("--out", opt.out, "output directory (overrides run.output_dir)");
  sub->add_flag("--mock-providers", opt.mock, "use deterministic mock providers");
  sub->add_flag("-v", opt.verbosity, "more logging (-v debug, -vv trace)");
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_logger_mt("finre");
  logger->set_pattern("%Y-%m-%dT%H:%M:%S.%e level=%l %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);

  CLI::App app{"Relation extraction by in-context learning with retrieved demonstrations"};
  app.require_subcommand(1);
  Options opt;

  const std::vector<std::pair<std::string, std::string>> subs = {
      {"ingest", "load and validate the corpus, print counts, write schema.json"},
      {"embed", "embed every instance"},
      {"index", "build the train-split vector index"},
      {"epr-mine", "mine, score and label EPR training pairs"},
      {"epr-train", "train the EPR adapter"},
      {"predict", "run retrieval, prompting and completion for the test split"},
      {"evaluate", "compute report.json from records.jsonl"},
      {"compare", "delta table between two report.json files"},
  };
  std::map<std::string, CLI::App*> handles;
  for (const auto& [name, help] : subs) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub, opt);
    handles[name] = sub;
  }
  handles["predict"]->add_flag("--dry-run", opt.dry_run,
                               "print the first prompt and exit without provider calls");
  handles["compare"]->add_option("reports", opt.reports, "report A and report B")->expected(2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (opt.verbosity == 1) spdlog::set_level(spdlog::level::debug);
  if (opt.verbosity >= 2) spdlog::set_level(spdlog::level::trace);

  std::string stage;
  for (const auto& [name, sub] : handles) {
    if (sub->parsed()) stage = name;
  }
  const std::string input = !opt.config_path.empty() ? opt.config_path : "<args>";
  try {
    if (stage == "ingest") return cmd_ingest(opt);
    if (stage == "embed") return cmd_embed(opt);
    if (stage == "index") return cmd_index(opt);
    if (stage == "epr-mine") return cmd_epr_mine(opt);
    if (stage == "epr-train") return cmd_epr_train(opt);
    if (stage == "predict") return cmd_predict(opt);
    if (stage == "evaluate") return cmd_evaluate(opt);
    if (stage == "compare") return cmd_compare(opt);
  } catch (const UsageError& e) {
    spdlog::error("stage={} input={} usage error: {}", stage, input, e.what());
    return 1;
  } catch (const DataError& e) {
    spdlog::error("stage={} input={} error: {}", stage, input, e.what());
    return 2;
  } catch (const ProviderError& e) {
    spdlog::error("stage={} input={} provider error: {}", stage, input, e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("stage={} input={} error: {}", stage, input, e.what());
    return 2;
  }
  return 1;
}
