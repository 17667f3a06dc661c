#include "finre/runner.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "finre/digest.hpp"
#include "finre/errors.hpp"
#include "finre/parallel.hpp"

namespace finre {

namespace fs = std::filesystem;
using nlohmann::json;

KnnRetriever::KnnRetriever(const Corpus& corpus, const VectorIndex& store,
                           bool restrict_to_type_pair)
    : corpus_(corpus), store_(store), restrict_(restrict_to_type_pair) {}

KnnRetriever::KnnRetriever(const Corpus& corpus, const VectorIndex& train_index,
                           const VectorIndex& store, bool restrict_to_type_pair)
    : KnnRetriever(corpus, store, restrict_to_type_pair) {
  full_ = train_index;
  parts_ = TypePairIndex(full_, corpus_);
}

std::vector<double> KnnRetriever::query_vector(std::span<const double> raw) const {
  return {raw.begin(), raw.end()};
}

std::vector<Neighbor> KnnRetriever::retrieve(const REInstance& test, std::size_t k) const {
  if (k == 0) return {};
  const auto pos = store_.position(test.id);
  if (!pos) throw DataError("no embedding for instance '" + test.id + "'");
  const std::vector<double> q = query_vector(store_.vector(*pos));

  if (restrict_) {
    const VectorIndex* part = parts_.find(test.type_pair());
    if (!part || part->empty()) return {};
    return part->query(q, k, {test.id});
  }
  // Unrestricted: rank the whole train index, keep demos whose label the
  // test's type pair can express.
  auto it = corpus_.schema().entries.find(test.type_pair());
  if (it == corpus_.schema().entries.end() || full_.empty()) return {};
  std::vector<Neighbor> out;
  for (auto& n : full_.query(q, full_.size(), {test.id})) {
    if (it->second.contains(corpus_.at(n.id).relation)) out.push_back(std::move(n));
    if (out.size() == k) break;
  }
  return out;
}

EprRetriever::EprRetriever(const Corpus& corpus, const VectorIndex& train_index,
                           const VectorIndex& store, bool restrict_to_type_pair,
                           AdapterModel adapter)
    : KnnRetriever(corpus, store, restrict_to_type_pair), adapter_(std::move(adapter)) {
  full_ = project_index(adapter_, train_index);
  parts_ = TypePairIndex(full_, corpus_);
}

std::vector<double> EprRetriever::query_vector(std::span<const double> raw) const {
  return project(adapter_, raw);
}

RunStore::RunStore(fs::path dir, const json& config_echo, const std::string& digest)
    : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  const fs::path cfg_path = dir_ / "config.json";
  if (fs::exists(cfg_path)) {
    std::ifstream in(cfg_path);
    json existing;
    try {
      existing = json::parse(in);
    } catch (const json::exception& e) {
      throw DataError(cfg_path.string() + ": " + e.what());
    }
    if (existing.value("digest", "") != digest) {
      throw DataError("run directory " + dir_.string() + " belongs to config digest " +
                      existing.value("digest", "<none>").substr(0, 12) + ", not " +
                      digest.substr(0, 12) + "; choose another --out");
    }
    return;
  }
  std::ofstream out(cfg_path);
  if (!out) throw DataError("cannot write " + cfg_path.string());
  out << json{{"digest", digest}, {"config", config_echo}}.dump(2) << '\n';
}

std::vector<PredictionRecord> read_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path.string());
  std::vector<PredictionRecord> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, "<record>", e.what());
    }
  }
  return out;
}

std::vector<PredictionRecord> RunStore::load_records() {
  const fs::path path = records_path();
  if (!fs::exists(path)) return {};
  std::string content;
  {
    std::ifstream in(path, std::ios::binary);
    content.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto last_nl = content.rfind('\n');
  const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
  if (keep != content.size()) {
    spdlog::warn("{}: dropping torn trailing record ({} bytes)", path.string(),
                 content.size() - keep);
    fs::resize_file(path, keep);
  }
  return read_records(path);
}

void RunStore::append(const PredictionRecord& r) {
  {
    std::ofstream out(records_path(), std::ios::app);
    if (!out) throw DataError("cannot append to " + records_path().string());
    out << to_json(r).dump() << '\n';
  }
  std::ofstream timing(dir_ / "timings.jsonl", std::ios::app);
  timing << json{{"test_id", r.test_id}, {"latency_ms", r.latency_ms}}.dump() << '\n';
}

void RunStore::dump_prompt(const std::string& digest, const std::string& text) {
  const fs::path p = dir_ / "prompts" / (digest + ".txt");
  fs::create_directories(p.parent_path());
  std::ofstream out(p);
  out << text;
}

ExperimentRunner::ExperimentRunner(const ExperimentConfig& cfg, const Corpus& corpus,
                                   const DemoRetriever& retriever, PromptTemplate tpl)
    : cfg_(cfg), corpus_(corpus), retriever_(retriever), tpl_(std::move(tpl)) {}

PromptBundle ExperimentRunner::prepare(const REInstance& test) const {
  std::vector<DemoExample> demos;
  for (const auto& n : retriever_.retrieve(test, cfg_.k_retrieved)) {
    demos.push_back(make_demo(corpus_.at(n.id), DemoOrigin::retrieved));
  }
  return build_prompt(test, demos, corpus_, cfg_.r_per_class, cfg_.seed, tpl_, cfg_.prompt);
}

PredictionRecord ExperimentRunner::predict_one(const REInstance& test, ProviderClient& llm) const {
  const auto started = std::chrono::steady_clock::now();
  PredictionRecord rec;
  rec.test_id = test.id;
  rec.gold = test.relation;
  rec.template_version = tpl_.version();
  rec.predicted = kNoRelation;

  const auto it = corpus_.schema().entries.find(test.type_pair());
  if (it == corpus_.schema().entries.end()) {
    rec.parse_status = ParseStatus::unknown_type_pair;
    spdlog::warn("test {}: type pair {} not in schema, predicting {}", test.id,
                 to_string(test.type_pair()), kNoRelation);
    return rec;
  }

  const PromptBundle bundle = prepare(test);
  rec.prompt_digest = sha256_hex(bundle.text);
  rec.demo_ids = bundle.demo_ids;

  try {
    rec.raw_completion = llm.complete(bundle.text, {cfg_.max_tokens, 0.0});
    const auto parsed = parse_relation(rec.raw_completion, it->second);
    rec.predicted = parsed.label;
    rec.parse_status = parsed.status;
  } catch (const ProviderError& e) {
    spdlog::warn("test {}: completion failed: {}", test.id, e.what());
    rec.parse_status = ParseStatus::error;
  }
  rec.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                             started)
                       .count();
  return rec;
}

std::vector<PredictionRecord> ExperimentRunner::run(ProviderClient& llm, RunStore& store) const {
  const auto tests = corpus_.split(Split::test);
  std::unordered_map<std::string, PredictionRecord> done;
  std::size_t failures = 0;
  for (auto& r : store.load_records()) {
    if (r.parse_status == ParseStatus::error) ++failures;
    done.emplace(r.test_id, std::move(r));
  }
  if (!done.empty()) spdlog::info("resuming: {} records reused", done.size());

  std::vector<const REInstance*> pending;
  for (const auto* t : tests) {
    if (!done.contains(t->id)) pending.push_back(t);
  }

  const double allowed = cfg_.max_failure_fraction * static_cast<double>(tests.size());
  std::vector<std::optional<PredictionRecord>> slots(pending.size());
  std::size_t next_write = 0;
  std::mutex write_mu;
  std::atomic<std::size_t> failure_count{failures};

  parallel_for(pending.size(), static_cast<std::size_t>(llm.config().max_parallel),
               [&](std::size_t i) {
                 PredictionRecord rec = predict_one(*pending[i], llm);
                 const bool failed = rec.parse_status == ParseStatus::error;
                 {
                   std::lock_guard lock(write_mu);
                   if (cfg_.dump_prompts && !rec.prompt_digest.empty()) {
                     store.dump_prompt(rec.prompt_digest, prepare(*pending[i]).text);
                   }
                   slots[i] = std::move(rec);
                   while (next_write < slots.size() && slots[next_write]) {
                     store.append(*slots[next_write]);
                     ++next_write;
                   }
                 }
                 if (failed && static_cast<double>(++failure_count) > allowed) {
                   throw FailureThresholdExceeded(
                       std::to_string(failure_count.load()) + " of " +
                       std::to_string(tests.size()) + " completions failed (limit " +
                       std::to_string(cfg_.max_failure_fraction * 100.0) + "%)");
                 }
               });

  for (auto& s : slots) done.emplace(s->test_id, std::move(*s));
  std::vector<PredictionRecord> out;
  out.reserve(tests.size());
  for (const auto* t : tests) out.push_back(done.at(t->id));
  return out;
}

std::vector<PredictionRecord> run_experiment(const ExperimentConfig& cfg, const Corpus& corpus,
                                             const DemoRetriever& retriever, ProviderClient& llm,
                                             RunStore& store) {
  const PromptTemplate tpl =
      cfg.template_path.empty() ? PromptTemplate::builtin() : PromptTemplate::from_file(cfg.template_path);
  return ExperimentRunner(cfg, corpus, retriever, tpl).run(llm, store);
}

}  // namespace finre
