#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "finre/config.hpp"
#include "finre/corpus.hpp"
#include "finre/epr.hpp"
#include "finre/metrics.hpp"
#include "finre/promptkit.hpp"
#include "finre/providers.hpp"
#include "finre/vector_index.hpp"

namespace finre {

/// Picks retrieved demonstrations for a test instance, most similar first.
class DemoRetriever {
 public:
  virtual ~DemoRetriever() = default;
  virtual std::vector<Neighbor> retrieve(const REInstance& test, std::size_t k) const = 0;
};

class NullRetriever : public DemoRetriever {
 public:
  std::vector<Neighbor> retrieve(const REInstance&, std::size_t) const override { return {}; }
};

/// Raw-embedding cosine retrieval over the train index. Query vectors come
/// from `store`, which must hold an embedding for every test instance.
class KnnRetriever : public DemoRetriever {
 public:
  KnnRetriever(const Corpus& corpus, const VectorIndex& train_index, const VectorIndex& store,
               bool restrict_to_type_pair);
  std::vector<Neighbor> retrieve(const REInstance& test, std::size_t k) const override;

 protected:
  KnnRetriever(const Corpus& corpus, const VectorIndex& store, bool restrict_to_type_pair);
  virtual std::vector<double> query_vector(std::span<const double> raw) const;

  const Corpus& corpus_;
  const VectorIndex& store_;
  bool restrict_;
  VectorIndex full_;
  TypePairIndex parts_;
};

/// Same rules as KnnRetriever, in the adapter-projected space.
class EprRetriever : public KnnRetriever {
 public:
  EprRetriever(const Corpus& corpus, const VectorIndex& train_index, const VectorIndex& store,
               bool restrict_to_type_pair, AdapterModel adapter);

 protected:
  std::vector<double> query_vector(std::span<const double> raw) const override;

 private:
  AdapterModel adapter_;
};

/// Append-only run directory: config.json (echo + digest), records.jsonl,
/// timings.jsonl and optional prompts/.
class RunStore {
 public:
  /// Throws DataError if the directory already belongs to another config digest.
  RunStore(std::filesystem::path dir, const nlohmann::json& config_echo, const std::string& digest);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path records_path() const { return dir_ / "records.jsonl"; }
  std::filesystem::path report_path() const { return dir_ / "report.json"; }

  /// Complete records already on disk. A torn trailing line is cut off.
  std::vector<PredictionRecord> load_records();
  void append(const PredictionRecord& r);
  void dump_prompt(const std::string& digest, const std::string& text);

 private:
  std::filesystem::path dir_;
};

std::vector<PredictionRecord> read_records(const std::filesystem::path& path);

class ExperimentRunner {
 public:
  ExperimentRunner(const ExperimentConfig& cfg, const Corpus& corpus,
                   const DemoRetriever& retriever, PromptTemplate tpl);

  /// Retrieval plus prompt assembly for one test instance.
  PromptBundle prepare(const REInstance& test) const;

  /// Never throws on provider errors; they become parse_status=error records.
  PredictionRecord predict_one(const REInstance& test, ProviderClient& llm) const;

  /// One record per test instance, in test order, streamed into `store`.
  /// Instances already present in the store are not recomputed. Throws
  /// FailureThresholdExceeded once provider failures pass the configured
  /// fraction of the test set.
  std::vector<PredictionRecord> run(ProviderClient& llm, RunStore& store) const;

 private:
  const ExperimentConfig& cfg_;
  const Corpus& corpus_;
  const DemoRetriever& retriever_;
  PromptTemplate tpl_;
};

std::vector<PredictionRecord> run_experiment(const ExperimentConfig& cfg, const Corpus& corpus,
                                             const DemoRetriever& retriever, ProviderClient& llm,
                                             RunStore& store);

}  // namespace finre
