#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "finre/corpus.hpp"
#include "finre/providers.hpp"
#include "finre/vector_index.hpp"

namespace finre {

/// Train-split sub-indexes keyed by entity-type pair. Built once, shared by
/// candidate mining and type-pair-restricted retrieval.
class TypePairIndex {
 public:
  TypePairIndex() = default;
  /// Partition `full` by the type pair of each train instance it contains.
  /// Ids not in the corpus or not in the train split are skipped.
  TypePairIndex(const VectorIndex& full, const Corpus& corpus);

  /// nullptr when no train instance of the pair is indexed.
  const VectorIndex* find(const TypePair& pair) const;
  const std::map<TypePair, VectorIndex>& parts() const { return parts_; }

 private:
  std::map<TypePair, VectorIndex> parts_;
};

/// Top-L train candidates sharing the anchor's type pair, by raw cosine,
/// anchor excluded. Throws InsufficientCandidates below 2.
std::vector<std::string> mine_candidates(const Corpus& corpus, const TypePairIndex& index,
                                         const REInstance& anchor, std::size_t max_candidates);
std::vector<std::string> mine_candidates(const Corpus& corpus, const VectorIndex& index,
                                         const REInstance& anchor, std::size_t max_candidates);

enum class ScoringMode { sum, per_token };

ScoringMode parse_scoring_mode(const std::string& name);
const char* to_string(ScoringMode m);

struct ScoredCandidate {
  std::string candidate_id;
  double score = 0.0;

  bool operator==(const ScoredCandidate&) const = default;
};

/// Scorer input for one candidate: the candidate as a labeled demo, then the
/// anchor's open test block. The scored target is the anchor's gold label.
std::string scoring_prefix(const REInstance& candidate, const REInstance& anchor);

/// Score every candidate as a one-shot prompt for the anchor. Requests run
/// concurrently up to the scorer's max_parallel; output order follows input.
std::vector<ScoredCandidate> score_candidates(ProviderClient& scorer, const Corpus& corpus,
                                              const REInstance& anchor,
                                              const std::vector<std::string>& candidates,
                                              ScoringMode mode);

struct TrainingPair {
  std::string anchor_id;
  std::string positive_id;
  std::vector<std::string> negative_ids;

  bool operator==(const TrainingPair&) const = default;
};

/// Rank by score (ties: ascending id); the top `positives` each become one
/// pair carrying the bottom `negatives` as negatives.
std::vector<TrainingPair> label_pairs(const std::vector<ScoredCandidate>& scored,
                                      const std::string& anchor_id, std::size_t positives,
                                      std::size_t negatives);

void save_pairs(const std::vector<TrainingPair>& pairs, const std::filesystem::path& path);
std::vector<TrainingPair> load_pairs(const std::filesystem::path& path);

struct AdapterTrainConfig {
  int epochs = 30;
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 13;
  bool in_batch_negatives = true;
  double temperature = 0.1;  // logits are cosine / temperature
};

void validate(const AdapterTrainConfig& cfg);

struct AdapterModel {
  Eigen::MatrixXd weights;
  int epochs = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  double temperature = 0.1;
  std::vector<double> loss_curve;

  std::size_t dim() const { return static_cast<std::size_t>(weights.rows()); }

  static AdapterModel identity(std::size_t dim);

  /// "FRAD" magic, u32 version, u32 dim, u64 seed, u32 epochs, f64 lr, then
  /// dim*dim little-endian float64 row-major. The loss curve and temperature
  /// go to "<path>.meta.json".
  void save(const std::filesystem::path& path) const;
  static AdapterModel load(const std::filesystem::path& path);
};

/// -log softmax(positive) over [positive, negatives...].
double info_nce_loss(double positive_logit, std::span<const double> negative_logits);

using EmbeddingTable = std::unordered_map<std::string, EmbeddingVector>;

/// Mean InfoNCE loss over a batch of pairs under projection `weights`.
double batch_loss(const Eigen::MatrixXd& weights, std::span<const TrainingPair> batch,
                  const EmbeddingTable& embeddings, const AdapterTrainConfig& cfg);

/// Analytic gradient of batch_loss with respect to `weights`.
Eigen::MatrixXd batch_gradient(const Eigen::MatrixXd& weights, std::span<const TrainingPair> batch,
                               const EmbeddingTable& embeddings, const AdapterTrainConfig& cfg,
                               double* loss_out = nullptr);

/// Plain SGD from the identity. Deterministic for fixed inputs and seed.
/// Throws TrainingDiverged on a non-finite loss.
AdapterModel train_adapter(const std::vector<TrainingPair>& pairs, const EmbeddingTable& embeddings,
                           const AdapterTrainConfig& cfg);

/// The index with every vector mapped through the adapter.
VectorIndex project_index(const AdapterModel& adapter, const VectorIndex& index);
std::vector<double> project(const AdapterModel& adapter, std::span<const double> v);

/// Top-k by cosine between projected query and projected entries.
std::vector<Neighbor> epr_retrieve(const AdapterModel& adapter, const VectorIndex& index,
                                   const EmbeddingVector& query, std::size_t k,
                                   const IdSet& exclude = {});

}  // namespace finre
