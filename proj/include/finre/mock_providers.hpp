#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "finre/providers.hpp"

namespace finre {

/// Levenshtein distance over bytes.
std::size_t edit_distance(const std::string& a, const std::string& b);

/// Deterministic unit-norm embeddings: the text is hashed into a seed, the
/// seed drives a 64-bit generator that fills `dim` values in [-1, 1), and the
/// result is L2-normalized.
class HashEmbeddingBackend : public Transport {
 public:
  explicit HashEmbeddingBackend(std::size_t dim = 256, std::uint64_t seed = 0);
  nlohmann::json post(Capability cap, const nlohmann::json& body) override;
  bool is_mock() const override { return true; }

  std::vector<double> embed(const std::string& text) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Completion table lookup with a default for unknown prompts.
class ScriptedCompletionBackend : public Transport {
 public:
  ScriptedCompletionBackend(std::map<std::string, std::string> table, std::string fallback);
  nlohmann::json post(Capability cap, const nlohmann::json& body) override;
  bool is_mock() const override { return true; }

 private:
  std::map<std::string, std::string> table_;
  std::string fallback_;
};

/// Returns the gold label of the test instance whose rendered input block
/// ends the prompt. Establishes the metric upper bound of the pipeline.
class GoldLeakCompletionBackend : public Transport {
 public:
  /// test_blocks maps the rendered test input block to its gold label.
  explicit GoldLeakCompletionBackend(std::map<std::string, std::string> test_blocks);
  nlohmann::json post(Capability cap, const nlohmann::json& body) override;
  bool is_mock() const override { return true; }

 private:
  std::map<std::string, std::string> blocks_;
};

/// Answers with the most frequent demonstration label in the prompt
/// ("Relation: <label>" lines); ties go to the lexicographically smallest
/// label, which is schema order. No demos answers "no relation".
class MajorityDemoCompletionBackend : public Transport {
 public:
  nlohmann::json post(Capability cap, const nlohmann::json& body) override;
  bool is_mock() const override { return true; }
};

/// Scores a target by -(edit distance to the last labeled "Relation:" line in
/// the prefix). A single pseudo-token carries the whole score.
class EditDistanceScoringBackend : public Transport {
 public:
  nlohmann::json post(Capability cap, const nlohmann::json& body) override;
  bool is_mock() const override { return true; }
};

/// Labels appearing on "Relation: <label>" lines, in prompt order. Lines with
/// an empty label (the open test slot) are skipped.
std::vector<std::string> demo_labels_in(const std::string& prompt);

}  // namespace finre
