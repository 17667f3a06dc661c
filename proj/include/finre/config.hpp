#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finre/corpus.hpp"
#include "finre/epr.hpp"
#include "finre/promptkit.hpp"
#include "finre/providers.hpp"

namespace finre {

enum class RetrieverKind { knn, epr, none };

RetrieverKind parse_retriever_kind(const std::string& name);
const char* to_string(RetrieverKind k);

enum class MockCompletion { majority, gold_leak, constant };

struct ExperimentConfig {
  std::uint64_t seed = 7;

  std::filesystem::path train_path;
  std::filesystem::path test_path;
  CorpusFormat format = CorpusFormat::canonical;
  std::filesystem::path schema_override;  // empty: derived schema only
  FieldMapping mapping;

  RetrieverKind retriever = RetrieverKind::knn;
  std::size_t k_retrieved = 5;
  bool restrict_to_type_pair = true;

  std::size_t r_per_class = 4;
  std::filesystem::path template_path;  // empty: built-in template
  PromptOptions prompt;
  bool allow_zero_shot = false;
  bool dump_prompts = false;
  int max_tokens = 16;

  std::size_t epr_candidates = 50;
  std::size_t epr_positives = 3;
  std::size_t epr_negatives = 10;
  ScoringMode scoring_mode = ScoringMode::sum;
  AdapterTrainConfig adapter;

  ProviderConfig embedding;
  ProviderConfig completion;
  ProviderConfig scoring;
  MockCompletion mock_completion = MockCompletion::majority;
  std::string mock_constant_text = "no relation";
  std::size_t mock_embedding_dim = 256;

  std::filesystem::path output_dir = "runs/default";
  std::filesystem::path cache_dir_setting = "cache";
  double max_failure_fraction = 0.05;

  /// Merged config tree as JSON (paths as written, output_dir removed).
  nlohmann::json echo;
  /// sha256 of echo.dump().
  std::string digest;
};

/// The built-in defaults, as TOML text. Every accepted key appears here.
const std::string& default_config_toml();

/// Load a TOML config, merge it over the defaults and apply `key=value`
/// overrides. Throws ConfigError on unknown keys, type mismatches, any key
/// named api_key, or invariant violations. Relative data/template paths are
/// resolved against the config file's directory.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

/// Same, from TOML text (relative paths resolve against `base_dir`).
ExperimentConfig parse_config(const std::string& toml_text, const std::filesystem::path& base_dir,
                              const std::vector<std::string>& overrides = {});

/// Point the run at another output directory; a relative cache_dir follows it.
void set_output_dir(ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Recompute cfg.digest after editing cfg.echo.
void refresh_digest(ExperimentConfig& cfg);

/// Digest over a sub-tree of the echo, for per-stage artifact reuse.
std::string section_digest(const nlohmann::json& echo, const std::vector<std::string>& keys);

}  // namespace finre
