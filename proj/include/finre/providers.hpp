#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finre/disk_cache.hpp"

namespace finre {

enum class Capability { embedding, completion, scoring };

const char* to_string(Capability c);

struct EmbeddingVector {
  std::vector<double> values;
  std::string model_tag;

  std::size_t dim() const { return values.size(); }
};

struct ScoreResult {
  double total_logprob = 0.0;  // nats, summed over target tokens
  int token_count = 1;
  bool from_mock = false;  // mocks may report total_logprob > 0
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{500};
};

struct ProviderConfig {
  std::string base_url;
  std::string model_name;
  std::string api_key_env;  // name of the env var holding the key, never the key itself
  int max_parallel = 4;
  RetryPolicy retry;
  std::filesystem::path cache_dir;  // empty: in-memory cache only
  std::size_t embed_batch_size = 64;
  double timeout_seconds = 60.0;
};

/// Throws ConfigError if a field breaks its invariant.
void validate(const ProviderConfig& cfg);

struct CompletionOptions {
  int max_tokens = 16;
  double temperature = 0.0;
};

/// Moves one JSON request body to a backend and returns the JSON response.
/// Implementations throw TransportError for retryable failures,
/// ProviderRefusal for declined requests and CapabilityUnsupported when the
/// backend cannot serve the capability at all.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual nlohmann::json post(Capability cap, const nlohmann::json& body) = 0;
  virtual bool is_mock() const { return false; }
};

/// Caching, retrying, concurrency-bounded client over a Transport.
/// Safe to share across threads.
class ProviderClient {
 public:
  ProviderClient(ProviderConfig cfg, std::shared_ptr<Transport> transport);

  /// One vector per input, order-aligned. Repeated texts hit the cache.
  std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts);

  std::string complete(const std::string& prompt, const CompletionOptions& options = {});

  ScoreResult score_output(const std::string& prefix, const std::string& target);

  const ProviderConfig& config() const { return cfg_; }
  const std::string& model_tag() const { return cfg_.model_name; }
  bool is_mock() const { return transport_->is_mock(); }

  std::size_t upstream_calls() const { return upstream_calls_.load(); }
  std::size_t cache_hits() const { return cache_hits_.load(); }

 private:
  nlohmann::json cached_call(Capability cap, const nlohmann::json& body, bool cacheable);
  nlohmann::json upstream(Capability cap, const nlohmann::json& body);
  std::vector<double> parse_embedding(const nlohmann::json& item);
  void check_dim(std::size_t dim);

  ProviderConfig cfg_;
  std::shared_ptr<Transport> transport_;
  DiskCache cache_;
  std::counting_semaphore<1024> slots_;
  std::atomic<std::size_t> upstream_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::mutex dim_mu_;
  std::size_t known_dim_ = 0;
};

/// Cache key for a request: digest over capability, model tag and the
/// canonical (key-sorted) JSON body.
std::string request_digest(Capability cap, const std::string& model_tag,
                           const nlohmann::json& body);

}  // namespace finre
