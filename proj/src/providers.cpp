#include "finre/providers.hpp"

#include <algorithm>
#include <cmath>
#include <thread>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "finre/digest.hpp"
#include "finre/errors.hpp"

namespace finre {

using nlohmann::json;

const char* to_string(Capability c) {
  switch (c) {
    case Capability::embedding: return "embedding";
    case Capability::completion: return "completion";
    case Capability::scoring: return "scoring";
  }
  return "unknown";
}

void validate(const ProviderConfig& cfg) {
  if (cfg.max_parallel < 1 || cfg.max_parallel > 1024) {
    throw ConfigError("provider max_parallel must be in [1, 1024]");
  }
  if (cfg.retry.max_attempts < 1) throw ConfigError("provider retry.max_attempts must be >= 1");
  if (cfg.retry.base_delay.count() < 0) throw ConfigError("provider retry.base_delay must be >= 0");
  if (cfg.embed_batch_size < 1) throw ConfigError("provider embed_batch_size must be >= 1");
}

std::string request_digest(Capability cap, const std::string& model_tag, const json& body) {
  // nlohmann::json objects are key-sorted, so dump() is canonical.
  return sha256_hex(std::string(to_string(cap)) + '\n' + model_tag + '\n' + body.dump());
}

ProviderClient::ProviderClient(ProviderConfig cfg, std::shared_ptr<Transport> transport)
    : cfg_(std::move(cfg)),
      transport_(std::move(transport)),
      cache_(cfg_.cache_dir),
      slots_(std::clamp(cfg_.max_parallel, 1, 1024)) {
  validate(cfg_);
  if (!transport_) throw ConfigError("provider client needs a transport");
}

json ProviderClient::upstream(Capability cap, const json& body) {
  std::string last_error;
  for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
    try {
      slots_.acquire();
      struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
      } release{slots_};
      ++upstream_calls_;
      return transport_->post(cap, body);
    } catch (const TransportError& e) {
      last_error = e.what();
      if (attempt == cfg_.retry.max_attempts) break;
      const auto delay = cfg_.retry.base_delay * (1LL << std::min(attempt - 1, 16));
      spdlog::warn("{} request failed (attempt {}/{}): {}; retrying in {} ms", to_string(cap),
                   attempt, cfg_.retry.max_attempts, e.what(), delay.count());
      std::this_thread::sleep_for(delay);
    }
  }
  throw TransportError(std::string(to_string(cap)) + " request failed after " +
                       std::to_string(cfg_.retry.max_attempts) + " attempts: " + last_error);
}

json ProviderClient::cached_call(Capability cap, const json& body, bool cacheable) {
  if (!cacheable) return upstream(cap, body);
  const std::string digest = request_digest(cap, cfg_.model_name, body);
  if (auto hit = cache_.get(to_string(cap), digest)) {
    ++cache_hits_;
    return *std::move(hit);
  }
  json response = upstream(cap, body);
  cache_.put(to_string(cap), digest, body, response);
  return response;
}

void ProviderClient::check_dim(std::size_t dim) {
  std::lock_guard lock(dim_mu_);
  if (known_dim_ == 0) {
    known_dim_ = dim;
  } else if (known_dim_ != dim) {
    throw DimensionMismatch("embedding model '" + cfg_.model_name + "' returned dim " +
                            std::to_string(dim) + " after earlier responses of dim " +
                            std::to_string(known_dim_));
  }
}

std::vector<double> ProviderClient::parse_embedding(const json& item) {
  const json* vec = &item;
  if (item.is_object()) {
    auto it = item.find("embedding");
    if (it == item.end()) throw ProviderError("embedding response item lacks 'embedding'");
    vec = &*it;
  }
  if (!vec->is_array() || vec->empty()) throw ProviderError("embedding is not a non-empty array");
  std::vector<double> values;
  values.reserve(vec->size());
  for (const auto& x : *vec) {
    if (!x.is_number()) throw ProviderError("embedding contains a non-number");
    const double v = x.get<double>();
    if (!std::isfinite(v)) throw ProviderError("embedding contains a non-finite value");
    values.push_back(v);
  }
  check_dim(values.size());
  return values;
}

namespace {

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

const json& response_data(const json& response, std::size_t expected) {
  auto it = response.find("data");
  if (it == response.end() || !it->is_array()) {
    throw ProviderError("embedding response lacks a 'data' array");
  }
  if (it->size() != expected) {
    throw ProviderError("embedding response has " + std::to_string(it->size()) +
                        " items for " + std::to_string(expected) + " inputs");
  }
  return *it;
}

}  // namespace

std::vector<EmbeddingVector> ProviderClient::embed_batch(const std::vector<std::string>& texts) {
  if (texts.empty()) throw InvalidArgument("embed_batch: empty input list");
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (blank(texts[i])) {
      throw InvalidArgument("embed_batch: input " + std::to_string(i) + " is blank");
    }
  }

  std::unordered_map<std::string, std::vector<double>> resolved;
  std::vector<std::string> missing;
  for (const auto& t : texts) {
    if (resolved.contains(t)) continue;
    const json single = {{"model", cfg_.model_name}, {"input", json::array({t})}};
    const std::string digest = request_digest(Capability::embedding, cfg_.model_name, single);
    if (auto hit = cache_.get(to_string(Capability::embedding), digest)) {
      ++cache_hits_;
      resolved.emplace(t, parse_embedding(response_data(*hit, 1)[0]));
    } else {
      resolved.emplace(t, std::vector<double>{});
      missing.push_back(t);
    }
  }

  for (std::size_t begin = 0; begin < missing.size(); begin += cfg_.embed_batch_size) {
    const std::size_t end = std::min(missing.size(), begin + cfg_.embed_batch_size);
    json input = json::array();
    for (std::size_t i = begin; i < end; ++i) input.push_back(missing[i]);
    const json body = {{"model", cfg_.model_name}, {"input", input}};
    const json response = upstream(Capability::embedding, body);
    const json& data = response_data(response, end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const json& item = data[i - begin];
      resolved[missing[i]] = parse_embedding(item);
      // Cache per text so later batches with different composition still hit.
      const json single = {{"model", cfg_.model_name}, {"input", json::array({missing[i]})}};
      const json single_resp = {{"data", json::array({item})}};
      cache_.put(to_string(Capability::embedding),
                 request_digest(Capability::embedding, cfg_.model_name, single), single,
                 single_resp);
    }
  }

  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back({resolved.at(t), cfg_.model_name});
  return out;
}

std::string ProviderClient::complete(const std::string& prompt, const CompletionOptions& options) {
  if (prompt.empty()) throw InvalidArgument("complete: empty prompt");
  if (!(options.temperature >= 0.0)) throw InvalidArgument("complete: temperature must be >= 0");
  const json body = {{"model", cfg_.model_name},
                     {"prompt", prompt},
                     {"temperature", options.temperature},
                     {"max_tokens", options.max_tokens}};
  const json response = cached_call(Capability::completion, body, options.temperature == 0.0);

  if (auto r = response.find("refusal"); r != response.end() && r->is_string()) {
    throw ProviderRefusal("completion refused: " + r->get<std::string>());
  }
  if (auto t = response.find("text"); t != response.end() && t->is_string()) {
    return t->get<std::string>();
  }
  if (auto c = response.find("choices"); c != response.end() && c->is_array() && !c->empty()) {
    const json& choice = (*c)[0];
    if (choice.value("finish_reason", "") == "content_filter") {
      throw ProviderRefusal("completion refused by content filter");
    }
    if (auto t = choice.find("text"); t != choice.end() && t->is_string()) {
      return t->get<std::string>();
    }
    if (auto m = choice.find("message"); m != choice.end() && m->is_object()) {
      if (auto r = m->find("refusal"); r != m->end() && r->is_string()) {
        throw ProviderRefusal("completion refused: " + r->get<std::string>());
      }
      if (auto t = m->find("content"); t != m->end() && t->is_string()) {
        return t->get<std::string>();
      }
    }
  }
  throw ProviderError("completion response has no text");
}

ScoreResult ProviderClient::score_output(const std::string& prefix, const std::string& target) {
  if (prefix.empty() || target.empty()) {
    throw InvalidArgument("score_output: prefix and target must be non-empty");
  }
  const json body = {{"model", cfg_.model_name},
                     {"prompt", prefix},
                     {"echo_target", target},
                     {"logprobs", true}};
  const json response = cached_call(Capability::scoring, body, true);

  const json* lps = nullptr;
  if (auto it = response.find("token_logprobs"); it != response.end()) {
    lps = &*it;
  } else if (auto lp = response.find("logprobs"); lp != response.end() && lp->is_object()) {
    if (auto it2 = lp->find("token_logprobs"); it2 != lp->end()) lps = &*it2;
  }
  if (!lps || !lps->is_array() || lps->empty()) {
    throw ProviderError("scoring response lacks a non-empty 'token_logprobs' array");
  }
  ScoreResult result;
  result.token_count = static_cast<int>(lps->size());
  for (const auto& v : *lps) {
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      throw ProviderError("scoring response has a non-finite logprob");
    }
    result.total_logprob += v.get<double>();
  }
  result.from_mock = transport_->is_mock();
  return result;
}

}  // namespace finre
