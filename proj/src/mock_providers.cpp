#include "finre/mock_providers.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "finre/digest.hpp"
#include "finre/errors.hpp"

namespace finre {

using nlohmann::json;

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {

void require(Capability got, Capability want, const char* backend) {
  if (got != want) {
    throw CapabilityUnsupported(std::string(backend) + " does not serve " + to_string(got));
  }
}

std::string prompt_of(const json& body) {
  auto it = body.find("prompt");
  if (it == body.end() || !it->is_string()) throw ProviderError("request lacks 'prompt'");
  return it->get<std::string>();
}

}  // namespace

HashEmbeddingBackend::HashEmbeddingBackend(std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
  if (dim_ == 0) throw ConfigError("mock embedding dim must be positive");
}

std::vector<double> HashEmbeddingBackend::embed(const std::string& text) const {
  std::mt19937_64 rng(sha256_u64(std::to_string(seed_) + '\x1f' + text));
  std::vector<double> v(dim_);
  double norm2 = 0.0;
  for (auto& x : v) {
    // 53 random bits -> [0,1) -> [-1,1)
    x = static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= inv;
  return v;
}

json HashEmbeddingBackend::post(Capability cap, const json& body) {
  require(cap, Capability::embedding, "mock embedder");
  json data = json::array();
  for (const auto& t : body.at("input")) {
    data.push_back({{"embedding", embed(t.get<std::string>())}});
  }
  return {{"data", data}};
}

ScriptedCompletionBackend::ScriptedCompletionBackend(std::map<std::string, std::string> table,
                                                     std::string fallback)
    : table_(std::move(table)), fallback_(std::move(fallback)) {}

json ScriptedCompletionBackend::post(Capability cap, const json& body) {
  require(cap, Capability::completion, "scripted completion mock");
  auto it = table_.find(prompt_of(body));
  return {{"text", it == table_.end() ? fallback_ : it->second}};
}

GoldLeakCompletionBackend::GoldLeakCompletionBackend(std::map<std::string, std::string> test_blocks)
    : blocks_(std::move(test_blocks)) {}

json GoldLeakCompletionBackend::post(Capability cap, const json& body) {
  require(cap, Capability::completion, "gold-leak mock");
  std::string prompt = prompt_of(body);
  while (!prompt.empty() && std::isspace(static_cast<unsigned char>(prompt.back()))) {
    prompt.pop_back();
  }
  const auto sep = prompt.rfind("\n\n");
  const std::string tail = sep == std::string::npos ? prompt : prompt.substr(sep + 2);
  if (auto it = blocks_.find(tail); it != blocks_.end()) return {{"text", it->second}};
  for (const auto& [block, gold] : blocks_) {
    if (prompt.size() >= block.size() &&
        prompt.compare(prompt.size() - block.size(), block.size(), block) == 0) {
      return {{"text", gold}};
    }
  }
  return {{"text", "no relation"}};
}

std::vector<std::string> demo_labels_in(const std::string& prompt) {
  static const std::string kTag = "Relation: ";
  std::vector<std::string> out;
  std::istringstream in(prompt);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(kTag, 0) != 0) continue;
    std::string label = line.substr(kTag.size());
    while (!label.empty() && std::isspace(static_cast<unsigned char>(label.back()))) {
      label.pop_back();
    }
    if (!label.empty()) out.push_back(label);
  }
  return out;
}

json MajorityDemoCompletionBackend::post(Capability cap, const json& body) {
  require(cap, Capability::completion, "majority-of-demos mock");
  std::map<std::string, int> counts;
  for (const auto& l : demo_labels_in(prompt_of(body))) ++counts[l];
  if (counts.empty()) return {{"text", "no relation"}};
  // std::map iterates in ascending label order, so max_element keeps the smallest on ties.
  auto best = std::max_element(counts.begin(), counts.end(),
                               [](const auto& a, const auto& b) { return a.second < b.second; });
  return {{"text", best->first}};
}

json EditDistanceScoringBackend::post(Capability cap, const json& body) {
  require(cap, Capability::scoring, "edit-distance scoring mock");
  const auto labels = demo_labels_in(prompt_of(body));
  const std::string target = body.at("echo_target").get<std::string>();
  const std::string gold = labels.empty() ? std::string{} : labels.back();
  const double d = static_cast<double>(edit_distance(target, gold));
  return {{"token_logprobs", json::array({-d})}};
}

}  // namespace finre
