#pragma once

#include <array>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace finre {

/// Content-addressed response cache.
///
/// Layout: <root>/<namespace>/<first 2 hex chars>/<digest>.json, each file
/// holding {request, response, created_at}. Entries are written to a temp file
/// and renamed into place, so readers never see a partial entry. With an empty
/// root the cache lives in memory only.
class DiskCache {
 public:
  explicit DiskCache(std::filesystem::path root = {});

  std::optional<nlohmann::json> get(const std::string& ns, const std::string& digest) const;
  void put(const std::string& ns, const std::string& digest, const nlohmann::json& request,
           const nlohmann::json& response);

  std::filesystem::path entry_path(const std::string& ns, const std::string& digest) const;
  bool persistent() const { return !root_.empty(); }

 private:
  std::mutex& stripe(const std::string& digest) const;

  std::filesystem::path root_;
  mutable std::array<std::mutex, 16> stripes_;
  mutable std::mutex mem_mu_;
  std::unordered_map<std::string, nlohmann::json> memory_;
};

}  // namespace finre
