#include "finre/disk_cache.hpp"

#include <chrono>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include "finre/errors.hpp"

namespace finre {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

DiskCache::DiskCache(fs::path root) : root_(std::move(root)) {}

fs::path DiskCache::entry_path(const std::string& ns, const std::string& digest) const {
  return root_ / ns / digest.substr(0, 2) / (digest + ".json");
}

std::mutex& DiskCache::stripe(const std::string& digest) const {
  return stripes_[std::hash<std::string>{}(digest) % stripes_.size()];
}

std::optional<json> DiskCache::get(const std::string& ns, const std::string& digest) const {
  if (!persistent()) {
    std::lock_guard lock(mem_mu_);
    auto it = memory_.find(ns + "/" + digest);
    if (it == memory_.end()) return std::nullopt;
    return std::optional<json>(std::in_place, it->second);
  }
  const fs::path path = entry_path(ns, digest);
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    json entry = json::parse(in);
    return std::optional<json>(std::in_place, entry.at("response"));
  } catch (const json::exception&) {
    // Unreadable entries are treated as misses and overwritten on the next put.
    return std::nullopt;
  }
}

void DiskCache::put(const std::string& ns, const std::string& digest, const json& request,
                    const json& response) {
  if (!persistent()) {
    std::lock_guard lock(mem_mu_);
    memory_[ns + "/" + digest] = response;
    return;
  }
  std::lock_guard lock(stripe(digest));
  const fs::path path = entry_path(ns, digest);
  fs::create_directories(path.parent_path());
  json entry = {{"request", request}, {"response", response}, {"created_at", utc_now()}};
  std::ostringstream tid;
  tid << std::this_thread::get_id();
  const fs::path tmp = path.string() + ".tmp." + tid.str();
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write cache entry " + tmp.string());
    out << entry.dump() << '\n';
  }
  fs::rename(tmp, path);
}

}  // namespace finre
