#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "finre/corpus.hpp"
#include "finre/providers.hpp"

namespace finre::testing {

inline std::filesystem::path data_dir() { return FINRE_TEST_DATA; }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("finre_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline REInstance make_instance(std::string id, std::vector<std::string> tokens, EntitySpan e1,
                                EntitySpan e2, std::string relation,
                                Split split = Split::train) {
  REInstance r;
  r.id = std::move(id);
  r.tokens = std::move(tokens);
  r.e1 = std::move(e1);
  r.e2 = std::move(e2);
  r.relation = std::move(relation);
  r.split = split;
  return r;
}

// Three-token "X verb Y" instance.
inline REInstance tiny(const std::string& id, const std::string& t1, const std::string& t2,
                       const std::string& relation, Split split = Split::train) {
  return make_instance(id, {"A" + id, "w", "B" + id}, {0, 1, t1}, {2, 3, t2}, relation, split);
}

inline EmbeddingVector ev(std::vector<double> v, std::string tag = "t") {
  return {std::move(v), std::move(tag)};
}

inline std::vector<double> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(dim);
  double n = 0.0;
  for (auto& x : v) {
    x = g(rng);
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

}  // namespace finre::testing
