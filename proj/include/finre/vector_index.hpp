#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "finre/providers.hpp"

namespace finre {

struct Neighbor {
  std::string id;
  double similarity = 0.0;  // cosine

  bool operator==(const Neighbor&) const = default;
};

/// Result order: similarity descending, then id ascending.
inline bool ranks_before(const Neighbor& a, const Neighbor& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.id < b.id;
}

using IdSet = std::unordered_set<std::string>;

/// Exact flat cosine index. Immutable after construction; concurrent queries
/// are safe.
class VectorIndex {
 public:
  VectorIndex() = default;

  /// Throws DimensionMismatch on non-uniform dims, ZeroVector on a zero (or
  /// non-finite) vector, DataError on empty input or duplicate ids.
  VectorIndex(const std::vector<std::pair<std::string, EmbeddingVector>>& items);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  const std::string& model_tag() const { return model_tag_; }

  const std::string& id(std::size_t i) const { return ids_[i]; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const double> vector(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  double norm(std::size_t i) const { return norms_[i]; }
  std::optional<std::size_t> position(const std::string& id) const;

  /// Top-k neighbors by cosine similarity, excluded ids never returned.
  std::vector<Neighbor> query(std::span<const double> q, std::size_t k,
                              const IdSet& exclude = {}) const;
  std::vector<Neighbor> query(const EmbeddingVector& q, std::size_t k,
                              const IdSet& exclude = {}) const {
    return query(std::span<const double>(q.values), k, exclude);
  }

  /// Index over the given ids (which must all be present), in the given order.
  /// An empty id list yields an empty index of the same dim.
  VectorIndex subset(const std::vector<std::string>& ids) const;

  /// Binary layout: "FRIX" magic, u32 version, u32 dim, u64 count, u32 tag
  /// length, tag bytes, then count*dim little-endian float32. Ids go to a
  /// sidecar "<path>.ids", one per line.
  void save(const std::filesystem::path& path) const;
  static VectorIndex load(const std::filesystem::path& path);

 private:
  void add(const std::string& id, std::span<const double> values);

  std::size_t dim_ = 0;
  std::string model_tag_;
  std::vector<std::string> ids_;
  std::vector<double> data_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::size_t> pos_;
};

inline VectorIndex build_index(const std::vector<std::pair<std::string, EmbeddingVector>>& items) {
  return VectorIndex(items);
}

double dot(std::span<const double> a, std::span<const double> b);

}  // namespace finre
