#include "finre/vector_index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <queue>

#include "finre/errors.hpp"

namespace finre {

namespace {

constexpr char kMagic[4] = {'F', 'R', 'I', 'X'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "index serialization assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("truncated " + what);
  return v;
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

VectorIndex::VectorIndex(const std::vector<std::pair<std::string, EmbeddingVector>>& items) {
  if (items.empty()) throw DataError("build_index: no items");
  dim_ = items.front().second.dim();
  model_tag_ = items.front().second.model_tag;
  if (dim_ == 0) throw DimensionMismatch("build_index: zero-length vector for " + items[0].first);
  ids_.reserve(items.size());
  data_.reserve(items.size() * dim_);
  norms_.reserve(items.size());
  for (const auto& [id, vec] : items) {
    if (vec.dim() != dim_) {
      throw DimensionMismatch("build_index: '" + id + "' has dim " + std::to_string(vec.dim()) +
                              ", expected " + std::to_string(dim_));
    }
    add(id, vec.values);
  }
}

void VectorIndex::add(const std::string& id, std::span<const double> values) {
  const double n = std::sqrt(dot(values, values));
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw ZeroVector("vector for '" + id + "' has zero or non-finite norm");
  }
  if (!pos_.emplace(id, ids_.size()).second) throw DuplicateId("duplicate index id '" + id + "'");
  ids_.push_back(id);
  data_.insert(data_.end(), values.begin(), values.end());
  norms_.push_back(n);
}

std::optional<std::size_t> VectorIndex::position(const std::string& id) const {
  auto it = pos_.find(id);
  if (it == pos_.end()) return std::nullopt;
  return it->second;
}

std::vector<Neighbor> VectorIndex::query(std::span<const double> q, std::size_t k,
                                         const IdSet& exclude) const {
  if (q.size() != dim_) {
    throw DimensionMismatch("query has dim " + std::to_string(q.size()) + ", index has " +
                            std::to_string(dim_));
  }
  if (k == 0) throw InvalidArgument("query: k must be >= 1");
  const double qn = std::sqrt(dot(q, q));
  if (!(qn > 0.0)) throw ZeroVector("query vector has zero norm");

  // Worst-ranked candidate on top, so it is the one evicted.
  const auto cmp = [](const Neighbor& a, const Neighbor& b) { return ranks_before(a, b); };
  std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(cmp)> heap(cmp);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!exclude.empty() && exclude.contains(ids_[i])) continue;
    Neighbor cand{ids_[i], dot(q, vector(i)) / (qn * norms_[i])};
    if (heap.size() < k) {
      heap.push(std::move(cand));
    } else if (ranks_before(cand, heap.top())) {
      heap.pop();
      heap.push(std::move(cand));
    }
  }
  std::vector<Neighbor> out;
  out.reserve(heap.size());
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

VectorIndex VectorIndex::subset(const std::vector<std::string>& ids) const {
  VectorIndex out;
  out.dim_ = dim_;
  out.model_tag_ = model_tag_;
  out.ids_.reserve(ids.size());
  out.data_.reserve(ids.size() * dim_);
  for (const auto& id : ids) {
    auto p = position(id);
    if (!p) throw DataError("subset: id '" + id + "' not in index");
    out.add(id, vector(*p));
  }
  return out;
}

void VectorIndex::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(kMagic, 4);
    write_pod<std::uint32_t>(out, kVersion);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
    write_pod<std::uint64_t>(out, ids_.size());
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model_tag_.size()));
    out.write(model_tag_.data(), static_cast<std::streamsize>(model_tag_.size()));
    for (double v : data_) write_pod<float>(out, static_cast<float>(v));
  }
  std::ofstream ids(path.string() + ".ids");
  if (!ids) throw DataError("cannot write " + path.string() + ".ids");
  for (const auto& id : ids_) ids << id << '\n';
}

VectorIndex VectorIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path.string());
  const std::string what = "index file " + path.string();
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(what + ": bad magic");
  }
  if (read_pod<std::uint32_t>(in, what) != kVersion) throw DataError(what + ": unsupported version");
  const auto dim = read_pod<std::uint32_t>(in, what);
  const auto count = read_pod<std::uint64_t>(in, what);
  const auto tag_len = read_pod<std::uint32_t>(in, what);
  std::string tag(tag_len, '\0');
  if (!in.read(tag.data(), tag_len)) throw DataError(what + ": truncated model tag");

  const auto header_end = static_cast<std::uintmax_t>(in.tellg());
  const auto expected = header_end + count * dim * sizeof(float);
  if (std::filesystem::file_size(path) != expected) {
    throw DataError(what + ": size does not match count x dim (" + std::to_string(count) + " x " +
                    std::to_string(dim) + ")");
  }

  std::ifstream id_in(path.string() + ".ids");
  if (!id_in) throw MissingArtifact(path.string() + ".ids");
  std::vector<std::string> ids;
  for (std::string line; std::getline(id_in, line);) ids.push_back(line);
  if (ids.size() != count) {
    throw DataError(what + ": sidecar lists " + std::to_string(ids.size()) + " ids, header says " +
                    std::to_string(count));
  }

  VectorIndex out;
  out.dim_ = dim;
  out.model_tag_ = tag;
  std::vector<double> row(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    for (auto& v : row) v = read_pod<float>(in, what);
    out.add(ids[i], row);
  }
  return out;
}

}  // namespace finre
