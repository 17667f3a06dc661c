#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace finre {

inline constexpr const char* kNoRelation = "no_relation";

enum class Split { train, test };

const char* to_string(Split s);

struct EntitySpan {
  std::size_t start = 0;  // inclusive token index
  std::size_t end = 0;    // exclusive token index
  std::string type;
};

/// Ordered (e1_type, e2_type). Relations are directional so (A,B) != (B,A).
using TypePair = std::pair<std::string, std::string>;

std::string to_string(const TypePair& p);

struct REInstance {
  std::string id;
  std::vector<std::string> tokens;
  EntitySpan e1;
  EntitySpan e2;
  std::string relation;
  Split split = Split::train;

  TypePair type_pair() const { return {e1.type, e2.type}; }
};

/// Throws SpanOutOfBounds / DataError if the instance breaks a structural invariant.
void validate_instance(const REInstance& inst);

struct RelationSchema {
  std::map<TypePair, std::set<std::string>> entries;
  std::set<std::string> all_relations;

  bool operator==(const RelationSchema&) const = default;
};

/// Derive the type-pair -> relation table from labeled instances. Every entry
/// gets no_relation.
RelationSchema derive_schema(const std::vector<REInstance>& instances);

/// Merge an override table into a derived schema. Override entries replace
/// derived entries for the same pair; no_relation is still forced in.
RelationSchema apply_schema_override(RelationSchema base, const RelationSchema& overrides);

/// JSON object { "ORG|PER": ["rel", ...], ... }.
RelationSchema load_schema_file(const std::filesystem::path& path);
void save_schema_file(const RelationSchema& schema, const std::filesystem::path& path);

/// Throws UnknownTypePair when the pair has no entry.
const std::set<std::string>& permissible_relations(const RelationSchema& schema,
                                                    const std::string& t1,
                                                    const std::string& t2);

enum class CorpusFormat { canonical, refind_native };

CorpusFormat parse_corpus_format(const std::string& name);

/// Source-field names for the refind_native adapter. Defaults follow the
/// TACRED-style layout REFinD ships with.
struct FieldMapping {
  std::string id = "id";
  std::string tokens = "token";
  std::string e1_start = "e1_start";
  std::string e1_end = "e1_end";
  std::string e2_start = "e2_start";
  std::string e2_end = "e2_end";
  std::string e1_type = "e1_type";
  std::string e2_type = "e2_type";
  std::string relation = "relation";
  bool inclusive_end = true;
};

/// Read instances from a canonical JSON Lines file or a refind_native file
/// (JSON array or JSON Lines). Record order is preserved.
std::vector<REInstance> load_instances(const std::filesystem::path& path, CorpusFormat format,
                                       Split split, const FieldMapping& mapping = {});

void save_canonical(const std::vector<REInstance>& instances, const std::filesystem::path& path);

/// Instances plus the schema and sampling indexes derived from the train split.
/// Immutable after construction.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<REInstance> instances);
  Corpus(std::vector<REInstance> instances, const RelationSchema& schema_override);

  const std::vector<REInstance>& instances() const { return instances_; }
  const RelationSchema& schema() const { return schema_; }

  const REInstance& at(const std::string& id) const;
  const REInstance* find(const std::string& id) const;
  bool contains(const std::string& id) const { return find(id) != nullptr; }

  std::vector<const REInstance*> split(Split s) const;

  /// Train ids per type pair, in record order.
  const std::map<TypePair, std::vector<std::string>>& by_type_pair() const { return by_type_pair_; }
  /// Train ids per (type pair, relation), in record order.
  const std::map<std::pair<TypePair, std::string>, std::vector<std::string>>& by_relation() const {
    return by_relation_;
  }

 private:
  void build(const RelationSchema* schema_override);

  std::vector<REInstance> instances_;
  RelationSchema schema_;
  std::unordered_map<std::string, std::size_t> position_;
  std::map<TypePair, std::vector<std::string>> by_type_pair_;
  std::map<std::pair<TypePair, std::string>, std::vector<std::string>> by_relation_;
};

/// Single-split convenience loader; all instances are tagged train.
Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format,
                   const FieldMapping& mapping = {});

/// Up to n distinct train instances of the given pair and relation, none in
/// exclude. The draw is seeded from (seed, type_pair, relation) only, so other
/// classes never perturb it.
std::vector<const REInstance*> sample_by_relation(const Corpus& corpus, const TypePair& type_pair,
                                                  const std::string& relation, std::size_t n,
                                                  std::uint64_t seed,
                                                  const std::unordered_set<std::string>& exclude);

}  // namespace finre
