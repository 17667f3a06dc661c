#include "finre/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "finre/digest.hpp"
#include "finre/errors.hpp"

namespace finre {

using nlohmann::json;

const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::string to_string(const TypePair& p) { return p.first + "|" + p.second; }

void validate_instance(const REInstance& inst) {
  if (inst.id.empty()) throw DataError("instance with empty id");
  const auto check = [&](const EntitySpan& s, const char* name) {
    if (!(s.start < s.end && s.end <= inst.tokens.size())) {
      throw SpanOutOfBounds("instance " + inst.id + ": " + name + " span [" +
                            std::to_string(s.start) + "," + std::to_string(s.end) +
                            ") out of bounds for " + std::to_string(inst.tokens.size()) +
                            " tokens");
    }
    if (s.type.empty()) throw DataError("instance " + inst.id + ": " + name + " has empty type");
  };
  check(inst.e1, "e1");
  check(inst.e2, "e2");
  if (inst.e1.start == inst.e2.start && inst.e1.end == inst.e2.end) {
    throw SpanOutOfBounds("instance " + inst.id + ": e1 and e2 spans are identical");
  }
  if (inst.relation.empty()) throw DataError("instance " + inst.id + ": empty relation");
}

RelationSchema derive_schema(const std::vector<REInstance>& instances) {
  RelationSchema schema;
  for (const auto& inst : instances) {
    if (inst.split != Split::train) continue;
    auto& rels = schema.entries[inst.type_pair()];
    rels.insert(inst.relation);
    rels.insert(kNoRelation);
  }
  for (const auto& [pair, rels] : schema.entries) {
    schema.all_relations.insert(rels.begin(), rels.end());
  }
  return schema;
}

RelationSchema apply_schema_override(RelationSchema base, const RelationSchema& overrides) {
  for (const auto& [pair, rels] : overrides.entries) {
    auto& dst = base.entries[pair];
    dst = rels;
    dst.insert(kNoRelation);
  }
  base.all_relations.clear();
  for (const auto& [pair, rels] : base.entries) {
    base.all_relations.insert(rels.begin(), rels.end());
  }
  return base;
}

namespace {

TypePair split_pair_key(const std::string& key, const std::string& source) {
  const auto bar = key.find('|');
  if (bar == std::string::npos || bar == 0 || bar + 1 == key.size()) {
    throw DataError(source + ": schema key '" + key + "' is not of the form T1|T2");
  }
  return {key.substr(0, bar), key.substr(bar + 1)};
}

}  // namespace

RelationSchema load_schema_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw DataError(path.string() + ": schema must be a JSON object");
  RelationSchema overrides;
  for (const auto& [key, rels] : doc.items()) {
    if (!rels.is_array()) throw DataError(path.string() + ": entry '" + key + "' must be an array");
    auto& dst = overrides.entries[split_pair_key(key, path.string())];
    for (const auto& r : rels) {
      if (!r.is_string() || r.get<std::string>().empty()) {
        throw DataError(path.string() + ": entry '" + key + "' has a non-string relation");
      }
      dst.insert(r.get<std::string>());
    }
  }
  return apply_schema_override({}, overrides);
}

void save_schema_file(const RelationSchema& schema, const std::filesystem::path& path) {
  json doc = json::object();
  for (const auto& [pair, rels] : schema.entries) doc[to_string(pair)] = rels;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

const std::set<std::string>& permissible_relations(const RelationSchema& schema,
                                                    const std::string& t1,
                                                    const std::string& t2) {
  auto it = schema.entries.find({t1, t2});
  if (it == schema.entries.end()) {
    throw UnknownTypePair("unknown entity type pair (" + t1 + ", " + t2 + ")");
  }
  return it->second;
}

CorpusFormat parse_corpus_format(const std::string& name) {
  if (name == "canonical") return CorpusFormat::canonical;
  if (name == "refind_native") return CorpusFormat::refind_native;
  throw ConfigError("unknown corpus format '" + name + "' (expected canonical or refind_native)");
}

namespace {

struct RecordReader {
  const std::string& source;
  std::size_t line;
  const json& rec;

  const json& field(const std::string& name) const {
    auto it = rec.find(name);
    if (it == rec.end()) throw ParseError(source, line, name, "missing");
    return *it;
  }

  std::string str(const std::string& name) const {
    const auto& v = field(name);
    if (v.is_string()) return v.get<std::string>();
    // REFinD ids are sometimes numeric.
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw ParseError(source, line, name, "expected string");
  }

  std::size_t index(const std::string& name) const {
    const auto& v = field(name);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ParseError(source, line, name, "expected non-negative integer");
    }
    return static_cast<std::size_t>(v.get<long long>());
  }

  std::vector<std::string> tokens(const std::string& name) const {
    const auto& v = field(name);
    if (!v.is_array()) throw ParseError(source, line, name, "expected array of strings");
    std::vector<std::string> out;
    out.reserve(v.size());
    for (const auto& t : v) {
      if (!t.is_string()) throw ParseError(source, line, name, "expected array of strings");
      out.push_back(t.get<std::string>());
    }
    if (out.empty()) throw ParseError(source, line, name, "empty token list");
    return out;
  }
};

const std::vector<std::string> kCanonicalFields = {"id",     "tokens",  "e1_start",
                                                   "e1_end", "e2_start", "e2_end",
                                                   "e1_type", "e2_type", "relation"};

REInstance parse_canonical(const RecordReader& r, Split split) {
  for (const auto& [key, _] : r.rec.items()) {
    if (std::find(kCanonicalFields.begin(), kCanonicalFields.end(), key) ==
        kCanonicalFields.end()) {
      throw ParseError(r.source, r.line, key, "unexpected field in canonical record");
    }
  }
  REInstance inst;
  inst.id = r.str("id");
  inst.tokens = r.tokens("tokens");
  inst.e1 = {r.index("e1_start"), r.index("e1_end"), r.str("e1_type")};
  inst.e2 = {r.index("e2_start"), r.index("e2_end"), r.str("e2_type")};
  inst.relation = r.str("relation");
  inst.split = split;
  return inst;
}

REInstance parse_native(const RecordReader& r, Split split, const FieldMapping& m) {
  REInstance inst;
  inst.id = r.str(m.id);
  inst.tokens = r.tokens(m.tokens);
  const std::size_t bump = m.inclusive_end ? 1 : 0;
  inst.e1 = {r.index(m.e1_start), r.index(m.e1_end) + bump, r.str(m.e1_type)};
  inst.e2 = {r.index(m.e2_start), r.index(m.e2_end) + bump, r.str(m.e2_type)};
  inst.relation = r.str(m.relation);
  inst.split = split;
  return inst;
}

}  // namespace

std::vector<REInstance> load_instances(const std::filesystem::path& path, CorpusFormat format,
                                       Split split, const FieldMapping& mapping) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path.string());
  const std::string source = path.string();

  // (line number, record) pairs.
  std::vector<std::pair<std::size_t, json>> records;
  std::string first;
  {
    std::stringstream buf;
    buf << in.rdbuf();
    first = buf.str();
  }
  const auto nonspace = first.find_first_not_of(" \t\r\n");
  if (format == CorpusFormat::refind_native && nonspace != std::string::npos &&
      first[nonspace] == '[') {
    json arr;
    try {
      arr = json::parse(first);
    } catch (const json::exception& e) {
      throw ParseError(source, 1, "<document>", e.what());
    }
    std::size_t i = 0;
    for (auto& rec : arr) records.emplace_back(++i, std::move(rec));
  } else {
    std::istringstream lines(first);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        records.emplace_back(lineno, json::parse(line));
      } catch (const json::exception& e) {
        throw ParseError(source, lineno, "<record>", e.what());
      }
    }
  }

  std::vector<REInstance> out;
  out.reserve(records.size());
  std::unordered_set<std::string> seen;
  for (const auto& [lineno, rec] : records) {
    if (!rec.is_object()) throw ParseError(source, lineno, "<record>", "expected JSON object");
    RecordReader reader{source, lineno, rec};
    REInstance inst = format == CorpusFormat::canonical ? parse_canonical(reader, split)
                                                        : parse_native(reader, split, mapping);
    try {
      validate_instance(inst);
    } catch (const SpanOutOfBounds& e) {
      throw SpanOutOfBounds(source + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!seen.insert(inst.id).second) {
      throw DuplicateId(source + ":" + std::to_string(lineno) + ": duplicate id '" + inst.id + "'");
    }
    out.push_back(std::move(inst));
  }
  return out;
}

void save_canonical(const std::vector<REInstance>& instances, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& i : instances) {
    json rec = {{"id", i.id},           {"tokens", i.tokens},     {"e1_start", i.e1.start},
                {"e1_end", i.e1.end},   {"e2_start", i.e2.start}, {"e2_end", i.e2.end},
                {"e1_type", i.e1.type}, {"e2_type", i.e2.type},   {"relation", i.relation}};
    out << rec.dump() << '\n';
  }
}

Corpus::Corpus(std::vector<REInstance> instances) : instances_(std::move(instances)) {
  build(nullptr);
}

Corpus::Corpus(std::vector<REInstance> instances, const RelationSchema& schema_override)
    : instances_(std::move(instances)) {
  build(&schema_override);
}

void Corpus::build(const RelationSchema* schema_override) {
  position_.reserve(instances_.size());
  for (std::size_t i = 0; i < instances_.size(); ++i) {
    const auto& inst = instances_[i];
    validate_instance(inst);
    if (!position_.emplace(inst.id, i).second) {
      throw DuplicateId("duplicate id '" + inst.id + "'");
    }
  }
  schema_ = derive_schema(instances_);
  if (schema_override) schema_ = apply_schema_override(std::move(schema_), *schema_override);

  for (const auto& inst : instances_) {
    if (inst.split != Split::train) continue;
    by_type_pair_[inst.type_pair()].push_back(inst.id);
    by_relation_[{inst.type_pair(), inst.relation}].push_back(inst.id);
  }
}

const REInstance* Corpus::find(const std::string& id) const {
  auto it = position_.find(id);
  return it == position_.end() ? nullptr : &instances_[it->second];
}

const REInstance& Corpus::at(const std::string& id) const {
  const auto* p = find(id);
  if (!p) throw DataError("unknown instance id '" + id + "'");
  return *p;
}

std::vector<const REInstance*> Corpus::split(Split s) const {
  std::vector<const REInstance*> out;
  for (const auto& inst : instances_) {
    if (inst.split == s) out.push_back(&inst);
  }
  return out;
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format,
                   const FieldMapping& mapping) {
  return Corpus(load_instances(path, format, Split::train, mapping));
}

std::vector<const REInstance*> sample_by_relation(const Corpus& corpus, const TypePair& type_pair,
                                                  const std::string& relation, std::size_t n,
                                                  std::uint64_t seed,
                                                  const std::unordered_set<std::string>& exclude) {
  if (n == 0) return {};
  auto it = corpus.by_relation().find({type_pair, relation});
  if (it == corpus.by_relation().end()) return {};

  std::vector<const std::string*> pool;
  pool.reserve(it->second.size());
  for (const auto& id : it->second) {
    if (!exclude.contains(id)) pool.push_back(&id);
  }
  const std::size_t take = std::min(n, pool.size());

  std::mt19937_64 rng(sha256_u64(std::to_string(seed) + '\x1f' + type_pair.first + '\x1f' +
                                 type_pair.second + '\x1f' + relation));
  // Partial Fisher-Yates: the first `take` slots are the sample.
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }

  std::vector<const REInstance*> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(&corpus.at(*pool[i]));
  return out;
}

}  // namespace finre
