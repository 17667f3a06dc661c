#include "finre/promptkit.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "finre/digest.hpp"
#include "finre/errors.hpp"

namespace finre {

const char* const kDefaultTaskDescription =
    "Classify the relation between the two marked entities in the financial text. "
    "The first entity is wrapped in [E1] and [/E1], the second in [E2] and [/E2]. "
    "Answer with exactly one relation from the list of possible relations. "
    "If none of them holds between the two entities, answer \"no relation\".";

namespace {

const char* const kBuiltinTemplate =
    "{task_description}\n"
    "\n"
    "Possible relations: {classes}\n"
    "\n"
    "{demos}{test_input}";

const std::vector<std::string> kPlaceholders = {"{task_description}", "{classes}", "{demos}",
                                                "{test_input}"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string render_instance(const REInstance& inst, bool with_label) {
  // When spans share a boundary token, the outer span opens first and closes last.
  const bool e1_outer = inst.e1.start < inst.e2.start ||
                        (inst.e1.start == inst.e2.start && inst.e1.end >= inst.e2.end);
  std::string out;
  for (std::size_t i = 0; i < inst.tokens.size(); ++i) {
    if (i > 0) out += ' ';
    const bool o1 = inst.e1.start == i, o2 = inst.e2.start == i;
    if (o1 && o2) {
      out += e1_outer ? "[E1][E2]" : "[E2][E1]";
    } else if (o1) {
      out += "[E1]";
    } else if (o2) {
      out += "[E2]";
    }
    out += inst.tokens[i];
    const bool c1 = inst.e1.end == i + 1, c2 = inst.e2.end == i + 1;
    if (c1 && c2) {
      out += e1_outer ? "[/E2][/E1]" : "[/E1][/E2]";
    } else if (c1) {
      out += "[/E1]";
    } else if (c2) {
      out += "[/E2]";
    }
  }
  if (with_label) {
    out += "\nRelation: ";
    out += inst.relation;
  }
  return out;
}

std::string render_test_block(const REInstance& inst) {
  return render_instance(inst, false) + "\nRelation:";
}

DemoExample make_demo(const REInstance& inst, DemoOrigin origin) {
  return {inst.id, render_instance(inst, false), inst.relation, origin};
}

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
  for (const auto& p : kPlaceholders) {
    if (text_.find(p) == std::string::npos) {
      throw ConfigError("prompt template lacks placeholder " + p);
    }
  }
  const auto last = text_.rfind("{test_input}");
  if (text_.find_first_not_of(" \t\r\n", last + std::string("{test_input}").size()) !=
      std::string::npos) {
    throw ConfigError("prompt template must end with {test_input}");
  }
  version_ = "tpl-" + sha256_hex(text_).substr(0, 12);
}

PromptTemplate PromptTemplate::builtin() { return PromptTemplate(kBuiltinTemplate); }

PromptTemplate PromptTemplate::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return PromptTemplate(std::move(text));
}

std::string PromptTemplate::render(const std::string& task_description, const std::string& classes,
                                   const std::string& demos, const std::string& test_input) const {
  // Single left-to-right pass: placeholder-like text inside values is never expanded.
  std::string out;
  std::size_t pos = 0;
  while (pos < text_.size()) {
    const auto open = text_.find('{', pos);
    if (open == std::string::npos) {
      out.append(text_, pos, std::string::npos);
      break;
    }
    out.append(text_, pos, open - pos);
    const std::string* value = nullptr;
    std::size_t len = 0;
    for (const auto& p : kPlaceholders) {
      if (text_.compare(open, p.size(), p) == 0) {
        len = p.size();
        if (p == "{task_description}") value = &task_description;
        if (p == "{classes}") value = &classes;
        if (p == "{demos}") value = &demos;
        if (p == "{test_input}") value = &test_input;
        break;
      }
    }
    if (value) {
      out += *value;
      pos = open + len;
    } else {
      out += '{';
      pos = open + 1;
    }
  }
  return out;
}

DemoOrder parse_demo_order(const std::string& name) {
  if (name == "random_first") return DemoOrder::random_first;
  if (name == "retrieved_first") return DemoOrder::retrieved_first;
  throw ConfigError("unknown prompt order '" + name + "' (random_first | retrieved_first)");
}

const char* to_string(DemoOrder o) {
  return o == DemoOrder::random_first ? "random_first" : "retrieved_first";
}

std::size_t estimate_tokens(const std::string& text) { return (text.size() + 3) / 4; }

namespace {

std::string render_demo(const DemoExample& d) { return d.rendered_input + "\nRelation: " + d.label_text; }

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

PromptBundle build_prompt(const REInstance& test, const std::vector<DemoExample>& retrieved,
                          const Corpus& corpus, std::size_t r_per_class, std::uint64_t seed,
                          const PromptTemplate& tpl, const PromptOptions& options) {
  const auto pair = test.type_pair();
  const auto& permissible = permissible_relations(corpus.schema(), pair.first, pair.second);

  std::unordered_set<std::string> used{test.id};
  for (const auto& d : retrieved) {
    if (d.instance_id == test.id) {
      throw InvalidArgument("retrieved demos include the test instance " + test.id);
    }
    if (!used.insert(d.instance_id).second) {
      throw InvalidArgument("duplicate retrieved demo " + d.instance_id);
    }
    if (!permissible.contains(d.label_text)) {
      throw InvalidArgument("retrieved demo " + d.instance_id + " has label '" + d.label_text +
                            "' outside the permissible set of " + to_string(pair));
    }
  }

  // Random demos grouped by class in schema order.
  std::vector<std::vector<DemoExample>> groups;
  const std::unordered_set<std::string> exclude(used.begin(), used.end());
  for (const auto& rel : permissible) {
    std::vector<DemoExample> g;
    for (const auto* inst : sample_by_relation(corpus, pair, rel, r_per_class, seed, exclude)) {
      g.push_back(make_demo(*inst, DemoOrigin::random_class));
    }
    groups.push_back(std::move(g));
  }
  // Retrieved demos in ascending similarity: most similar sits last.
  std::vector<DemoExample> ascending(retrieved.rbegin(), retrieved.rend());

  const std::vector<std::string> classes(permissible.begin(), permissible.end());
  const std::string classes_text = join(classes, ", ");
  const std::string test_block = render_test_block(test);

  const auto assemble = [&](PromptBundle& b) {
    std::vector<const DemoExample*> ordered;
    const auto add_random = [&] {
      for (const auto& g : groups)
        for (const auto& d : g) ordered.push_back(&d);
    };
    const auto add_retrieved = [&] {
      for (const auto& d : ascending) ordered.push_back(&d);
    };
    if (options.order == DemoOrder::random_first) {
      add_random();
      add_retrieved();
    } else {
      add_retrieved();
      add_random();
    }
    std::string demos;
    b.demo_ids.clear();
    for (const auto* d : ordered) {
      demos += render_demo(*d);
      demos += "\n\n";
      b.demo_ids.push_back(d->instance_id);
    }
    b.text = tpl.render(options.task_description, classes_text, demos, test_block);
    b.token_estimate = estimate_tokens(b.text);
  };

  PromptBundle bundle;
  bundle.permissible = classes;
  bundle.test_id = test.id;
  bundle.template_version = tpl.version();
  assemble(bundle);

  if (options.token_budget > 0) {
    std::size_t next_class = 0;
    while (bundle.token_estimate > options.token_budget) {
      bool dropped = false;
      // Random-class demos go first, one per class in turn.
      for (std::size_t tries = 0; tries < groups.size() && !dropped; ++tries) {
        auto& g = groups[next_class];
        next_class = (next_class + 1) % groups.size();
        if (!g.empty()) {
          g.pop_back();
          dropped = true;
        }
      }
      if (!dropped && !ascending.empty()) {
        ascending.erase(ascending.begin());  // least similar
        dropped = true;
      }
      if (!dropped) break;
      ++bundle.dropped_demos;
      assemble(bundle);
    }
    if (bundle.dropped_demos > 0) {
      spdlog::info("prompt for {}: dropped {} demos to fit token budget {} (estimate {})", test.id,
                   bundle.dropped_demos, options.token_budget, bundle.token_estimate);
    }
  }
  return bundle;
}

const char* to_string(ParseStatus s) {
  switch (s) {
    case ParseStatus::exact: return "exact";
    case ParseStatus::normalized: return "normalized";
    case ParseStatus::fallback: return "fallback";
    case ParseStatus::error: return "error";
    case ParseStatus::unknown_type_pair: return "unknown_type_pair";
  }
  return "unknown";
}

ParseStatus parse_status_from(const std::string& s) {
  for (auto st : {ParseStatus::exact, ParseStatus::normalized, ParseStatus::fallback,
                  ParseStatus::error, ParseStatus::unknown_type_pair}) {
    if (s == to_string(st)) return st;
  }
  throw DataError("unknown parse_status '" + s + "'");
}

std::string normalize_label(const std::string& text) {
  static const std::vector<std::string> kPrefixes = {"relation:", "answer:", "the relation is"};
  std::string s = trim(text);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (bool stripped = true; stripped;) {
    stripped = false;
    for (const auto& p : kPrefixes) {
      if (s.rfind(p, 0) == 0) {
        s.erase(0, p.size());
        const auto b = s.find_first_not_of(" \t:");
        s.erase(0, b == std::string::npos ? s.size() : b);
        stripped = true;
      }
    }
  }
  std::string kept;
  for (unsigned char c : s) {
    if (std::ispunct(c) && c != '_') continue;
    kept += static_cast<char>(c);
  }
  std::string out;
  bool pending_space = false;
  for (unsigned char c : trim(kept)) {
    if (std::isspace(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) out += '_';
    pending_space = false;
    out += static_cast<char>(c);
  }
  return out;
}

ParsedRelation parse_relation(const std::string& completion,
                              const std::set<std::string>& permissible) {
  std::string line;
  {
    std::istringstream in(completion);
    for (std::string l; std::getline(in, l);) {
      if (!trim(l).empty()) {
        line = trim(l);
        break;
      }
    }
  }
  static const std::set<std::string> kNoRelationExact = {"no relation", "none", "no_relation"};
  if (kNoRelationExact.contains(line)) return {kNoRelation, ParseStatus::exact};
  if (permissible.contains(line)) return {line, ParseStatus::exact};

  const std::string norm = normalize_label(line);
  if (norm.empty()) return {kNoRelation, ParseStatus::fallback};
  if (norm == "no_relation" || norm == "none") return {kNoRelation, ParseStatus::normalized};
  for (const auto& label : permissible) {
    if (normalize_label(label) == norm) return {label, ParseStatus::normalized};
  }
  return {kNoRelation, ParseStatus::fallback};
}

}  // namespace finre
