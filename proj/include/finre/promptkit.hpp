#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "finre/corpus.hpp"

namespace finre {

enum class DemoOrigin { retrieved, random_class };

struct DemoExample {
  std::string instance_id;
  std::string rendered_input;
  std::string label_text;
  DemoOrigin origin = DemoOrigin::retrieved;
};

/// Context with entity markers, e.g. "[E1]Acme[/E1] bought [E2]Beta[/E2]".
/// With a label, a second line "Relation: <label>" follows.
std::string render_instance(const REInstance& inst, bool with_label);

/// The final prompt block: the unlabeled instance followed by an open "Relation:" slot.
std::string render_test_block(const REInstance& inst);

DemoExample make_demo(const REInstance& inst, DemoOrigin origin);

/// Prompt template with the placeholders {task_description}, {classes},
/// {demos} and {test_input}. {test_input} must be the last thing in the
/// template (trailing whitespace aside).
class PromptTemplate {
 public:
  explicit PromptTemplate(std::string text);

  static PromptTemplate builtin();
  static PromptTemplate from_file(const std::filesystem::path& path);

  const std::string& text() const { return text_; }
  /// "tpl-" + first 12 hex chars of the content digest.
  const std::string& version() const { return version_; }

  std::string render(const std::string& task_description, const std::string& classes,
                     const std::string& demos, const std::string& test_input) const;

 private:
  std::string text_;
  std::string version_;
};

extern const char* const kDefaultTaskDescription;

enum class DemoOrder {
  random_first,     // random-class groups, then retrieved demos (most similar adjacent to test)
  retrieved_first,  // retrieved demos (ascending similarity), then random-class groups
};

DemoOrder parse_demo_order(const std::string& name);
const char* to_string(DemoOrder o);

struct PromptOptions {
  DemoOrder order = DemoOrder::random_first;
  std::size_t token_budget = 0;  // 0: unlimited
  std::string task_description = kDefaultTaskDescription;
};

struct PromptBundle {
  std::string text;
  std::vector<std::string> demo_ids;  // in prompt order
  std::vector<std::string> permissible;
  std::string test_id;
  std::string template_version;
  std::size_t token_estimate = 0;
  std::size_t dropped_demos = 0;
};

/// ceil(chars / 4)
std::size_t estimate_tokens(const std::string& text);

/// Assemble the prompt for one test instance. `retrieved` is in retrieval
/// rank (most similar first); random demos come from sample_by_relation for
/// every relation permissible for the test's type pair, excluding the test
/// instance and the retrieved ids. Throws UnknownTypePair, or InvalidArgument
/// when a retrieved demo duplicates, is the test instance, or carries a label
/// outside the permissible set.
PromptBundle build_prompt(const REInstance& test, const std::vector<DemoExample>& retrieved,
                          const Corpus& corpus, std::size_t r_per_class, std::uint64_t seed,
                          const PromptTemplate& tpl, const PromptOptions& options = {});

enum class ParseStatus { exact, normalized, fallback, error, unknown_type_pair };

const char* to_string(ParseStatus s);
ParseStatus parse_status_from(const std::string& s);

struct ParsedRelation {
  std::string label;
  ParseStatus status = ParseStatus::fallback;
};

/// Normalized form used for matching: lowercase, known answer prefixes
/// removed, punctuation other than '_' removed, whitespace runs -> '_'.
std::string normalize_label(const std::string& text);

/// Map a completion onto the permissible set. Only the first non-blank line
/// is considered. Unmatched text falls back to no_relation.
ParsedRelation parse_relation(const std::string& completion,
                              const std::set<std::string>& permissible);

}  // namespace finre
