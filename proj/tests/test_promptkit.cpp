#include <doctest.h>

#include <regex>

#include "finre/errors.hpp"
#include "finre/promptkit.hpp"
#include "test_util.hpp"

using namespace finre;
using namespace finre::testing;

namespace {

// ORG|ORG with classes {a, b, no_relation}, `per_class` train instances each.
Corpus abundant(int per_class = 10) {
  std::vector<REInstance> v;
  for (const char* rel : {"a", "b", "no_relation"}) {
    for (int i = 0; i < per_class; ++i) v.push_back(tiny(std::string(rel) + std::to_string(i), "ORG", "ORG", rel));
  }
  v.push_back(tiny("test", "ORG", "ORG", "a", Split::test));
  return Corpus(v);
}

std::vector<DemoExample> retrieved_from(const Corpus& c, std::vector<std::string> ids) {
  std::vector<DemoExample> out;
  for (const auto& id : ids) out.push_back(make_demo(c.at(id), DemoOrigin::retrieved));
  return out;
}

// Strip markers and the label line, giving back the plain tokens.
std::string unmark(std::string s) {
  s = s.substr(0, s.find("\nRelation:"));
  for (const char* m : {"[E1]", "[/E1]", "[E2]", "[/E2]"}) {
    for (auto p = s.find(m); p != std::string::npos; p = s.find(m)) s.erase(p, std::strlen(m));
  }
  return s;
}

}  // namespace

TEST_CASE("render examples") {
  const auto r = make_instance("x", {"Acme", "bought", "Beta"}, {0, 1, "ORG"}, {2, 3, "ORG"},
                               "acquired_by");
  CHECK(render_instance(r, true) == "[E1]Acme[/E1] bought [E2]Beta[/E2]\nRelation: acquired_by");
  CHECK(render_instance(r, false) == "[E1]Acme[/E1] bought [E2]Beta[/E2]");
  CHECK(render_test_block(r) == "[E1]Acme[/E1] bought [E2]Beta[/E2]\nRelation:");

  const auto rev = make_instance("y", {"Bo", "founded", "Acme", "Inc"}, {2, 4, "ORG"},
                                 {0, 1, "PER"}, "founder_of");
  CHECK(render_instance(rev, false) == "[E2]Bo[/E2] founded [E1]Acme Inc[/E1]");

  const auto nested = make_instance("z", {"Acme", "Bank", "of", "Ohio"}, {0, 4, "ORG"},
                                    {3, 4, "GPE"}, "r");
  CHECK(render_instance(nested, false) == "[E1]Acme Bank of [E2]Ohio[/E2][/E1]");
}

TEST_CASE("render round-trip recovers the tokens") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng() % 8;
    std::vector<std::string> toks;
    for (std::size_t i = 0; i < n; ++i) toks.push_back("w" + std::to_string(rng() % 50));
    std::size_t a = rng() % n, b = rng() % n;
    if (a == b) b = (a + 1) % n;
    const auto r = make_instance("x", toks, {a, a + 1, "T"}, {b, b + 1, "U"}, "rel");
    std::string joined;
    for (std::size_t i = 0; i < n; ++i) joined += (i ? " " : "") + toks[i];
    CHECK(unmark(render_instance(r, true)) == joined);
  }
}

TEST_CASE("five retrieved plus four per class with |O| = 3 gives 17 demos, test last") {
  const Corpus c = abundant();
  const auto retrieved = retrieved_from(c, {"a0", "b3", "a1", "no_relation2", "b1"});
  const auto bundle =
      build_prompt(c.at("test"), retrieved, c, 4, 7, PromptTemplate::builtin());
  CHECK(bundle.demo_ids.size() == 17);
  CHECK(bundle.permissible == std::vector<std::string>{"a", "b", "no_relation"});
  const std::string block = render_test_block(c.at("test"));
  REQUIRE(bundle.text.size() > block.size());
  CHECK(bundle.text.substr(bundle.text.size() - block.size()) == block);

  std::set<std::string> unique(bundle.demo_ids.begin(), bundle.demo_ids.end());
  CHECK(unique.size() == 17);
  CHECK_FALSE(unique.contains("test"));
  // Most similar retrieved demo sits right before the test block.
  CHECK(bundle.demo_ids.back() == "a0");
  CHECK(std::vector<std::string>(bundle.demo_ids.end() - 5, bundle.demo_ids.end()) ==
        std::vector<std::string>{"b1", "no_relation2", "a1", "b3", "a0"});

  // Count demo blocks in the text directly.
  std::size_t rel_lines = 0;
  for (auto p = bundle.text.find("\nRelation: "); p != std::string::npos;
       p = bundle.text.find("\nRelation: ", p + 1)) {
    ++rel_lines;
  }
  CHECK(rel_lines == 17);
}

TEST_CASE("scarce classes contribute what they have") {
  const Corpus c = abundant(2);
  const auto bundle = build_prompt(c.at("test"), retrieved_from(c, {"a0"}), c, 4, 7,
                                   PromptTemplate::builtin());
  CHECK(bundle.demo_ids.size() == 1 + 1 + 2 + 2);
}

TEST_CASE("zero-shot prompt") {
  const Corpus c = abundant();
  const auto bundle = build_prompt(c.at("test"), {}, c, 0, 7, PromptTemplate::builtin());
  CHECK(bundle.demo_ids.empty());
  CHECK(bundle.text == std::string(kDefaultTaskDescription) +
                           "\n\nPossible relations: a, b, no_relation\n\n" +
                           render_test_block(c.at("test")));
}

TEST_CASE("determinism and seed sensitivity") {
  const Corpus c = abundant();
  const auto r = retrieved_from(c, {"a0", "b3"});
  const auto p1 = build_prompt(c.at("test"), r, c, 3, 7, PromptTemplate::builtin());
  const auto p2 = build_prompt(c.at("test"), r, c, 3, 7, PromptTemplate::builtin());
  CHECK(p1.text == p2.text);
  CHECK(p1.demo_ids == p2.demo_ids);
  bool differs = false;
  for (std::uint64_t s = 0; s < 10 && !differs; ++s) {
    differs = build_prompt(c.at("test"), r, c, 3, s, PromptTemplate::builtin()).text != p1.text;
  }
  CHECK(differs);
}

TEST_CASE("retrieved_first order and token budget") {
  const Corpus c = abundant();
  const auto r = retrieved_from(c, {"a0", "b3", "a1"});
  PromptOptions o;
  o.order = DemoOrder::retrieved_first;
  const auto p = build_prompt(c.at("test"), r, c, 2, 7, PromptTemplate::builtin(), o);
  CHECK(std::vector<std::string>(p.demo_ids.begin(), p.demo_ids.begin() + 3) ==
        std::vector<std::string>{"a1", "b3", "a0"});

  const auto full = build_prompt(c.at("test"), r, c, 2, 7, PromptTemplate::builtin());
  PromptOptions tight;
  tight.token_budget = full.token_estimate - 1;
  const auto cut = build_prompt(c.at("test"), r, c, 2, 7, PromptTemplate::builtin(), tight);
  CHECK(cut.token_estimate <= tight.token_budget);
  CHECK(cut.dropped_demos >= 1);
  // Retrieved demos outlive the random ones.
  CHECK(std::vector<std::string>(cut.demo_ids.end() - 3, cut.demo_ids.end()) ==
        std::vector<std::string>{"a1", "b3", "a0"});

  PromptOptions tiny_budget;
  tiny_budget.token_budget = 1;
  const auto bare = build_prompt(c.at("test"), r, c, 2, 7, PromptTemplate::builtin(), tiny_budget);
  CHECK(bare.demo_ids.empty());
  CHECK(bare.dropped_demos == 9);
  CHECK(estimate_tokens("abcde") == 2);
}

TEST_CASE("build_prompt preconditions") {
  const Corpus c = abundant();
  CHECK_THROWS_AS(build_prompt(c.at("test"), {make_demo(c.at("test"), DemoOrigin::retrieved)}, c,
                               1, 7, PromptTemplate::builtin()),
                  InvalidArgument);
  CHECK_THROWS_AS(build_prompt(c.at("test"), retrieved_from(c, {"a0", "a0"}), c, 1, 7,
                               PromptTemplate::builtin()),
                  InvalidArgument);
  auto foreign = make_demo(c.at("a0"), DemoOrigin::retrieved);
  foreign.label_text = "zzz";
  CHECK_THROWS_AS(build_prompt(c.at("test"), {foreign}, c, 1, 7, PromptTemplate::builtin()),
                  InvalidArgument);
  const auto stray = tiny("q", "LOC", "LOC", "a", Split::test);
  CHECK_THROWS_AS(build_prompt(stray, {}, c, 1, 7, PromptTemplate::builtin()), UnknownTypePair);
}

TEST_CASE("templates") {
  const auto b = PromptTemplate::builtin();
  CHECK(std::regex_match(b.version(), std::regex("tpl-[0-9a-f]{12}")));
  const PromptTemplate custom("{task_description}|{classes}|{demos}{test_input}");
  CHECK(custom.version() != b.version());
  CHECK(custom.render("T", "C", "D", "X") == "T|C|DX");
  // Placeholders inside substituted values are left alone.
  CHECK(custom.render("{classes}", "C", "", "X") == "{classes}|C|X");
  CHECK_THROWS_AS(PromptTemplate("{classes}{demos}{test_input}"), ConfigError);
  CHECK(PromptTemplate::from_file(data_dir() / ".." / ".." / "templates" / "default.txt").version() ==
        b.version());
  CHECK_THROWS_AS(PromptTemplate::from_file(data_dir() / "no_such_template.txt"), MissingArtifact);
  CHECK_THROWS_AS(PromptTemplate("{task_description}{classes}{test_input}{demos}"), ConfigError);
}

TEST_CASE("parse_relation examples") {
  const std::set<std::string> perm = {"acquired_by", "no_relation"};
  auto check = [&](const std::string& in, const std::string& label, ParseStatus st) {
    const auto r = parse_relation(in, perm);
    CHECK_MESSAGE(r.label == label, in);
    CHECK_MESSAGE(r.status == st, in);
  };
  check("no relation", "no_relation", ParseStatus::exact);
  check("none", "no_relation", ParseStatus::exact);
  check("acquired_by", "acquired_by", ParseStatus::exact);
  check("The relation is: Acquired_By.", "acquired_by", ParseStatus::normalized);
  check("  Relation: acquired by\nsecond line", "acquired_by", ParseStatus::normalized);
  check("\"ACQUIRED_BY\"", "acquired_by", ParseStatus::normalized);
  check("purchaser", "no_relation", ParseStatus::fallback);
  check("", "no_relation", ParseStatus::fallback);
  check("No Relation.", "no_relation", ParseStatus::normalized);
  // Only the first non-blank line counts.
  check("\n\nfounder\nacquired_by", "no_relation", ParseStatus::fallback);
}

TEST_CASE("normalize_label is idempotent and parse outputs stay in the permissible set") {
  std::mt19937_64 rng(8);
  const std::string alphabet = "aB_ :.,\"'xyzRelation";
  const std::set<std::string> perm = {"acquired_by", "x_y", "no_relation"};
  for (int t = 0; t < 2000; ++t) {
    std::string s;
    const std::size_t n = rng() % 20;
    for (std::size_t i = 0; i < n; ++i) s += alphabet[rng() % alphabet.size()];
    const auto once = normalize_label(s);
    CHECK(normalize_label(once) == once);
    CHECK(perm.contains(parse_relation(s, perm).label));
  }
  for (auto st : {ParseStatus::exact, ParseStatus::normalized, ParseStatus::fallback,
                  ParseStatus::error, ParseStatus::unknown_type_pair}) {
    CHECK(parse_status_from(to_string(st)) == st);
  }
}
