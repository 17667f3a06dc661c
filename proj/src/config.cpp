#include "finre/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <toml.hpp>

#include "finre/digest.hpp"
#include "finre/errors.hpp"

namespace finre {

namespace fs = std::filesystem;
using nlohmann::json;

RetrieverKind parse_retriever_kind(const std::string& name) {
  if (name == "knn") return RetrieverKind::knn;
  if (name == "epr") return RetrieverKind::epr;
  if (name == "none") return RetrieverKind::none;
  throw ConfigError("unknown retriever.kind '" + name + "' (knn | epr | none)");
}

const char* to_string(RetrieverKind k) {
  switch (k) {
    case RetrieverKind::knn: return "knn";
    case RetrieverKind::epr: return "epr";
    case RetrieverKind::none: return "none";
  }
  return "unknown";
}

const std::string& default_config_toml() {
  static const std::string kDefaults = R"(seed = 7

[data]
train_path = ""
test_path = ""
format = "canonical"        # canonical | refind_native
schema_override = ""

[data.mapping]              # refind_native source field names
id = "id"
tokens = "token"
e1_start = "e1_start"
e1_end = "e1_end"
e2_start = "e2_start"
e2_end = "e2_end"
e1_type = "e1_type"
e2_type = "e2_type"
relation = "relation"
inclusive_end = true

[retriever]
kind = "knn"                # knn | epr | none
k_retrieved = 5
restrict_to_type_pair = true

[prompt]
r_per_class = 4
template = ""               # empty: built-in template
order = "random_first"      # random_first | retrieved_first
token_budget = 0            # 0: unlimited
task_description = ""       # empty: built-in description
allow_zero_shot = false
dump_prompts = false
max_tokens = 16

[epr]
candidates = 50
positives = 3
negatives = 10
scoring_mode = "sum"        # sum | per_token
epochs = 30
lr = 0.05
batch_size = 32
temperature = 0.1
in_batch_negatives = true
seed = 13

[providers]
cache_dir = "cache"         # relative paths resolve against run.output_dir
mock_completion = "majority"  # majority | gold_leak | constant
mock_constant_text = "no relation"
mock_embedding_dim = 256

[providers.embedding]
base_url = "https://api.openai.com/v1"
model = "text-embedding-ada-002"
api_key_env = "OPENAI_API_KEY"
max_parallel = 4
max_attempts = 3
base_delay_ms = 500
batch_size = 64
timeout_s = 60.0

[providers.completion]
base_url = "https://api.openai.com/v1"
model = "gpt-4"
api_key_env = "OPENAI_API_KEY"
max_parallel = 4
max_attempts = 3
base_delay_ms = 500
batch_size = 64
timeout_s = 60.0

[providers.scoring]
base_url = "http://127.0.0.1:8000/v1"
model = "gpt-neo-2.7B"
api_key_env = ""
max_parallel = 4
max_attempts = 3
base_delay_ms = 500
batch_size = 64
timeout_s = 120.0

[run]
output_dir = "runs/default"
max_failure_fraction = 0.05
)";
  return kDefaults;
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

void reject_api_keys(const toml::table& tbl, const std::string& prefix) {
  for (auto&& [k, v] : tbl) {
    const std::string key(k.str());
    if (lower(key) == "api_key") {
      throw ConfigError("config key '" + prefix + key +
                        "' is not allowed: API keys are read only from the environment "
                        "variable named by api_key_env");
    }
    if (const auto* sub = v.as_table()) reject_api_keys(*sub, prefix + key + ".");
  }
}

bool compatible(const toml::node& def, const toml::node& val) {
  if (def.type() == val.type()) return true;
  return def.is_floating_point() && val.is_integer();
}

void merge_into(toml::table& dst, const toml::table& src, const std::string& prefix) {
  for (auto&& [k, v] : src) {
    const std::string key(k.str());
    auto* existing = dst.get(key);
    if (!existing) throw ConfigError("unknown config key '" + prefix + key + "'");
    if (existing->is_table()) {
      const auto* sub = v.as_table();
      if (!sub) throw ConfigError("config key '" + prefix + key + "' must be a table");
      merge_into(*existing->as_table(), *sub, prefix + key + ".");
      continue;
    }
    if (!compatible(*existing, v)) {
      throw ConfigError("config key '" + prefix + key + "' has the wrong type");
    }
    if (existing->is_floating_point() && v.is_integer()) {
      dst.insert_or_assign(key, static_cast<double>(v.as_integer()->get()));
    } else {
      dst.insert_or_assign(key, v);
    }
  }
}

void apply_override(toml::table& root, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError("override '" + spec + "' is not of the form key=value");
  }
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);

  toml::table* tbl = &root;
  std::string leaf = path;
  for (std::size_t dot; (dot = leaf.find('.')) != std::string::npos;) {
    const std::string head = leaf.substr(0, dot);
    auto* next = tbl->get(head);
    if (!next || !next->is_table()) throw UsageError("unknown config key '" + path + "'");
    tbl = next->as_table();
    leaf = leaf.substr(dot + 1);
  }
  if (lower(leaf) == "api_key") {
    throw UsageError("override of 'api_key' is not allowed; use the api_key_env variable");
  }
  auto* existing = tbl->get(leaf);
  if (!existing || existing->is_table()) throw UsageError("unknown config key '" + path + "'");

  toml::table parsed;
  try {
    parsed = toml::parse("v = " + raw);
  } catch (const toml::parse_error&) {
    // Bare words are strings.
    parsed = toml::table{{"v", raw}};
  }
  const toml::node& v = *parsed.get("v");
  if (existing->is_string() && !v.is_string()) {
    parsed = toml::table{{"v", raw}};
  }
  toml::table wrapper;
  wrapper.insert_or_assign(leaf, *parsed.get("v"));
  try {
    merge_into(*tbl, wrapper, path.substr(0, path.size() - leaf.size()));
  } catch (const ConfigError&) {
    throw UsageError("override '" + spec + "' has the wrong type for '" + path + "'");
  }
}

json to_json(const toml::node& n) {
  if (const auto* t = n.as_table()) {
    json out = json::object();
    for (auto&& [k, v] : *t) out[std::string(k.str())] = to_json(v);
    return out;
  }
  if (const auto* a = n.as_array()) {
    json out = json::array();
    for (const auto& v : *a) out.push_back(to_json(v));
    return out;
  }
  if (const auto* s = n.as_string()) return s->get();
  if (const auto* i = n.as_integer()) return i->get();
  if (const auto* f = n.as_floating_point()) return f->get();
  if (const auto* b = n.as_boolean()) return b->get();
  throw ConfigError("unsupported value type in config");
}

std::size_t count_of(const json& j, const char* key) {
  const auto v = j.at(key).get<long long>();
  if (v < 0) throw ConfigError(std::string("config value '") + key + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

ProviderConfig provider_from(const json& j) {
  ProviderConfig p;
  p.base_url = j.at("base_url").get<std::string>();
  p.model_name = j.at("model").get<std::string>();
  p.api_key_env = j.at("api_key_env").get<std::string>();
  p.max_parallel = j.at("max_parallel").get<int>();
  p.retry.max_attempts = j.at("max_attempts").get<int>();
  p.retry.base_delay = std::chrono::milliseconds(j.at("base_delay_ms").get<long long>());
  p.embed_batch_size = count_of(j, "batch_size");
  p.timeout_seconds = j.at("timeout_s").get<double>();
  validate(p);
  return p;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

void set_output_dir(ExperimentConfig& cfg, const fs::path& dir) {
  cfg.output_dir = dir;
  const fs::path cache = cfg.cache_dir_setting.is_absolute() || cfg.cache_dir_setting.empty()
                             ? cfg.cache_dir_setting
                             : dir / cfg.cache_dir_setting;
  cfg.embedding.cache_dir = cfg.completion.cache_dir = cfg.scoring.cache_dir = cache;
}

void refresh_digest(ExperimentConfig& cfg) { cfg.digest = sha256_hex(cfg.echo.dump()); }

std::string section_digest(const json& echo, const std::vector<std::string>& keys) {
  json sub = json::object();
  for (const auto& k : keys) {
    const json::json_pointer ptr("/" + [&] {
      std::string s = k;
      std::replace(s.begin(), s.end(), '.', '/');
      return s;
    }());
    sub[k] = echo.contains(ptr) ? echo.at(ptr) : json();
  }
  return sha256_hex(sub.dump());
}

ExperimentConfig parse_config(const std::string& toml_text, const fs::path& base_dir,
                              const std::vector<std::string>& overrides) {
  toml::table root = toml::parse(default_config_toml());
  toml::table user;
  try {
    user = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config parse error at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }
  reject_api_keys(user, "");
  merge_into(root, user, "");
  for (const auto& o : overrides) apply_override(root, o);

  json all = to_json(root);
  ExperimentConfig cfg;
  try {
    cfg.seed = static_cast<std::uint64_t>(all.at("seed").get<long long>());

    const json& data = all.at("data");
    cfg.train_path = resolve(base_dir, data.at("train_path").get<std::string>());
    cfg.test_path = resolve(base_dir, data.at("test_path").get<std::string>());
    cfg.format = parse_corpus_format(data.at("format").get<std::string>());
    cfg.schema_override = resolve(base_dir, data.at("schema_override").get<std::string>());
    const json& m = data.at("mapping");
    cfg.mapping = {m.at("id"),       m.at("tokens"),  m.at("e1_start"),
                   m.at("e1_end"),   m.at("e2_start"), m.at("e2_end"),
                   m.at("e1_type"),  m.at("e2_type"),  m.at("relation"),
                   m.at("inclusive_end").get<bool>()};

    const json& r = all.at("retriever");
    cfg.retriever = parse_retriever_kind(r.at("kind").get<std::string>());
    cfg.k_retrieved = count_of(r, "k_retrieved");
    cfg.restrict_to_type_pair = r.at("restrict_to_type_pair").get<bool>();

    const json& p = all.at("prompt");
    cfg.r_per_class = count_of(p, "r_per_class");
    cfg.template_path = resolve(base_dir, p.at("template").get<std::string>());
    cfg.prompt.order = parse_demo_order(p.at("order").get<std::string>());
    cfg.prompt.token_budget = count_of(p, "token_budget");
    if (auto d = p.at("task_description").get<std::string>(); !d.empty()) {
      cfg.prompt.task_description = d;
    }
    cfg.allow_zero_shot = p.at("allow_zero_shot").get<bool>();
    cfg.dump_prompts = p.at("dump_prompts").get<bool>();
    cfg.max_tokens = p.at("max_tokens").get<int>();
    if (cfg.max_tokens < 1) throw ConfigError("prompt.max_tokens must be >= 1");

    const json& e = all.at("epr");
    cfg.epr_candidates = count_of(e, "candidates");
    cfg.epr_positives = count_of(e, "positives");
    cfg.epr_negatives = count_of(e, "negatives");
    if (cfg.epr_candidates < 2) throw ConfigError("epr.candidates must be >= 2");
    if (cfg.epr_positives < 1 || cfg.epr_negatives < 1) {
      throw ConfigError("epr.positives and epr.negatives must be >= 1");
    }
    cfg.scoring_mode = parse_scoring_mode(e.at("scoring_mode").get<std::string>());
    cfg.adapter.epochs = e.at("epochs").get<int>();
    cfg.adapter.lr = e.at("lr").get<double>();
    cfg.adapter.batch_size = count_of(e, "batch_size");
    cfg.adapter.temperature = e.at("temperature").get<double>();
    cfg.adapter.in_batch_negatives = e.at("in_batch_negatives").get<bool>();
    cfg.adapter.seed = static_cast<std::uint64_t>(e.at("seed").get<long long>());
    validate(cfg.adapter);

    const json& pr = all.at("providers");
    cfg.embedding = provider_from(pr.at("embedding"));
    cfg.completion = provider_from(pr.at("completion"));
    cfg.scoring = provider_from(pr.at("scoring"));
    const auto mock = pr.at("mock_completion").get<std::string>();
    if (mock == "majority") {
      cfg.mock_completion = MockCompletion::majority;
    } else if (mock == "gold_leak") {
      cfg.mock_completion = MockCompletion::gold_leak;
    } else if (mock == "constant") {
      cfg.mock_completion = MockCompletion::constant;
    } else {
      throw ConfigError("unknown providers.mock_completion '" + mock +
                        "' (majority | gold_leak | constant)");
    }
    cfg.mock_constant_text = pr.at("mock_constant_text").get<std::string>();
    cfg.mock_embedding_dim = count_of(pr, "mock_embedding_dim");
    if (cfg.mock_embedding_dim == 0) throw ConfigError("providers.mock_embedding_dim must be > 0");

    const json& run = all.at("run");
    cfg.output_dir = run.at("output_dir").get<std::string>();
    cfg.max_failure_fraction = run.at("max_failure_fraction").get<double>();
    if (!(cfg.max_failure_fraction >= 0.0 && cfg.max_failure_fraction <= 1.0)) {
      throw ConfigError("run.max_failure_fraction must be in [0, 1]");
    }
    cfg.cache_dir_setting = pr.at("cache_dir").get<std::string>();
    set_output_dir(cfg, cfg.output_dir);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }

  if (cfg.k_retrieved + cfg.r_per_class == 0 && !cfg.allow_zero_shot) {
    throw ConfigError(
        "retriever.k_retrieved + prompt.r_per_class is 0; set prompt.allow_zero_shot = true "
        "for zero-shot prompts");
  }
  if (cfg.retriever == RetrieverKind::none && cfg.k_retrieved > 0) cfg.k_retrieved = 0;

  all["run"].erase("output_dir");
  all["providers"].erase("cache_dir");
  cfg.echo = std::move(all);
  cfg.digest = sha256_hex(cfg.echo.dump());
  return cfg;
}

ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw UsageError("config file not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path(), overrides);
}

}  // namespace finre
