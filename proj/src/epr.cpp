#include "finre/epr.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "finre/errors.hpp"
#include "finre/parallel.hpp"
#include "finre/promptkit.hpp"

namespace finre {

using nlohmann::json;

TypePairIndex::TypePairIndex(const VectorIndex& full, const Corpus& corpus) {
  std::map<TypePair, std::vector<std::string>> ids;
  for (const auto& id : full.ids()) {
    const auto* inst = corpus.find(id);
    if (!inst || inst->split != Split::train) continue;
    ids[inst->type_pair()].push_back(id);
  }
  for (const auto& [pair, list] : ids) parts_.emplace(pair, full.subset(list));
}

const VectorIndex* TypePairIndex::find(const TypePair& pair) const {
  auto it = parts_.find(pair);
  return it == parts_.end() ? nullptr : &it->second;
}

std::vector<std::string> mine_candidates(const Corpus& corpus, const TypePairIndex& index,
                                         const REInstance& anchor, std::size_t max_candidates) {
  if (anchor.split != Split::train) {
    throw InvalidArgument("mine_candidates: anchor " + anchor.id + " is not a train instance");
  }
  if (max_candidates < 2) throw InvalidArgument("mine_candidates: L must be >= 2");
  (void)corpus;
  const VectorIndex* part = index.find(anchor.type_pair());
  const auto pos = part ? part->position(anchor.id) : std::nullopt;
  if (!pos) throw DataError("mine_candidates: anchor " + anchor.id + " has no indexed embedding");

  const auto hits = part->query(part->vector(*pos), max_candidates, {anchor.id});
  if (hits.size() < 2) {
    throw InsufficientCandidates("anchor " + anchor.id + " has " + std::to_string(hits.size()) +
                                 " same-pair candidates, need at least 2");
  }
  std::vector<std::string> out;
  out.reserve(hits.size());
  for (const auto& h : hits) out.push_back(h.id);
  return out;
}

std::vector<std::string> mine_candidates(const Corpus& corpus, const VectorIndex& index,
                                         const REInstance& anchor, std::size_t max_candidates) {
  return mine_candidates(corpus, TypePairIndex(index, corpus), anchor, max_candidates);
}

ScoringMode parse_scoring_mode(const std::string& name) {
  if (name == "sum") return ScoringMode::sum;
  if (name == "per_token") return ScoringMode::per_token;
  throw ConfigError("unknown scoring mode '" + name + "' (sum | per_token)");
}

const char* to_string(ScoringMode m) { return m == ScoringMode::sum ? "sum" : "per_token"; }

std::string scoring_prefix(const REInstance& candidate, const REInstance& anchor) {
  return render_instance(candidate, true) + "\n\n" + render_test_block(anchor);
}

std::vector<ScoredCandidate> score_candidates(ProviderClient& scorer, const Corpus& corpus,
                                              const REInstance& anchor,
                                              const std::vector<std::string>& candidates,
                                              ScoringMode mode) {
  if (candidates.empty()) throw InvalidArgument("score_candidates: no candidates");
  std::vector<ScoredCandidate> out(candidates.size());
  parallel_for(candidates.size(), static_cast<std::size_t>(scorer.config().max_parallel),
               [&](std::size_t i) {
                 const auto& cand = corpus.at(candidates[i]);
                 ScoreResult r;
                 try {
                   r = scorer.score_output(scoring_prefix(cand, anchor), anchor.relation);
                 } catch (const CapabilityUnsupported& e) {
                   throw CapabilityUnsupported(std::string(e.what()) + " (candidate " + cand.id +
                                               ", anchor " + anchor.id + ")");
                 } catch (const ProviderError& e) {
                   throw ProviderError(std::string(e.what()) + " (candidate " + cand.id +
                                       ", anchor " + anchor.id + ")");
                 }
                 const double score = mode == ScoringMode::sum
                                          ? r.total_logprob
                                          : r.total_logprob / static_cast<double>(r.token_count);
                 out[i] = {cand.id, score};
               });
  return out;
}

std::vector<TrainingPair> label_pairs(const std::vector<ScoredCandidate>& scored,
                                      const std::string& anchor_id, std::size_t positives,
                                      std::size_t negatives) {
  if (positives < 1 || negatives < 1 || positives + negatives > scored.size()) {
    throw InvalidArgument("label_pairs: need p >= 1, n >= 1, p + n <= " +
                          std::to_string(scored.size()) + " (got p=" + std::to_string(positives) +
                          ", n=" + std::to_string(negatives) + ")");
  }
  std::vector<const ScoredCandidate*> ranked;
  ranked.reserve(scored.size());
  for (const auto& s : scored) {
    if (s.candidate_id == anchor_id) {
      throw InvalidArgument("label_pairs: anchor " + anchor_id + " is among its own candidates");
    }
    if (!std::isfinite(s.score)) {
      throw InvalidArgument("label_pairs: non-finite score for " + s.candidate_id);
    }
    ranked.push_back(&s);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto* a, const auto* b) {
    if (a->score != b->score) return a->score > b->score;
    return a->candidate_id < b->candidate_id;
  });

  std::vector<std::string> neg;
  for (std::size_t i = ranked.size() - negatives; i < ranked.size(); ++i) {
    neg.push_back(ranked[i]->candidate_id);
  }
  std::vector<TrainingPair> out;
  for (std::size_t i = 0; i < positives; ++i) {
    out.push_back({anchor_id, ranked[i]->candidate_id, neg});
  }
  return out;
}

void save_pairs(const std::vector<TrainingPair>& pairs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& p : pairs) {
    out << json{{"anchor_id", p.anchor_id},
                {"positive_id", p.positive_id},
                {"negative_ids", p.negative_ids}}
               .dump()
        << '\n';
  }
}

std::vector<TrainingPair> load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path.string());
  std::vector<TrainingPair> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("anchor_id").get<std::string>(), j.at("positive_id").get<std::string>(),
                     j.at("negative_ids").get<std::vector<std::string>>()});
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, "<pair>", e.what());
    }
  }
  return out;
}

void validate(const AdapterTrainConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("epr.epochs must be >= 0");
  if (!(cfg.lr > 0.0)) throw ConfigError("epr.lr must be > 0");
  if (cfg.batch_size < 1) throw ConfigError("epr.batch_size must be >= 1");
  if (!(cfg.temperature > 0.0)) throw ConfigError("epr.temperature must be > 0");
}

AdapterModel AdapterModel::identity(std::size_t dim) {
  AdapterModel m;
  m.weights = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim),
                                        static_cast<Eigen::Index>(dim));
  return m;
}

namespace {

constexpr char kAdapterMagic[4] = {'F', 'R', 'A', 'D'};
constexpr std::uint32_t kAdapterVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "adapter serialization assumes a little-endian host");

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

void AdapterModel::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(kAdapterMagic, 4);
    write_pod<std::uint32_t>(out, kAdapterVersion);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dim()));
    write_pod<std::uint64_t>(out, seed);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(epochs));
    write_pod<double>(out, lr);
    for (Eigen::Index r = 0; r < weights.rows(); ++r)
      for (Eigen::Index c = 0; c < weights.cols(); ++c) write_pod<double>(out, weights(r, c));
  }
  std::ofstream meta(path.string() + ".meta.json");
  meta << json{{"loss_curve", loss_curve}, {"temperature", temperature}}.dump(2) << '\n';
}

AdapterModel AdapterModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path.string());
  const std::string what = "adapter file " + path.string();
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kAdapterMagic, 4) != 0) {
    throw DataError(what + ": bad magic");
  }
  if (read_pod<std::uint32_t>(in, what) != kAdapterVersion) {
    throw DataError(what + ": unsupported version");
  }
  AdapterModel m;
  const auto dim = read_pod<std::uint32_t>(in, what);
  m.seed = read_pod<std::uint64_t>(in, what);
  m.epochs = static_cast<int>(read_pod<std::uint32_t>(in, what));
  m.lr = read_pod<double>(in, what);
  const auto header = static_cast<std::uintmax_t>(in.tellg());
  if (std::filesystem::file_size(path) != header + std::uintmax_t{dim} * dim * sizeof(double)) {
    throw DataError(what + ": size does not match dim^2 for dim " + std::to_string(dim));
  }
  m.weights.resize(dim, dim);
  for (std::uint32_t r = 0; r < dim; ++r)
    for (std::uint32_t c = 0; c < dim; ++c) {
      const double v = read_pod<double>(in, what);
      if (!std::isfinite(v)) throw DataError(what + ": non-finite weight");
      m.weights(r, c) = v;
    }
  if (std::ifstream meta(path.string() + ".meta.json"); meta) {
    try {
      const json j = json::parse(meta);
      m.loss_curve = j.value("loss_curve", std::vector<double>{});
      m.temperature = j.value("temperature", m.temperature);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ".meta.json: " + e.what());
    }
  }
  return m;
}

double info_nce_loss(double positive_logit, std::span<const double> negative_logits) {
  double mx = positive_logit;
  for (double l : negative_logits) mx = std::max(mx, l);
  double sum = std::exp(positive_logit - mx);
  for (double l : negative_logits) sum += std::exp(l - mx);
  return mx + std::log(sum) - positive_logit;
}

namespace {

struct Projected {
  Eigen::VectorXd raw;
  Eigen::VectorXd proj;
  double norm = 0.0;
};

const EmbeddingVector& lookup(const EmbeddingTable& table, const std::string& id) {
  auto it = table.find(id);
  if (it == table.end()) throw DataError("no embedding for id '" + id + "'");
  return it->second;
}

Eigen::Map<const Eigen::VectorXd> as_vector(const EmbeddingVector& e) {
  return {e.values.data(), static_cast<Eigen::Index>(e.values.size())};
}

/// Candidate ids for pair i of a batch: positive first, then explicit
/// negatives, then other pairs' positives when in-batch negatives are on.
std::vector<std::string> candidates_for(std::span<const TrainingPair> batch, std::size_t i,
                                        bool in_batch) {
  const auto& p = batch[i];
  std::vector<std::string> out;
  out.push_back(p.positive_id);
  out.insert(out.end(), p.negative_ids.begin(), p.negative_ids.end());
  if (in_batch) {
    for (std::size_t j = 0; j < batch.size(); ++j) {
      if (j == i || batch[j].anchor_id == p.anchor_id) continue;  // same-anchor positives are not negatives
      const auto& other = batch[j].positive_id;
      if (other == p.anchor_id || std::find(out.begin(), out.end(), other) != out.end()) continue;
      out.push_back(other);
    }
  }
  return out;
}

double loss_and_grad(const Eigen::MatrixXd& W, std::span<const TrainingPair> batch,
                     const EmbeddingTable& embeddings, const AdapterTrainConfig& cfg,
                     Eigen::MatrixXd* grad) {
  if (batch.empty()) throw InvalidArgument("empty training batch");
  const Eigen::Index dim = W.rows();

  // Project each distinct id once, in first-seen order.
  std::map<std::string, Projected> cache;
  const auto get = [&](const std::string& id) -> const Projected& {
    auto it = cache.find(id);
    if (it != cache.end()) return it->second;
    const auto& e = lookup(embeddings, id);
    if (static_cast<Eigen::Index>(e.dim()) != dim) {
      throw DimensionMismatch("embedding for '" + id + "' has dim " + std::to_string(e.dim()) +
                              ", adapter has " + std::to_string(dim));
    }
    Projected p;
    p.raw = as_vector(e);
    p.proj = W * p.raw;
    p.norm = p.proj.norm();
    if (!(p.norm > 0.0)) throw ZeroVector("projection of '" + id + "' is zero");
    return cache.emplace(id, std::move(p)).first->second;
  };

  if (grad) grad->setZero(dim, dim);
  double total = 0.0;
  const double inv_t = 1.0 / cfg.temperature;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& pair = batch[i];
    if (pair.negative_ids.empty()) {
      throw InvalidArgument("training pair for " + pair.anchor_id + " has no negatives");
    }
    const auto cands = candidates_for(batch, i, cfg.in_batch_negatives);
    const Projected& a = get(pair.anchor_id);

    std::vector<double> cos(cands.size());
    std::vector<const Projected*> cp(cands.size());
    for (std::size_t j = 0; j < cands.size(); ++j) {
      cp[j] = &get(cands[j]);
      cos[j] = a.proj.dot(cp[j]->proj) / (a.norm * cp[j]->norm);
    }
    std::vector<double> logits(cos.size());
    for (std::size_t j = 0; j < cos.size(); ++j) logits[j] = cos[j] * inv_t;
    total += info_nce_loss(logits[0], std::span<const double>(logits).subspan(1));

    if (!grad) continue;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);

    Eigen::VectorXd d_anchor = Eigen::VectorXd::Zero(dim);
    for (std::size_t j = 0; j < cands.size(); ++j) {
      const double p = std::exp(logits[j] - mx) / z;
      const double d_logit = p - (j == 0 ? 1.0 : 0.0);
      const double d_cos = d_logit * inv_t;
      const Projected& c = *cp[j];
      // d cos(u,v)/du = v/(|u||v|) - cos * u/|u|^2, symmetric in v.
      d_anchor += d_cos * (c.proj / (a.norm * c.norm) - cos[j] * a.proj / (a.norm * a.norm));
      const Eigen::VectorXd d_c =
          d_cos * (a.proj / (a.norm * c.norm) - cos[j] * c.proj / (c.norm * c.norm));
      grad->noalias() += d_c * c.raw.transpose();
    }
    grad->noalias() += d_anchor * a.raw.transpose();
  }
  const double n = static_cast<double>(batch.size());
  if (grad) *grad /= n;
  return total / n;
}

}  // namespace

double batch_loss(const Eigen::MatrixXd& weights, std::span<const TrainingPair> batch,
                  const EmbeddingTable& embeddings, const AdapterTrainConfig& cfg) {
  return loss_and_grad(weights, batch, embeddings, cfg, nullptr);
}

Eigen::MatrixXd batch_gradient(const Eigen::MatrixXd& weights, std::span<const TrainingPair> batch,
                               const EmbeddingTable& embeddings, const AdapterTrainConfig& cfg,
                               double* loss_out) {
  Eigen::MatrixXd g;
  const double loss = loss_and_grad(weights, batch, embeddings, cfg, &g);
  if (loss_out) *loss_out = loss;
  return g;
}

AdapterModel train_adapter(const std::vector<TrainingPair>& pairs, const EmbeddingTable& embeddings,
                           const AdapterTrainConfig& cfg) {
  validate(cfg);
  std::size_t dim = 0;
  for (const auto& p : pairs) {
    for (const auto* id : {&p.anchor_id, &p.positive_id}) {
      const auto& e = lookup(embeddings, *id);
      if (dim == 0) dim = e.dim();
      if (e.dim() != dim) throw DimensionMismatch("embedding dims differ across training ids");
    }
    if (p.positive_id == p.anchor_id) {
      throw InvalidArgument("training pair positive equals anchor " + p.anchor_id);
    }
    for (const auto& n : p.negative_ids) lookup(embeddings, n);
  }
  if (dim == 0) {
    if (!embeddings.empty()) dim = embeddings.begin()->second.dim();
    if (cfg.epochs > 0 || dim == 0) throw InvalidArgument("train_adapter: no training pairs");
  }

  AdapterModel model = AdapterModel::identity(dim);
  model.epochs = cfg.epochs;
  model.lr = cfg.lr;
  model.seed = cfg.seed;
  model.temperature = cfg.temperature;

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  std::vector<TrainingPair> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(pairs[order[i]]);
      double loss = 0.0;
      const Eigen::MatrixXd g = batch_gradient(model.weights, batch, embeddings, cfg, &loss);
      if (!std::isfinite(loss) || !g.allFinite()) {
        throw TrainingDiverged("non-finite loss (lr=" + std::to_string(cfg.lr) +
                               ", epoch=" + std::to_string(epoch) +
                               ", batch=" + std::to_string(batch_no) + ")");
      }
      epoch_loss += loss * static_cast<double>(end - begin);
      model.weights -= cfg.lr * g;
    }
    epoch_loss /= static_cast<double>(order.size());
    model.loss_curve.push_back(epoch_loss);
    spdlog::debug("adapter epoch {}: loss {:.6f}", epoch, epoch_loss);
  }
  return model;
}

std::vector<double> project(const AdapterModel& adapter, std::span<const double> v) {
  if (v.size() != adapter.dim()) {
    throw DimensionMismatch("vector dim " + std::to_string(v.size()) + " vs adapter dim " +
                            std::to_string(adapter.dim()));
  }
  const Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(v.size()));
  const Eigen::VectorXd y = adapter.weights * x;
  return {y.data(), y.data() + y.size()};
}

VectorIndex project_index(const AdapterModel& adapter, const VectorIndex& index) {
  if (index.dim() != adapter.dim()) {
    throw DimensionMismatch("index dim " + std::to_string(index.dim()) + " vs adapter dim " +
                            std::to_string(adapter.dim()));
  }
  if (index.empty()) return index;
  std::vector<std::pair<std::string, EmbeddingVector>> items;
  items.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    items.push_back({index.id(i), {project(adapter, index.vector(i)), index.model_tag()}});
  }
  return VectorIndex(items);
}

std::vector<Neighbor> epr_retrieve(const AdapterModel& adapter, const VectorIndex& index,
                                   const EmbeddingVector& query, std::size_t k,
                                   const IdSet& exclude) {
  if (query.dim() != adapter.dim()) {
    throw DimensionMismatch("query dim " + std::to_string(query.dim()) + " vs adapter dim " +
                            std::to_string(adapter.dim()));
  }
  const VectorIndex projected = project_index(adapter, index);
  if (projected.empty()) return {};
  return projected.query(project(adapter, query.values), k, exclude);
}

}  // namespace finre
