#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dialvae/corpus.hpp"
#include "dialvae/error.hpp"
#include "dialvae/generation.hpp"
#include "dialvae/model.hpp"
#include "dialvae/rng.hpp"

namespace dialvae::evaluation {

using json = nlohmann::json;
using Tokens = std::vector<std::string>;

// ---------------------------------------------------------------------------
// Distances d(r, h) in [0, 1].

/// Sentence BLEU up to order n. Order 1 is unsmoothed; orders >= 2 use
/// (matches + 1) / (total + 1). Brevity penalty min(1, exp(1 - |r|/|h|)).
inline double dist_bleu(const Tokens& r, const Tokens& h, int n) {
  if (n < 1 || n > 4) throw ValidationError("dist_bleu: order must be in 1..4");
  if (r.empty() || h.empty()) {
    warn("dist_bleu: empty sentence scores 0");
    return 0.0;
  }
  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    std::map<std::vector<std::string>, int> ref_counts, hyp_counts;
    auto count = [k](const Tokens& s, auto& into) {
      for (std::size_t i = 0; i + static_cast<std::size_t>(k) <= s.size(); ++i)
        ++into[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                        s.begin() + static_cast<std::ptrdiff_t>(i) + k)];
    };
    count(r, ref_counts);
    count(h, hyp_counts);
    double matches = 0, total = 0;
    for (const auto& [g, c] : hyp_counts) {
      total += c;
      if (auto it = ref_counts.find(g); it != ref_counts.end()) matches += std::min(c, it->second);
    }
    double p = k == 1 ? matches / total : (matches + 1.0) / (total + 1.0);
    if (p <= 0.0) return 0.0;
    log_sum += std::log(p);
  }
  const double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(r.size()) / static_cast<double>(h.size())));
  return std::clamp(bp * std::exp(log_sum / n), 0.0, 1.0);
}

/// Word-vector lookup for the embedding-based distances.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;

  EmbeddingTable(std::unordered_map<std::string, std::vector<double>> rows, std::size_t dim)
      : rows_(std::move(rows)), dim_(dim) {
    for (const auto& [t, v] : rows_)
      if (v.size() != dim_) throw ValidationError("embedding table: row '" + t + "' has the wrong width");
  }

  static EmbeddingTable load(const std::filesystem::path& path, std::size_t dim = 0) {
    auto rows = corpus::read_embedding_file(path, dim);
    std::unordered_map<std::string, std::vector<double>> m;
    std::size_t d = dim;
    for (auto& [t, v] : rows) {
      d = v.size();
      m.emplace(t, std::move(v));
    }
    return EmbeddingTable(std::move(m), d);
  }

  std::size_t dim() const { return dim_; }
  const std::vector<double>* find(const std::string& t) const {
    auto it = rows_.find(t);
    return it == rows_.end() ? nullptr : &it->second;
  }

  /// The "<unk>" row when present, otherwise zeros.
  std::vector<double> unk() const {
    if (auto* v = find("<unk>")) return *v;
    return std::vector<double>(dim_, 0.0);
  }

 private:
  std::unordered_map<std::string, std::vector<double>> rows_;
  std::size_t dim_ = 0;
};

enum class BowMode { average, extrema };

/// Sentence vector from in-table tokens; the UNK vector when none are found.
inline std::vector<double> sentence_vector(const Tokens& s, BowMode mode, const EmbeddingTable& table) {
  std::vector<const std::vector<double>*> rows;
  for (const auto& t : s)
    if (auto* v = table.find(t)) rows.push_back(v);
  if (rows.empty()) return table.unk();
  std::vector<double> out(table.dim(), 0.0);
  for (std::size_t d = 0; d < table.dim(); ++d) {
    if (mode == BowMode::average) {
      double sum = 0;
      for (auto* r : rows) sum += (*r)[d];
      out[d] = sum / static_cast<double>(rows.size());
    } else {
      double best = 0;
      for (auto* r : rows)
        if (std::abs((*r)[d]) > std::abs(best)) best = (*r)[d];
      out[d] = best;
    }
  }
  return out;
}

/// (1 + cosine) / 2 between sentence vectors.
inline double dist_bow_embedding(const Tokens& r, const Tokens& h, BowMode mode, const EmbeddingTable& table) {
  const auto a = sentence_vector(r, mode, table), b = sentence_vector(h, mode, table);
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) {
    warn("embedding distance: zero sentence vector scores 0.5");
    return 0.5;
  }
  const double cos = std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
  return (1.0 + cos) / 2.0;
}

inline double dist_da(const std::optional<std::string>& r, const std::optional<std::string>& h) {
  if (!r || !h || r->empty() || h->empty()) throw ValidationError("dist_da: missing dialog act label");
  return *r == *h ? 1.0 : 0.0;
}

struct Utt {
  Tokens tokens;
  std::optional<std::string> act;
};

struct DistanceFn {
  enum class Kind { bleu, abow, ebow, da };
  Kind kind = Kind::bleu;
  int order = 4;                          // bleu only
  const EmbeddingTable* table = nullptr;  // abow / ebow

  std::string name() const {
    switch (kind) {
      case Kind::bleu: return "bleu" + std::to_string(order);
      case Kind::abow: return "abow";
      case Kind::ebow: return "ebow";
      case Kind::da: return "da";
    }
    return "?";
  }

  double operator()(const Utt& r, const Utt& h) const {
    switch (kind) {
      case Kind::bleu: return dist_bleu(r.tokens, h.tokens, order);
      case Kind::abow:
      case Kind::ebow:
        if (!table) throw ValidationError(name() + " distance needs an embedding table");
        return dist_bow_embedding(r.tokens, h.tokens, kind == Kind::abow ? BowMode::average : BowMode::extrema,
                                  *table);
      case Kind::da: return dist_da(r.act, h.act);
    }
    return 0.0;
  }
};

/// The distance families selected by a --metric value.
inline std::vector<DistanceFn> distances_for(const std::string& metric, const EmbeddingTable* table) {
  std::vector<DistanceFn> out;
  auto add_bleu = [&] {
    for (int n = 1; n <= 4; ++n) out.push_back({DistanceFn::Kind::bleu, n, nullptr});
  };
  if (metric == "bleu") add_bleu();
  else if (metric == "abow") out.push_back({DistanceFn::Kind::abow, 0, table});
  else if (metric == "ebow") out.push_back({DistanceFn::Kind::ebow, 0, table});
  else if (metric == "da") out.push_back({DistanceFn::Kind::da, 0, nullptr});
  else if (metric == "all") {
    add_bleu();
    out.push_back({DistanceFn::Kind::abow, 0, table});
    out.push_back({DistanceFn::Kind::ebow, 0, table});
    out.push_back({DistanceFn::Kind::da, 0, nullptr});
  } else {
    throw ValidationError("unknown metric '" + metric + "' (expected bleu|abow|ebow|da|all)");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generalized precision / recall.

struct PrecRecall {
  double precision = 0;
  double recall = 0;
};

/// d[j][i] = d(r_j, h_i). precision = mean_i max_j, recall = mean_j max_i.
inline PrecRecall prec_recall(const std::vector<std::vector<double>>& d) {
  if (d.empty() || d.front().empty()) throw ValidationError("prec_recall: need at least one reference and hypothesis");
  const std::size_t M = d.size(), N = d.front().size();
  PrecRecall pr;
  for (std::size_t i = 0; i < N; ++i) {
    double best = -1;
    for (std::size_t j = 0; j < M; ++j) best = std::max(best, d[j][i]);
    pr.precision += best;
  }
  for (std::size_t j = 0; j < M; ++j) {
    if (d[j].size() != N) throw ShapeError("prec_recall: ragged distance matrix");
    pr.recall += *std::max_element(d[j].begin(), d[j].end());
  }
  pr.precision /= static_cast<double>(N);
  pr.recall /= static_cast<double>(M);
  return pr;
}

inline PrecRecall prec_recall(const std::vector<Utt>& refs, const std::vector<Utt>& hyps, const DistanceFn& dist) {
  std::vector<std::vector<double>> d(refs.size(), std::vector<double>(hyps.size()));
  for (std::size_t j = 0; j < refs.size(); ++j)
    for (std::size_t i = 0; i < hyps.size(); ++i) d[j][i] = dist(refs[j], hyps[i]);
  return prec_recall(d);
}

// ---------------------------------------------------------------------------
// Reference sets.

struct ReferenceSet {
  std::size_t context_id = 0;
  std::vector<Utt> refs;

  /// Appends r unless a token-identical reference is already present.
  bool add(Utt r) {
    for (const auto& x : refs)
      if (x.tokens == r.tokens) return false;
    refs.push_back(std::move(r));
    return true;
  }
};

inline json to_json(const ReferenceSet& s) {
  json refs = json::array();
  for (const auto& r : s.refs) refs.push_back({{"tokens", r.tokens}, {"act", r.act ? json(*r.act) : json(nullptr)}});
  return {{"context_id", s.context_id}, {"refs", refs}};
}

inline Utt utt_from_json(const json& j) {
  Utt u;
  u.tokens = j.at("tokens").get<Tokens>();
  if (j.contains("act") && !j.at("act").is_null()) u.act = j.at("act").get<std::string>();
  return u;
}

template <class F>
void read_jsonl(const std::filesystem::path& path, F&& on_record) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON");
    }
    on_record(j);
  }
}

inline std::map<std::size_t, ReferenceSet> load_references(const std::filesystem::path& path) {
  std::map<std::size_t, ReferenceSet> out;
  read_jsonl(path, [&](const json& j) {
    ReferenceSet s;
    s.context_id = j.at("context_id").get<std::size_t>();
    for (const auto& r : j.at("refs")) s.add(utt_from_json(r));
    out[s.context_id] = std::move(s);
  });
  return out;
}

inline std::map<std::size_t, std::vector<Utt>> load_generations(const std::filesystem::path& path) {
  std::map<std::size_t, std::vector<Utt>> out;
  read_jsonl(path, [&](const json& j) {
    auto& hyps = out[j.at("context_id").get<std::size_t>()];
    for (const auto& h : j.at("hyps")) hyps.push_back(utt_from_json(h));
  });
  return out;
}

/// TF-IDF bag-of-words index over training contexts: tf is the raw count over
/// all context utterances, idf = log(N / df). Similarity between contexts is
/// 1(same topic) * 1(same floor of the last context utterance) * cosine.
class TfidfIndex {
 public:
  explicit TfidfIndex(const std::vector<corpus::ContextResponsePair>& train) : train_(&train) {
    std::unordered_map<std::string, std::size_t> df;
    for (const auto& p : train) {
      std::map<std::string, int> seen;
      for (const auto& u : p.context)
        for (const auto& t : u.tokens) seen[t] = 1;
      for (const auto& [t, _] : seen) ++df[t];
    }
    const double N = static_cast<double>(train.size());
    for (const auto& [t, n] : df) idf_[t] = std::log(N / static_cast<double>(n));
    for (const auto& p : train) vecs_.push_back(vectorize(p));
  }

  /// Sparse weights sorted by token, plus the norm.
  struct Vec {
    std::vector<std::pair<std::string, double>> w;
    double norm = 0;
  };

  Vec vectorize(const corpus::ContextResponsePair& p) const {
    std::map<std::string, double> tf;
    for (const auto& u : p.context)
      for (const auto& t : u.tokens) tf[t] += 1.0;
    Vec v;
    for (const auto& [t, c] : tf) {
      auto it = idf_.find(t);
      if (it == idf_.end() || it->second == 0.0) continue;
      v.w.emplace_back(t, c * it->second);
      v.norm += (c * it->second) * (c * it->second);
    }
    v.norm = std::sqrt(v.norm);
    return v;
  }

  static int floor_of(const corpus::ContextResponsePair& p) { return p.floors.empty() ? 0 : p.floors.back(); }

  double similarity(const corpus::ContextResponsePair& q, const Vec& qv, std::size_t j) const {
    const auto& p = (*train_)[j];
    if (p.topic != q.topic || floor_of(p) != floor_of(q)) return 0.0;
    const auto& pv = vecs_[j];
    if (qv.norm == 0.0 || pv.norm == 0.0) return 0.0;
    double dot = 0;
    std::size_t a = 0, b = 0;
    while (a < qv.w.size() && b < pv.w.size()) {
      if (qv.w[a].first < pv.w[b].first) ++a;
      else if (pv.w[b].first < qv.w[a].first) ++b;
      else dot += qv.w[a++].second * pv.w[b++].second;
    }
    return dot / (qv.norm * pv.norm);
  }

  /// Top-k training indices by similarity (ties by index), excluding zeros.
  std::vector<std::pair<std::size_t, double>> nearest(const corpus::ContextResponsePair& q, std::size_t top_k) const {
    const auto qv = vectorize(q);
    std::vector<std::pair<std::size_t, double>> all;
    for (std::size_t j = 0; j < train_->size(); ++j) {
      const double s = similarity(q, qv, j);
      if (s > 0.0) all.emplace_back(j, s);
    }
    std::stable_sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
    if (all.size() > top_k) all.resize(top_k);
    return all;
  }

  std::size_t size() const { return train_->size(); }

 private:
  const std::vector<corpus::ContextResponsePair>* train_;
  std::unordered_map<std::string, double> idf_;
  std::vector<Vec> vecs_;
};

/// The test response itself followed by the responses of the top_k most
/// similar training contexts, deduplicated.
inline ReferenceSet collect_references(std::size_t context_id, const corpus::ContextResponsePair& query,
                                       const TfidfIndex& index, const std::vector<corpus::ContextResponsePair>& train,
                                       std::size_t top_k = 10) {
  ReferenceSet s;
  s.context_id = context_id;
  auto opt_act = [](const std::string& a) { return a.empty() ? std::nullopt : std::optional<std::string>(a); };
  s.add({query.response.tokens, opt_act(query.response_act)});
  for (const auto& [j, sim] : index.nearest(query, top_k))
    s.add({train[j].response.tokens, opt_act(train[j].response_act)});
  return s;
}

// ---------------------------------------------------------------------------
// Corpus-level report.

/// Mean precision/recall over contexts present in both maps, in context-id order.
/// Missing hypothesis acts are filled by the tagger when one is given.
inline json evaluate_report(const std::map<std::size_t, std::vector<Utt>>& gens,
                            const std::map<std::size_t, ReferenceSet>& refs, const std::vector<DistanceFn>& dists,
                            const corpus::ActTagger* tagger) {
  json report;
  report["perplexity"] = nullptr;
  report["kl_cost"] = nullptr;
  for (int n = 1; n <= 4; ++n) {
    report["bleu" + std::to_string(n) + "_prec"] = nullptr;
    report["bleu" + std::to_string(n) + "_rec"] = nullptr;
  }
  for (const char* k : {"abow", "ebow", "da"}) {
    report[std::string(k) + "_prec"] = nullptr;
    report[std::string(k) + "_rec"] = nullptr;
  }
  std::vector<std::size_t> ids;
  for (const auto& [id, h] : gens)
    if (!h.empty() && refs.count(id) && !refs.at(id).refs.empty()) ids.push_back(id);
  if (ids.size() < gens.size())
    warn("evaluate: " + std::to_string(gens.size() - ids.size()) + " contexts without references or hypotheses skipped");
  if (ids.empty()) throw ValidationError("evaluate: no context has both hypotheses and references");
  for (const auto& d : dists) {
    double p = 0, r = 0;
    for (auto id : ids) {
      auto hyps = gens.at(id);
      auto rs = refs.at(id).refs;
      if (tagger) {
        for (auto& h : hyps) h.act = tagger->tag(h.tokens);
        for (auto& x : rs)
          if (!x.act) x.act = tagger->tag(x.tokens);
      }
      const auto pr = prec_recall(rs, hyps, d);
      p += pr.precision;
      r += pr.recall;
    }
    report[d.name() + "_prec"] = p / static_cast<double>(ids.size());
    report[d.name() + "_rec"] = r / static_cast<double>(ids.size());
  }
  report["contexts"] = ids.size();
  return report;
}

// ---------------------------------------------------------------------------
// Latent probe: multinomial logistic regression by gradient descent.

struct ProbeOptions {
  double train_fraction = 0.8;
  double tolerance = 1e-6;  // on the change in training loss
  std::size_t max_iterations = 20000;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double accuracy = 0;
  double chance = 0;  // 1 / #classes
  std::size_t classes = 0;
  std::size_t train_size = 0, test_size = 0;
  std::size_t iterations = 0;
  double final_loss = 0;
};

inline ProbeResult latent_probe(const std::vector<std::vector<double>>& z, const std::vector<std::string>& labels,
                                const ProbeOptions& opt = {}) {
  if (z.size() != labels.size()) throw ShapeError("latent_probe: feature/label count mismatch");
  corpus::LabelSet classes(labels);
  if (classes.size() < 2) throw ValidationError("latent_probe: need at least two classes");
  const std::size_t n = z.size(), D = z.front().size(), K = classes.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  auto rng = CounterRng(opt.seed).derive(streams::kProbe);
  rng.shuffle(perm);
  const std::size_t n_train = static_cast<std::size_t>(std::floor(opt.train_fraction * static_cast<double>(n)));
  if (n_train < 1 || n_train >= n) throw ValidationError("latent_probe: split leaves an empty side");

  std::vector<double> mean(D, 0.0), sd(D, 0.0);
  for (std::size_t k = 0; k < n_train; ++k)
    for (std::size_t d = 0; d < D; ++d) mean[d] += z[perm[k]][d];
  for (auto& m : mean) m /= static_cast<double>(n_train);
  for (std::size_t k = 0; k < n_train; ++k)
    for (std::size_t d = 0; d < D; ++d) sd[d] += (z[perm[k]][d] - mean[d]) * (z[perm[k]][d] - mean[d]);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n_train)), s = s > 0 ? s : 1.0;

  auto feat = [&](std::size_t i) {
    std::vector<double> x(D + 1, 1.0);
    for (std::size_t d = 0; d < D; ++d) x[d] = (z[i][d] - mean[d]) / sd[d];
    return x;
  };
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  for (std::size_t k = 0; k < n; ++k) {
    X.push_back(feat(perm[k]));
    y.push_back(classes.id(labels[perm[k]]));
  }

  const std::size_t P = K * (D + 1);
  auto loss_grad = [&](const std::vector<double>& W, std::vector<double>* G) {
    double loss = 0;
    if (G) G->assign(P, 0.0);
    std::vector<double> s(K);
    for (std::size_t k = 0; k < n_train; ++k) {
      for (std::size_t c = 0; c < K; ++c) s[c] = numeric::dot(&W[c * (D + 1)], X[k].data(), D + 1);
      const double mx = *std::max_element(s.begin(), s.end());
      double zsum = 0;
      for (auto& v : s) zsum += (v = std::exp(v - mx));
      loss += std::log(zsum) - std::log(s[static_cast<std::size_t>(y[k])]);
      if (G)
        for (std::size_t c = 0; c < K; ++c) {
          const double g = s[c] / zsum - (static_cast<int>(c) == y[k] ? 1.0 : 0.0);
          for (std::size_t d = 0; d <= D; ++d) (*G)[c * (D + 1) + d] += g * X[k][d];
        }
    }
    if (G)
      for (auto& g : *G) g /= static_cast<double>(n_train);
    return loss / static_cast<double>(n_train);
  };

  std::vector<double> W(P, 0.0), G, Wn(P);
  double loss = loss_grad(W, &G), lr = 1.0;
  ProbeResult res;
  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    double gg = 0;
    for (double g : G) gg += g * g;
    double next = 0;
    for (;;) {  // backtracking (Armijo) step
      for (std::size_t i = 0; i < P; ++i) Wn[i] = W[i] - lr * G[i];
      next = loss_grad(Wn, nullptr);
      if (next <= loss - 1e-4 * lr * gg || lr < 1e-12) break;
      lr *= 0.5;
    }
    W.swap(Wn);
    const double delta = loss - next;
    loss = loss_grad(W, &G);
    lr = std::min(lr * 2.0, 64.0);
    if (std::abs(delta) < opt.tolerance) {
      ++res.iterations;
      break;
    }
  }

  std::size_t correct = 0;
  for (std::size_t k = n_train; k < n; ++k) {
    std::size_t best = 0;
    double bs = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < K; ++c) {
      const double s = numeric::dot(&W[c * (D + 1)], X[k].data(), D + 1);
      if (s > bs) bs = s, best = c;
    }
    correct += static_cast<int>(best) == y[k];
  }
  res.classes = K;
  res.chance = 1.0 / static_cast<double>(K);
  res.train_size = n_train;
  res.test_size = n - n_train;
  res.accuracy = static_cast<double>(correct) / static_cast<double>(res.test_size);
  res.final_loss = loss;
  return res;
}

/// Posterior means of the recognition network, one row per pair.
template <class T>
std::vector<std::vector<double>> posterior_means(const model::DialogModel<T>& m,
                                                 const std::vector<corpus::EncodedPair>& data) {
  std::vector<std::vector<double>> out;
  for (const auto& p : data) {
    const auto q = m.posterior(p);
    out.emplace_back(q.mu.begin(), q.mu.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation consistency.

struct ConsistencyResult {
  double accuracy = 0;
  std::size_t total = 0;
  std::vector<std::pair<std::pair<std::string, std::string>, std::size_t>> confusions;  // (predicted, tagged) desc

  json to_json() const {
    json c = json::array();
    for (const auto& [k, n] : confusions) c.push_back({{"predicted", k.first}, {"tagged", k.second}, {"count", n}});
    return {{"accuracy", accuracy}, {"total", total}, {"confusions", c}};
  }
};

/// One prior sample and greedy decode per context; agreement between the
/// predicted act and the tagger's label of the generated tokens.
template <class T>
ConsistencyResult consistency_accuracy(const model::DialogModel<T>& m, const std::vector<corpus::EncodedPair>& data,
                                       const corpus::ActTagger& tagger, const corpus::Vocabulary& vocab,
                                       const corpus::LabelSet& acts, const CounterRng& rng) {
  if (!m.config().knowledge_guided()) throw ValidationError("consistency_accuracy requires a kgcvae checkpoint");
  if (data.empty()) throw ValidationError("consistency_accuracy: empty dataset");
  generation::GenerationOptions opt;
  opt.n_samples = 1;
  opt.mode = generation::Mode::latent_greedy;
  std::map<std::pair<std::string, std::string>, std::size_t> conf;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto h = generation::sample_responses(m, data[i], opt, rng, i).front();
    const std::string pred = acts.name(*h.predicted_act);
    const std::string tagged = tagger.tag(vocab.decode(h.tokens));
    if (pred == tagged) ++agree;
    else ++conf[{pred, tagged}];
  }
  ConsistencyResult r;
  r.total = data.size();
  r.accuracy = static_cast<double>(agree) / static_cast<double>(data.size());
  r.confusions.assign(conf.begin(), conf.end());
  std::stable_sort(r.confusions.begin(), r.confusions.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return r;
}

// ---------------------------------------------------------------------------

/// One JSON row per pair: posterior mean, act, sentiment, response length.
template <class T>
std::vector<json> export_latents(const model::DialogModel<T>& m, const std::vector<corpus::ContextResponsePair>& raw,
                                 const std::vector<corpus::EncodedPair>& data) {
  if (!m.config().latent()) throw ValidationError("export_latents requires a latent variant");
  if (raw.size() != data.size()) throw ShapeError("export_latents: pair lists differ in length");
  std::vector<json> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto q = m.posterior(data[i]);
    json r;
    r["index"] = i;
    r["z"] = std::vector<float>(q.mu.begin(), q.mu.end());
    r["act"] = raw[i].response_act.empty() ? json(nullptr) : json(raw[i].response_act);
    r["sentiment"] = raw[i].response.sentiment ? json(*raw[i].response.sentiment) : json(nullptr);
    r["length"] = raw[i].response.tokens.size();
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace dialvae::evaluation
