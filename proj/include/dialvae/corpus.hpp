#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dialvae/error.hpp"
#include "dialvae/rng.hpp"

namespace dialvae::corpus {

using json = nlohmann::json;

struct Utterance {
  std::vector<std::string> tokens;
  std::string speaker;  // "A" or "B"
  std::optional<std::string> dialog_act;
  std::optional<std::string> sentiment;
};

struct Dialog {
  std::string topic;
  std::vector<Utterance> utterances;
};

struct CorpusLoadResult {
  std::vector<Dialog> dialogs;
  std::size_t dropped_utterances = 0;
  std::size_t dropped_dialogs = 0;
};

inline std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

inline bool valid_speaker(const std::string& s) { return s == "A" || s == "B"; }

namespace detail {

inline std::optional<std::string> optional_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ValidationError(std::string("field '") + key + "' must be a string or null");
  return it->get<std::string>();
}

}  // namespace detail

/// Parses JSONL dialogs (one per line). Tokens are lowercased, empty tokens
/// and utterances removed, and dialogs left with fewer than two utterances
/// dropped.
inline CorpusLoadResult parse_corpus(std::istream& in, const std::string& source = "<stream>") {
  CorpusLoadResult res;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": malformed JSON: " + e.what());
    }
    try {
      if (!obj.is_object() || !obj.contains("utts") || !obj["utts"].is_array())
        throw ValidationError("expected an object with an 'utts' array");
      Dialog d;
      if (obj.contains("topic") && !obj["topic"].is_null()) d.topic = obj["topic"].get<std::string>();
      for (const auto& u : obj["utts"]) {
        Utterance utt;
        utt.speaker = u.at("speaker").get<std::string>();
        if (!valid_speaker(utt.speaker)) throw ValidationError("unknown speaker tag '" + utt.speaker + "'");
        for (const auto& t : u.at("tokens")) {
          auto tok = to_lower(t.get<std::string>());
          if (!tok.empty()) utt.tokens.push_back(std::move(tok));
        }
        utt.dialog_act = detail::optional_string(u, "act");
        utt.sentiment = detail::optional_string(u, "sentiment");
        if (utt.tokens.empty()) {
          ++res.dropped_utterances;
          continue;
        }
        d.utterances.push_back(std::move(utt));
      }
      if (d.utterances.size() < 2) {
        ++res.dropped_dialogs;
        continue;
      }
      res.dialogs.push_back(std::move(d));
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    } catch (const json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return res;
}

inline CorpusLoadResult load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus: " + path.string());
  auto res = parse_corpus(in, path.string());
  if (res.dropped_dialogs > 0)
    warn(path.string() + ": dropped " + std::to_string(res.dropped_dialogs) +
         " dialog(s) with fewer than two utterances");
  return res;
}

inline json dialog_to_json(const Dialog& d) {
  json utts = json::array();
  for (const auto& u : d.utterances) {
    utts.push_back({{"speaker", u.speaker},
                    {"tokens", u.tokens},
                    {"act", u.dialog_act ? json(*u.dialog_act) : json(nullptr)},
                    {"sentiment", u.sentiment ? json(*u.sentiment) : json(nullptr)}});
  }
  return {{"topic", d.topic}, {"utts", utts}};
}

inline void write_corpus(const std::filesystem::path& path, const std::vector<Dialog>& dialogs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write corpus: " + path.string());
  for (const auto& d : dialogs) out << dialog_to_json(d).dump() << '\n';
}

// ---------------------------------------------------------------------------

/// Token <-> id bijection with four reserved ids.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumSpecials = 4;

  static const std::vector<std::string>& specials() {
    static const std::vector<std::string> s{"<pad>", "<unk>", "<s>", "</s>"};
    return s;
  }

  Vocabulary() {
    for (const auto& s : specials()) push(s);
  }

  /// Builds from an explicit ordered token list (specials excluded).
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (const auto& t : tokens) {
      if (v.token_to_id_.count(t)) throw ValidationError("duplicate vocabulary token: " + t);
      v.push(t);
    }
    return v;
  }

  std::size_t size() const { return id_to_token_.size(); }

  int encode(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

  const std::string& decode(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= size()) throw ValidationError("token id out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  std::vector<int> encode(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(encode(t));
    return ids;
  }

  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(decode(id));
    return out;
  }

  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  /// {token: id}
  json to_json() const {
    json j = json::object();
    for (std::size_t i = 0; i < size(); ++i) j[id_to_token_[i]] = i;
    return j;
  }

  static Vocabulary from_json(const json& j) {
    std::vector<std::string> by_id(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto id = it.value().get<std::size_t>();
      if (id >= by_id.size() || !by_id[id].empty()) throw ValidationError("vocabulary ids are not a bijection");
      by_id[id] = it.key();
    }
    for (int i = 0; i < kNumSpecials; ++i)
      if (by_id.size() <= static_cast<std::size_t>(i) || by_id[static_cast<std::size_t>(i)] != specials()[static_cast<std::size_t>(i)])
        throw ValidationError("vocabulary is missing reserved ids");
    return from_tokens(std::vector<std::string>(by_id.begin() + kNumSpecials, by_id.end()));
  }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  void push(const std::string& t) {
    token_to_id_.emplace(t, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(t);
  }

  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

/// Keeps the `cap` most frequent tokens; ties broken lexicographically.
inline Vocabulary build_vocab(const std::vector<Dialog>& dialogs, std::size_t cap) {
  if (cap < 1) throw ValidationError("vocabulary cap must be positive");
  std::map<std::string, std::size_t> freq;
  for (const auto& d : dialogs)
    for (const auto& u : d.utterances)
      for (const auto& t : u.tokens) ++freq[t];
  if (freq.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const auto& reserved = Vocabulary::specials();
  std::vector<std::string> keep;
  for (std::size_t i = 0; i < ranked.size() && keep.size() < cap; ++i) {
    if (std::find(reserved.begin(), reserved.end(), ranked[i].first) != reserved.end()) continue;
    keep.push_back(ranked[i].first);
  }
  return Vocabulary::from_tokens(keep);
}

/// Sorted set of categorical labels (topics, dialog acts) with dense ids.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
    std::sort(names_.begin(), names_.end());
    names_.erase(std::unique(names_.begin(), names_.end()), names_.end());
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }

  std::optional<int> find(const std::string& n) const {
    auto it = std::lower_bound(names_.begin(), names_.end(), n);
    if (it == names_.end() || *it != n) return std::nullopt;
    return static_cast<int>(it - names_.begin());
  }

  int id(const std::string& n) const {
    auto v = find(n);
    if (!v) throw ValidationError("unknown label '" + n + "'");
    return *v;
  }

 private:
  std::vector<std::string> names_;
};

inline LabelSet collect_topics(const std::vector<Dialog>& dialogs) {
  std::vector<std::string> t;
  for (const auto& d : dialogs) t.push_back(d.topic);
  return LabelSet(t);
}

inline LabelSet collect_acts(const std::vector<Dialog>& dialogs) {
  std::vector<std::string> a;
  for (const auto& d : dialogs)
    for (const auto& u : d.utterances)
      if (u.dialog_act) a.push_back(*u.dialog_act);
  return LabelSet(a);
}

// ---------------------------------------------------------------------------

/// Assigns a dialog-act label to a token sequence.
class ActTagger {
 public:
  virtual ~ActTagger() = default;
  virtual std::string tag(const std::vector<std::string>& tokens) const = 0;
};

/// Lookup-table tagger: exact match against known utterances, otherwise the
/// entry with the largest token-overlap F1 (ties go to the earliest entry).
class LookupTagger : public ActTagger {
 public:
  struct Entry {
    std::vector<std::string> tokens;
    std::string act;
  };

  LookupTagger() = default;
  explicit LookupTagger(std::vector<Entry> entries) : entries_(std::move(entries)) {
    if (entries_.empty()) throw ValidationError("LookupTagger needs at least one entry");
    for (std::size_t i = 0; i < entries_.size(); ++i) exact_.emplace(join(entries_[i].tokens), i);
  }

  std::string tag(const std::vector<std::string>& tokens) const override {
    if (auto it = exact_.find(join(tokens)); it != exact_.end()) return entries_[it->second].act;
    std::map<std::string, int> bag;
    for (const auto& t : tokens) ++bag[t];
    double best = -1.0;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      std::map<std::string, int> other;
      for (const auto& t : entries_[i].tokens) ++other[t];
      int common = 0;
      for (const auto& [t, c] : bag)
        if (auto o = other.find(t); o != other.end()) common += std::min(c, o->second);
      const double denom = static_cast<double>(tokens.size() + entries_[i].tokens.size());
      const double f1 = denom > 0 ? 2.0 * common / denom : 0.0;
      if (f1 > best) {
        best = f1;
        best_i = i;
      }
    }
    return entries_[best_i].act;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  json to_json() const {
    json arr = json::array();
    for (const auto& e : entries_) arr.push_back({{"tokens", e.tokens}, {"act", e.act}});
    return {{"entries", arr}};
  }

  static LookupTagger from_json(const json& j) {
    std::vector<Entry> entries;
    for (const auto& e : j.at("entries")) entries.push_back({e.at("tokens").get<std::vector<std::string>>(), e.at("act").get<std::string>()});
    return LookupTagger(std::move(entries));
  }

  static LookupTagger load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open tagger table: " + path.string());
    try {
      return from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }

 private:
  static std::string join(const std::vector<std::string>& toks) {
    std::string s;
    for (const auto& t : toks) {
      s += t;
      s += '\x1f';
    }
    return s;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> exact_;
};

// ---------------------------------------------------------------------------

struct ContextResponsePair {
  std::vector<Utterance> context;
  std::vector<int> floors;   // 1 iff same speaker as the response
  std::vector<float> meta;   // topic one-hot
  std::string topic;
  Utterance response;
  std::string response_act;  // empty when unknown
};

/// One pair per utterance index t >= 1, with up to k - 1 preceding utterances
/// as context.
inline std::vector<ContextResponsePair> make_pairs(const Dialog& dialog, std::size_t k, const LabelSet& topics,
                                                   const ActTagger* tagger = nullptr) {
  if (k < 2) throw ValidationError("context window k must be at least 2");
  const int topic_id = topics.id(dialog.topic);
  std::vector<float> meta(topics.size(), 0.0f);
  meta[static_cast<std::size_t>(topic_id)] = 1.0f;
  std::vector<ContextResponsePair> pairs;
  const auto& utts = dialog.utterances;
  for (std::size_t t = 1; t < utts.size(); ++t) {
    ContextResponsePair p;
    const std::size_t begin = t >= k - 1 ? t - (k - 1) : 0;
    for (std::size_t i = begin; i < t; ++i) {
      p.context.push_back(utts[i]);
      p.floors.push_back(utts[i].speaker == utts[t].speaker ? 1 : 0);
    }
    p.meta = meta;
    p.topic = dialog.topic;
    p.response = utts[t];
    if (utts[t].dialog_act)
      p.response_act = *utts[t].dialog_act;
    else if (tagger)
      p.response_act = tagger->tag(utts[t].tokens);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

inline std::vector<ContextResponsePair> make_pairs(const std::vector<Dialog>& dialogs, std::size_t k,
                                                   const LabelSet& topics, const ActTagger* tagger = nullptr) {
  std::vector<ContextResponsePair> all;
  for (const auto& d : dialogs) {
    auto p = make_pairs(d, k, topics, tagger);
    all.insert(all.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return all;
}

/// Id-level view of a pair consumed by the model.
struct EncodedPair {
  std::vector<std::vector<int>> context;
  std::vector<int> floors;
  std::vector<float> meta;
  std::vector<int> response;  // without BOS/EOS
  int act = -1;               // -1 when unknown
};

inline EncodedPair encode_pair(const ContextResponsePair& p, const Vocabulary& vocab, const LabelSet& acts) {
  EncodedPair e;
  for (const auto& u : p.context) e.context.push_back(vocab.encode(u.tokens));
  e.floors = p.floors;
  e.meta = p.meta;
  e.response = vocab.encode(p.response.tokens);
  if (!p.response_act.empty())
    if (auto a = acts.find(p.response_act)) e.act = *a;
  return e;
}

inline std::vector<EncodedPair> encode_pairs(const std::vector<ContextResponsePair>& pairs, const Vocabulary& vocab,
                                             const LabelSet& acts) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_pair(p, vocab, acts));
  return out;
}

// ---------------------------------------------------------------------------

/// Reads a whitespace-separated embedding file: a token followed by `dim`
/// floats per line. A dim of zero accepts the width of the first line.
inline std::vector<std::pair<std::string, std::vector<double>>> read_embedding_file(const std::filesystem::path& path,
                                                                                     std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open embeddings: " + path.string());
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof()) throw ParseError("embeddings: non-numeric value for token '" + tok + "'");
    if (dim == 0) dim = v.size();
    if (v.size() != dim)
      throw ValidationError("embeddings: token '" + tok + "' has " + std::to_string(v.size()) +
                            " values, expected " + std::to_string(dim));
    rows.emplace_back(std::move(tok), std::move(v));
  }
  return rows;
}

struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> values;  // rows x dim, row-major
  double coverage = 0.0;      // fraction of non-reserved tokens found in the file
};

/// Rows for tokens present in the file are copied; the rest are drawn
/// uniformly from [-0.08, 0.08].
inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab, std::size_t dim,
                                       CounterRng rng) {
  if (dim < 1) throw ValidationError("embedding dimension must be positive");
  auto rows = read_embedding_file(path, dim);
  EmbeddingMatrix m;
  m.rows = vocab.size();
  m.dim = dim;
  m.values.resize(m.rows * dim);
  for (auto& v : m.values) v = static_cast<float>(rng.uniform(-0.08, 0.08));
  std::vector<bool> found(vocab.size(), false);
  for (const auto& [tok, vec] : rows) {
    if (!vocab.contains(tok)) continue;
    const auto id = static_cast<std::size_t>(vocab.encode(tok));
    for (std::size_t j = 0; j < dim; ++j) m.values[id * dim + j] = static_cast<float>(vec[j]);
    found[id] = true;
  }
  const std::size_t regular = vocab.size() - Vocabulary::kNumSpecials;
  std::size_t hits = 0;
  for (std::size_t i = Vocabulary::kNumSpecials; i < vocab.size(); ++i) hits += found[i] ? 1 : 0;
  m.coverage = regular == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(regular);
  return m;
}

}  // namespace dialvae::corpus
