#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialvae/corpus.hpp"
#include "dialvae/evaluation.hpp"
#include "dialvae/rng.hpp"

namespace dialvae::synth {

using corpus::Dialog;
using corpus::Utterance;
using Tokens = std::vector<std::string>;

// latent8: two-utterance dialogs. Speaker A says a prompt of one of four hidden
// categories, followed by a topic word and a noise word. Speaker B answers with
// one of 8 templates (4 acts x 2 sentiments) carrying a filler slot. Category s
// selects act s with probability dominant_prob and act (s + 1) mod 4 otherwise;
// sentiment and filler are uniform and independent of everything else, so the
// response template depends on the context only through s.

namespace latent8 {

inline const std::array<Tokens, 4>& prompts() {
  static const std::array<Tokens, 4> p{Tokens{"tell", "me", "about"}, Tokens{"what", "do", "you", "think", "of"},
                                       Tokens{"i", "just", "saw"}, Tokens{"so", "how", "about"}};
  return p;
}
inline const std::array<std::string, 4>& topics() {
  static const std::array<std::string, 4> t{"cooking", "music", "sports", "travel"};
  return t;
}
inline const std::array<std::string, 4>& topic_words() {
  static const std::array<std::string, 4> t{"recipes", "guitars", "football", "beaches"};
  return t;
}
inline const std::array<std::string, 8>& noise_words() {
  static const std::array<std::string, 8> n{"today", "again", "maybe", "honestly", "lately", "now", "though", "there"};
  return n;
}
inline const std::array<std::string, 4>& acts() {
  static const std::array<std::string, 4> a{"statement", "question", "agree", "backchannel"};
  return a;
}
inline const std::array<std::string, 2>& sentiments() {
  static const std::array<std::string, 2> s{"positive", "negative"};
  return s;
}
inline const std::array<std::string, 4>& fillers() {
  static const std::array<std::string, 4> f{"mornings", "weekends", "crowds", "prices"};
  return f;
}

/// Response tokens for (act, sentiment, filler). Every template ends in the
/// same sentiment suffix, three sentiment words out of the last four tokens.
inline Tokens response(int act, int sentiment, int filler) {
  const std::string f = fillers()[static_cast<std::size_t>(filler)];
  Tokens r;
  switch (act) {
    case 0: r = {"i", "think", "the", f, "are"}; break;
    case 1: r = {"do", "you", "find", "the", f}; break;
    case 2: r = {"yes", "i", "agree", "the", f, "are"}; break;
    default: r = {"uh", "huh", f}; break;
  }
  for (const char* w : sentiment == 0 ? std::array<const char*, 4>{"lovely", "great", "and", "fun"}
                                      : std::array<const char*, 4>{"dreadful", "awful", "and", "boring"})
    r.push_back(w);
  return r;
}

/// Template id act * 2 + sentiment.
inline int template_id(int act, int sentiment) { return act * 2 + sentiment; }

inline std::array<int, 2> valid_acts(int category) { return {category, (category + 1) % 4}; }

/// Hidden category of a latent8 context utterance, or -1.
inline int category_of(const Tokens& context) {
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& p = prompts()[s];
    if (context.size() >= p.size() && std::equal(p.begin(), p.end(), context.begin())) return static_cast<int>(s);
  }
  return -1;
}

/// (act, sentiment, filler) of a latent8 response, or nullopt.
inline std::optional<std::array<int, 3>> parse_response(const Tokens& r) {
  for (int a = 0; a < 4; ++a)
    for (int s = 0; s < 2; ++s)
      for (int f = 0; f < 4; ++f)
        if (response(a, s, f) == r) return std::array<int, 3>{a, s, f};
  return std::nullopt;
}

struct Options {
  std::size_t train_pairs = 4000;
  std::size_t valid_pairs = 0;  // 0: train_pairs / 10
  std::size_t test_pairs = 0;   // 0: train_pairs / 10
  double dominant_prob = 0.85;
  std::size_t emb_dim = 16;
  std::uint64_t seed = 0;
};

struct Corpus {
  std::vector<Dialog> train, valid, test;
  std::vector<evaluation::ReferenceSet> test_refs;  // context_id = index into test pairs
  corpus::LookupTagger tagger;
  std::vector<std::pair<std::string, std::vector<double>>> embeddings;
};

inline Dialog sample_dialog(CounterRng& rng, double dominant_prob) {
  const int s = static_cast<int>(rng.below(4));
  const int topic = static_cast<int>(rng.below(4));
  const int noise = static_cast<int>(rng.below(noise_words().size()));
  const int act = rng.uniform() < dominant_prob ? s : (s + 1) % 4;
  const int sent = static_cast<int>(rng.below(2));
  const int fill = static_cast<int>(rng.below(4));
  Dialog d;
  d.topic = topics()[static_cast<std::size_t>(topic)];
  Utterance a;
  a.speaker = "A";
  a.tokens = prompts()[static_cast<std::size_t>(s)];
  a.tokens.push_back(topic_words()[static_cast<std::size_t>(topic)]);
  a.tokens.push_back(noise_words()[static_cast<std::size_t>(noise)]);
  Utterance b;
  b.speaker = "B";
  b.tokens = response(act, sent, fill);
  b.dialog_act = acts()[static_cast<std::size_t>(act)];
  b.sentiment = sentiments()[static_cast<std::size_t>(sent)];
  d.utterances = {a, b};
  return d;
}

inline corpus::LookupTagger make_tagger() {
  std::vector<corpus::LookupTagger::Entry> entries;
  for (int a = 0; a < 4; ++a)
    for (int s = 0; s < 2; ++s)
      for (int f = 0; f < 4; ++f) entries.push_back({response(a, s, f), acts()[static_cast<std::size_t>(a)]});
  return corpus::LookupTagger(std::move(entries));
}

/// All responses valid for a category: both admissible acts, every sentiment and filler.
inline evaluation::ReferenceSet reference_set(std::size_t context_id, int category) {
  evaluation::ReferenceSet r;
  r.context_id = context_id;
  for (int a : valid_acts(category))
    for (int s = 0; s < 2; ++s)
      for (int f = 0; f < 4; ++f) r.add({response(a, s, f), acts()[static_cast<std::size_t>(a)]});
  return r;
}

inline Corpus make(const Options& o) {
  if (o.train_pairs < 1) throw ValidationError("synth latent8: pairs must be positive");
  const std::size_t nv = o.valid_pairs ? o.valid_pairs : std::max<std::size_t>(1, o.train_pairs / 10);
  const std::size_t nt = o.test_pairs ? o.test_pairs : std::max<std::size_t>(1, o.train_pairs / 10);
  const CounterRng root = CounterRng(o.seed).derive(streams::kSynth, 8);
  Corpus c;
  auto fill = [&](std::vector<Dialog>& out, std::size_t n, std::uint64_t split) {
    auto rng = root.derive(split);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample_dialog(rng, o.dominant_prob));
  };
  fill(c.train, o.train_pairs, 0);
  fill(c.valid, nv, 1);
  fill(c.test, nt, 2);
  for (std::size_t i = 0; i < c.test.size(); ++i)
    c.test_refs.push_back(reference_set(i, category_of(c.test[i].utterances[0].tokens)));
  c.tagger = make_tagger();

  std::set<std::string> vocab;
  for (const auto& d : c.train)
    for (const auto& u : d.utterances) vocab.insert(u.tokens.begin(), u.tokens.end());
  auto erng = root.derive(3);
  for (const auto& t : vocab) {
    std::vector<double> v(o.emb_dim);
    for (auto& x : v) x = erng.normal();
    c.embeddings.emplace_back(t, std::move(v));
  }
  return c;
}

}  // namespace latent8

// mem50: fifty two-utterance dialogs with unique random contexts and
// responses, used as train, validation, and test split alike.
namespace mem50 {

inline std::vector<Dialog> make(std::uint64_t seed, std::size_t n = 50) {
  auto rng = CounterRng(seed).derive(streams::kSynth, 50);
  auto word = [](std::uint64_t i) {
    std::ostringstream s;
    s << "w" << std::setw(2) << std::setfill('0') << i;
    return s.str();
  };
  std::set<Tokens> seen;
  std::vector<Dialog> out;
  while (out.size() < n) {
    Tokens ctx, resp;
    const auto lc = 3 + rng.below(3), lr = 3 + rng.below(4);
    for (std::uint64_t i = 0; i < lc; ++i) ctx.push_back(word(rng.below(60)));
    for (std::uint64_t i = 0; i < lr; ++i) resp.push_back(word(rng.below(60)));
    if (!seen.insert(ctx).second) continue;
    Dialog d;
    d.topic = "mem";
    Utterance a, b;
    a.speaker = "A";
    a.tokens = ctx;
    b.speaker = "B";
    b.tokens = resp;
    b.dialog_act = "inform";
    d.utterances = {a, b};
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace mem50

inline void write_embeddings(const std::filesystem::path& path,
                             const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << std::setprecision(9);
  for (const auto& [t, v] : rows) {
    f << t;
    for (double x : v) f << ' ' << x;
    f << '\n';
  }
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  for (const auto& r : rows) f << r.dump() << '\n';
}

/// Writes train/valid/test.jsonl, refs.jsonl, tagger.json, embeddings.txt.
inline std::vector<std::filesystem::path> write_latent8(const latent8::Corpus& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  corpus::write_corpus(dir / "train.jsonl", c.train);
  corpus::write_corpus(dir / "valid.jsonl", c.valid);
  corpus::write_corpus(dir / "test.jsonl", c.test);
  std::vector<nlohmann::json> refs;
  for (const auto& r : c.test_refs) refs.push_back(evaluation::to_json(r));
  write_jsonl(dir / "refs.jsonl", refs);
  {
    std::ofstream f(dir / "tagger.json", std::ios::trunc);
    f << c.tagger.to_json().dump(1) << '\n';
  }
  write_embeddings(dir / "embeddings.txt", c.embeddings);
  return {dir / "train.jsonl", dir / "valid.jsonl", dir / "test.jsonl",
          dir / "refs.jsonl",  dir / "tagger.json", dir / "embeddings.txt"};
}

inline std::vector<std::filesystem::path> write_mem50(const std::vector<Dialog>& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const char* s : {"train.jsonl", "valid.jsonl", "test.jsonl"}) corpus::write_corpus(dir / s, d);
  return {dir / "train.jsonl", dir / "valid.jsonl", dir / "test.jsonl"};
}

}  // namespace dialvae::synth
