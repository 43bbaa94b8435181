#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dialvae/checkpoint.hpp"
#include "dialvae/corpus.hpp"
#include "dialvae/error.hpp"
#include "dialvae/evaluation.hpp"
#include "dialvae/generation.hpp"
#include "dialvae/manifest.hpp"
#include "dialvae/model.hpp"
#include "dialvae/synth.hpp"
#include "dialvae/training.hpp"

namespace dialvae::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Every subcommand resolves its options into one JSON object: built-in
// defaults, then the --config file, then explicit flags. The resolved object
// is stored in the run manifest and is the only thing execution reads, which
// is what makes `replay` work.

enum class Kind { value, input, output };

struct Option {
  std::string flag;     // without leading dashes
  std::string pointer;  // JSON pointer into the resolved config
  std::string help;
  Kind kind = Kind::value;
  std::optional<json> def;  // absent: the default already sits at `pointer`
};

struct Context {
  const json& cfg;
  std::ostream& out;
  std::vector<manifest::InputFile> inputs;
  std::vector<std::string> outputs;

  template <class T>
  T get(const std::string& ptr) const {
    const auto& v = cfg.at(json::json_pointer(ptr));
    if (v.is_null()) throw ValidationError("missing required option " + flag_of(ptr));
    return v.get<T>();
  }
  std::optional<std::string> path(const std::string& ptr) const {
    const auto& v = cfg.at(json::json_pointer(ptr));
    if (v.is_null() || v.get<std::string>().empty()) return std::nullopt;
    return v.get<std::string>();
  }
  std::string required_path(const std::string& ptr) const {
    auto p = path(ptr);
    if (!p) throw ValidationError("missing required option " + flag_of(ptr));
    return *p;
  }

  fs::path out_dir() {
    const fs::path d = required_path("/out");
    fs::create_directories(d);
    return d;
  }

  /// A file inside the output directory, refusing to overwrite any input.
  fs::path output(const std::string& name) {
    const fs::path p = out_dir() / name;
    for (const auto& in : inputs) {
      std::error_code ec;
      if (fs::exists(p) && fs::equivalent(p, in.path, ec))
        throw ValidationError("output " + p.string() + " would overwrite input " + in.path);
    }
    outputs.push_back(p.string());
    return p;
  }

  static std::string flag_of(const std::string& ptr) {
    std::string f = "--" + ptr.substr(ptr.rfind('/') + 1);
    for (auto& c : f)
      if (c == '_') c = '-';
    return f;
  }
};

struct Command {
  std::string name;
  std::string help;
  json defaults = json::object();
  std::vector<Option> options;
  std::function<void(Context&)> exec;
};

// ---------------------------------------------------------------------------
// Config resolution.

inline bool parse_bool(const std::string& flag, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ValidationError("--" + flag + " expects on|off, got '" + v + "'");
}

/// Converts a flag string to the JSON type of the default it replaces.
inline json flag_value(const std::string& flag, const std::string& v, const json& def) {
  try {
    if (def.is_boolean()) return parse_bool(flag, v);
    if (def.is_number_unsigned() || def.is_number_integer()) {
      std::size_t used = 0;
      if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
      const auto x = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing");
      return x;
    }
    if (def.is_number_float()) {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing");
      return x;
    }
  } catch (const std::logic_error&) {
    throw ValidationError("--" + flag + ": invalid value '" + v + "'");
  }
  return v;
}

inline bool compatible(const json& def, const json& v) {
  if (def.is_null()) return v.is_null() || v.is_string();
  if (def.is_number_float()) return v.is_number();
  if (def.is_number_unsigned() || def.is_number_integer()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  if (def.is_object()) return v.is_object();
  return def.type() == v.type();
}

/// Overlays `file` onto `base`, rejecting keys and types the defaults do not know.
inline void overlay(json& base, const json& file, const std::string& where) {
  if (!file.is_object()) throw ValidationError(where + ": config must be a JSON object");
  for (auto it = file.begin(); it != file.end(); ++it) {
    const std::string at = where + "/" + it.key();
    if (!base.contains(it.key())) throw ValidationError("config: unknown key '" + at + "'");
    auto& slot = base[it.key()];
    if (!compatible(slot, it.value())) throw ValidationError("config: wrong type for '" + at + "'");
    if (slot.is_object()) overlay(slot, it.value(), at);
    else slot = it.value();
  }
}

inline json load_json(const fs::path& path) {
  try {
    return json::parse(manifest::read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline std::vector<manifest::InputFile> hash_inputs(const Command& cmd, const json& cfg) {
  std::vector<manifest::InputFile> in;
  for (const auto& o : cmd.options) {
    if (o.kind != Kind::input) continue;
    const auto& v = cfg.at(json::json_pointer(o.pointer));
    if (v.is_null() || v.get<std::string>().empty()) continue;
    const std::string p = v.get<std::string>();
    if (!fs::is_regular_file(p)) throw ValidationError("--" + o.flag + ": no such file " + p);
    in.push_back({o.flag, p, manifest::git_blob_sha1(fs::path(p))});
  }
  return in;
}

// ---------------------------------------------------------------------------
// Shared helpers for subcommands.

inline std::vector<corpus::Dialog> read_dialogs(const std::string& path, std::ostream& log) {
  auto r = corpus::load_corpus(path);
  if (r.dropped_dialogs || r.dropped_utterances)
    log << path << ": dropped " << r.dropped_dialogs << " dialogs and " << r.dropped_utterances << " utterances\n";
  if (r.dialogs.empty()) throw ValidationError(path + ": no usable dialogs");
  return std::move(r.dialogs);
}

inline std::optional<corpus::LookupTagger> read_tagger(const Context& c, const std::string& ptr) {
  if (auto p = c.path(ptr)) return corpus::LookupTagger::load(*p);
  return std::nullopt;
}

inline corpus::LabelSet acts_of(const std::vector<corpus::ContextResponsePair>& pairs) {
  std::vector<std::string> a;
  for (const auto& p : pairs)
    if (!p.response_act.empty()) a.push_back(p.response_act);
  return corpus::LabelSet(a);
}

/// Vocabulary and label sets stored alongside the model in every checkpoint.
struct Bundle {
  checkpoint::Archive archive;
  model::DialogModel<float> model;
  corpus::Vocabulary vocab;
  corpus::LabelSet acts, topics;
};

inline Bundle load_bundle(const std::string& path) {
  auto a = checkpoint::load(path);
  if (!a.meta.contains("vocab") || !a.meta.contains("acts") || !a.meta.contains("topics"))
    throw CorruptionError(path + ": checkpoint lacks vocabulary or label sets");
  auto m = training::model_from_archive(a);
  auto vocab = corpus::Vocabulary::from_json(a.meta.at("vocab"));
  corpus::LabelSet acts(a.meta.at("acts").get<std::vector<std::string>>());
  corpus::LabelSet topics(a.meta.at("topics").get<std::vector<std::string>>());
  return {std::move(a), std::move(m), std::move(vocab), std::move(acts), std::move(topics)};
}

struct PairSet {
  std::vector<corpus::ContextResponsePair> raw;
  std::vector<corpus::EncodedPair> encoded;
};

inline PairSet pairs_for(const Bundle& b, const std::string& data, const corpus::ActTagger* tagger, std::ostream& log) {
  PairSet s;
  s.raw = corpus::make_pairs(read_dialogs(data, log), b.model.config().context_window, b.topics, tagger);
  s.encoded = corpus::encode_pairs(s.raw, b.vocab, b.acts);
  return s;
}

inline void write_json(const fs::path& p, const json& j) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw Error("cannot write " + p.string());
  f << j.dump(2) << '\n';
}

inline json labels_json(const corpus::LabelSet& acts, const corpus::LabelSet& topics) {
  return {{"acts", acts.names()}, {"topics", topics.names()}};
}

// ---------------------------------------------------------------------------
// Subcommands.

inline Command synth_command() {
  Command c{"synth", "Write the synthetic latent8 or mem50 corpus", json::object(), {}, {}};
  c.options = {
      {"kind", "/kind", "latent8|mem50", Kind::value, "latent8"},
      {"pairs", "/pairs", "training pairs (0: 4000 for latent8, 50 for mem50)", Kind::value, 0u},
      {"dominant-prob", "/dominant_prob", "latent8: probability of a category's dominant act", Kind::value, 0.85},
      {"emb-dim", "/emb_dim", "latent8: width of the emitted embedding file", Kind::value, 16u},
  };
  c.exec = [](Context& x) {
    const auto kind = x.get<std::string>("/kind");
    auto pairs = x.get<std::size_t>("/pairs");
    const auto seed = x.get<std::uint64_t>("/seed");
    std::vector<fs::path> files;
    const auto dir = x.out_dir();
    if (kind == "latent8") {
      synth::latent8::Options o;
      o.train_pairs = pairs ? pairs : 4000;
      o.dominant_prob = x.get<double>("/dominant_prob");
      o.emb_dim = x.get<std::size_t>("/emb_dim");
      o.seed = seed;
      if (!(o.dominant_prob >= 0 && o.dominant_prob <= 1)) throw ValidationError("--dominant-prob must lie in [0, 1]");
      if (o.emb_dim < 1) throw ValidationError("--emb-dim must be positive");
      files = synth::write_latent8(synth::latent8::make(o), dir);
    } else if (kind == "mem50") {
      files = synth::write_mem50(synth::mem50::make(seed, pairs ? pairs : 50), dir);
    } else {
      throw ValidationError("--kind expects latent8|mem50, got '" + kind + "'");
    }
    for (const auto& f : files) x.outputs.push_back(f.string());
    x.out << "wrote " << files.size() << " files to " << dir.string() << '\n';
  };
  return c;
}

inline Command prep_command() {
  Command c{"prep", "Build the vocabulary and label sets of a corpus and count its pairs", json::object(), {}, {}};
  c.options = {
      {"train-data", "/train_data", "training corpus (JSONL)", Kind::input, json(nullptr)},
      {"tagger", "/tagger", "act lookup table for utterances without an act", Kind::input, json(nullptr)},
      {"vocab-size", "/vocab_size", "vocabulary cap", Kind::value, 10000u},
      {"context-window", "/context_window", "utterances per pair including the response", Kind::value, 10u},
  };
  c.exec = [](Context& x) {
    const auto dialogs = read_dialogs(x.required_path("/train_data"), x.out);
    const auto tagger = read_tagger(x, "/tagger");
    const auto vocab = corpus::build_vocab(dialogs, x.get<std::size_t>("/vocab_size"));
    const auto topics = corpus::collect_topics(dialogs);
    const auto pairs = corpus::make_pairs(dialogs, x.get<std::size_t>("/context_window"), topics,
                                          tagger ? &*tagger : nullptr);
    const auto acts = acts_of(pairs);
    std::size_t tokens = 0, unk = 0;
    std::map<std::string, std::size_t> act_counts;
    for (const auto& p : pairs) {
      for (const auto& t : p.response.tokens) {
        ++tokens;
        unk += vocab.contains(t) ? 0 : 1;
      }
      if (!p.response_act.empty()) ++act_counts[p.response_act];
    }
    json stats = {{"dialogs", dialogs.size()},
                  {"pairs", pairs.size()},
                  {"vocab_size", vocab.size()},
                  {"response_tokens", tokens},
                  {"response_oov_rate", tokens ? static_cast<double>(unk) / static_cast<double>(tokens) : 0.0},
                  {"act_counts", act_counts}};
    write_json(x.output("vocab.json"), vocab.to_json());
    write_json(x.output("labels.json"), labels_json(acts, topics));
    write_json(x.output("stats.json"), stats);
    x.out << dialogs.size() << " dialogs, " << pairs.size() << " pairs, vocabulary " << vocab.size() << ", "
          << acts.size() << " acts, " << topics.size() << " topics\n";
  };
  return c;
}

inline json model_defaults() {
  json m = model::ModelConfig{};
  for (const char* k : {"vocab_size", "num_acts", "meta_dim"}) m.erase(k);  // derived from the data
  return m;
}

inline json train_defaults() {
  json t = training::TrainConfig{};
  t.erase("seed");  // taken from --seed
  return t;
}

inline Command train_command() {
  Command c{"train", "Train a baseline, cvae or kgcvae model", json::object(), {}, {}};
  c.defaults["model"] = model_defaults();
  c.defaults["train"] = train_defaults();
  c.options = {
      {"train-data", "/train_data", "training corpus (JSONL)", Kind::input, json(nullptr)},
      {"valid-data", "/valid_data", "validation corpus (JSONL)", Kind::input, json(nullptr)},
      {"embeddings", "/embeddings", "pretrained word vectors (text format)", Kind::input, json(nullptr)},
      {"tagger", "/tagger", "act lookup table for utterances without an act", Kind::input, json(nullptr)},
      {"resume", "/resume", "continue from a last.ckpt written by an earlier run", Kind::input, json(nullptr)},
      {"vocab-size", "/vocab_size", "vocabulary cap", Kind::value, 10000u},
      {"variant", "/model/variant", "baseline|cvae|kgcvae", Kind::value, std::nullopt},
      {"bow", "/model/use_bow", "bag-of-words loss on|off", Kind::value, std::nullopt},
      {"kla", "/train/schedule", "KL annealing none|linear", Kind::value, std::nullopt},
      {"steps", "/train/max_steps", "training steps", Kind::value, std::nullopt},
      {"anneal", "/train/anneal_batches", "steps until the KL weight reaches 1", Kind::value, std::nullopt},
      {"lr", "/train/learning_rate", "Adam learning rate", Kind::value, std::nullopt},
      {"batch-size", "/train/batch_size", "examples per step", Kind::value, std::nullopt},
      {"eval-interval", "/train/eval_interval", "steps between validation passes", Kind::value, std::nullopt},
      {"freeze-embeddings", "/train/freeze_embeddings", "keep word embeddings fixed on|off", Kind::value, std::nullopt},
  };
  c.exec = [](Context& x) {
    const auto train_dialogs = read_dialogs(x.required_path("/train_data"), x.out);
    const auto valid_dialogs = read_dialogs(x.required_path("/valid_data"), x.out);
    const auto tagger = read_tagger(x, "/tagger");
    const auto* tg = tagger ? &*tagger : nullptr;
    const auto seed = x.get<std::uint64_t>("/seed");

    auto mc = x.cfg.at("model").get<model::ModelConfig>();
    auto tc = x.cfg.at("train").get<training::TrainConfig>();
    tc.seed = seed;
    const auto vocab = corpus::build_vocab(train_dialogs, x.get<std::size_t>("/vocab_size"));
    const auto topics = corpus::collect_topics(train_dialogs);
    const auto train_pairs = corpus::make_pairs(train_dialogs, mc.context_window, topics, tg);
    const auto valid_pairs = corpus::make_pairs(valid_dialogs, mc.context_window, topics, tg);
    const auto acts = acts_of(train_pairs);
    mc.vocab_size = vocab.size();
    mc.num_acts = acts.size();
    mc.meta_dim = topics.size();
    mc.validate();

    training::Trainer t(mc, tc, corpus::encode_pairs(train_pairs, vocab, acts),
                        corpus::encode_pairs(valid_pairs, vocab, acts));
    if (auto e = x.path("/embeddings")) {
      const auto m = corpus::load_embeddings(*e, vocab, mc.emb_dim, CounterRng(seed).derive(streams::kEmbeddings));
      t.set_embeddings(m.values);
      x.out << "embeddings: " << static_cast<int>(100 * m.coverage + 0.5) << "% of the vocabulary covered\n";
    }
    if (auto r = x.path("/resume")) {
      const auto a = checkpoint::load(*r);
      json want = json(mc), have = a.meta.at("model");
      json want_t = json(tc), have_t = a.meta.at("train");
      want_t.erase("max_steps");
      have_t.erase("max_steps");
      if (want != have || want_t != have_t)
        throw ValidationError("--resume: checkpoint was written with a different model or training config");
      t.restore(a);
      x.out << "resumed at step " << t.step() << '\n';
    }

    x.out << model::to_string(mc.variant) << (mc.bow_enabled() ? "+bow" : "") << ", " << t.model().params().total_numel()
          << " parameters, " << train_pairs.size() << " training pairs\n";
    std::size_t seen = t.log().evals.size();
    while (!t.done()) {
      t.step_once();
      for (; seen < t.log().evals.size(); ++seen) {
        const auto& e = t.log().evals[seen];
        x.out << "step " << e.step << "  valid bound " << e.valid_bound << "  ppl " << e.perplexity;
        if (e.kl_cost) x.out << "  kl " << *e.kl_cost;
        x.out << '\n';
      }
    }
    const json extra = {{"vocab", vocab.to_json()}, {"acts", acts.names()}, {"topics", topics.names()}};
    t.log().write(x.output("train_log.jsonl"));
    checkpoint::save(t.best_archive(extra), x.output("model.ckpt"));
    checkpoint::save(t.to_archive(extra), x.output("last.ckpt"));
    write_json(x.output("vocab.json"), vocab.to_json());
    write_json(x.output("labels.json"), labels_json(acts, topics));
    x.out << "best valid bound " << (t.best_bound() ? *t.best_bound() : 0.0) << " at step " << t.best_step() << '\n';
  };
  return c;
}

inline Command generate_command() {
  Command c{"generate", "Sample N responses per context of a corpus", json::object(), {}, {}};
  c.options = {
      {"checkpoint", "/checkpoint", "model.ckpt written by train", Kind::input, json(nullptr)},
      {"data", "/data", "corpus whose contexts are answered (JSONL)", Kind::input, json(nullptr)},
      {"n-samples", "/n_samples", "hypotheses per context", Kind::value, 5u},
      {"mode", "/mode", "auto|latent_greedy|softmax_sampling", Kind::value, "auto"},
      {"max-len", "/max_len", "token cap per hypothesis (0: the model's)", Kind::value, 0u},
      {"prior-scale", "/prior_scale", "multiplier on the prior standard deviation", Kind::value, 1.0},
  };
  c.exec = [](Context& x) {
    const auto b = load_bundle(x.required_path("/checkpoint"));
    const auto data = pairs_for(b, x.required_path("/data"), nullptr, x.out);
    generation::GenerationOptions opt;
    opt.n_samples = x.get<std::size_t>("/n_samples");
    opt.mode = generation::parse_mode(x.get<std::string>("/mode"));
    opt.max_len = x.get<std::size_t>("/max_len");
    opt.prior_scale = x.get<double>("/prior_scale");
    const CounterRng rng(x.get<std::uint64_t>("/seed"));
    std::vector<json> rows;
    for (std::size_t i = 0; i < data.encoded.size(); ++i)
      rows.push_back(generation::generation_record(
          i, generation::sample_responses(b.model, data.encoded[i], opt, rng, i), b.vocab, b.acts));
    synth::write_jsonl(x.output("generations.jsonl"), rows);
    x.out << rows.size() << " contexts, " << opt.n_samples << " hypotheses each\n";
  };
  return c;
}

inline Command evaluate_command() {
  Command c{"evaluate", "Score generations against reference sets", json::object(), {}, {}};
  c.options = {
      {"generations", "/generations", "generations.jsonl written by generate", Kind::input, json(nullptr)},
      {"refs", "/refs", "reference sets (JSONL)", Kind::input, json(nullptr)},
      {"metric", "/metric", "bleu|abow|ebow|da|all", Kind::value, "all"},
      {"embeddings", "/embeddings", "word vectors for abow/ebow", Kind::input, json(nullptr)},
      {"tagger", "/tagger", "act lookup table used to label hypotheses", Kind::input, json(nullptr)},
      {"checkpoint", "/checkpoint", "with --data: also report perplexity and KL cost", Kind::input, json(nullptr)},
      {"data", "/data", "corpus scored by the checkpoint", Kind::input, json(nullptr)},
  };
  c.exec = [](Context& x) {
    const auto metric = x.get<std::string>("/metric");
    std::optional<evaluation::EmbeddingTable> table;
    if (auto e = x.path("/embeddings")) table = evaluation::EmbeddingTable::load(*e);
    const bool needs_table = metric == "abow" || metric == "ebow";
    if (needs_table && !table) throw ValidationError("--metric " + metric + " needs --embeddings");
    auto dists = evaluation::distances_for(metric, table ? &*table : nullptr);
    if (metric == "all" && !table) {
      warn("evaluate: no --embeddings, skipping abow and ebow");
      std::erase_if(dists, [](const auto& d) { return d.table == nullptr && (d.kind == evaluation::DistanceFn::Kind::abow ||
                                                                             d.kind == evaluation::DistanceFn::Kind::ebow); });
    }
    const auto tagger = read_tagger(x, "/tagger");
    auto report = evaluation::evaluate_report(evaluation::load_generations(x.required_path("/generations")),
                                              evaluation::load_references(x.required_path("/refs")), dists,
                                              tagger ? &*tagger : nullptr);
    const auto ck = x.path("/checkpoint");
    const auto data = x.path("/data");
    if (ck.has_value() != data.has_value()) throw ValidationError("--checkpoint and --data go together");
    if (ck) {
      const auto b = load_bundle(*ck);
      const auto d = pairs_for(b, *data, tagger ? &*tagger : nullptr, x.out);
      const auto r = training::evaluate_elbo(b.model, d.encoded,
                                             CounterRng(x.get<std::uint64_t>("/seed")).derive(streams::kEvalNoise));
      report["perplexity"] = r.perplexity;
      report["kl_cost"] = r.kl_cost ? json(*r.kl_cost) : json(nullptr);
    }
    write_json(x.output("report.json"), report);
    x.out << report.dump(2) << '\n';
  };
  return c;
}

inline Command collect_refs_command() {
  Command c{"collect-refs", "Build multi-reference sets by TF-IDF context retrieval", json::object(), {}, {}};
  c.options = {
      {"train-data", "/train_data", "corpus searched for similar contexts", Kind::input, json(nullptr)},
      {"test-data", "/test_data", "corpus whose contexts get reference sets", Kind::input, json(nullptr)},
      {"tagger", "/tagger", "act lookup table for responses without an act", Kind::input, json(nullptr)},
      {"top-k", "/top_k", "retrieved neighbours per context", Kind::value, 10u},
      {"context-window", "/context_window", "utterances per pair including the response", Kind::value, 10u},
  };
  c.exec = [](Context& x) {
    auto train = read_dialogs(x.required_path("/train_data"), x.out);
    const auto test = read_dialogs(x.required_path("/test_data"), x.out);
    const auto tagger = read_tagger(x, "/tagger");
    auto all = train;
    all.insert(all.end(), test.begin(), test.end());
    const auto topics = corpus::collect_topics(all);
    const auto k = x.get<std::size_t>("/context_window");
    const auto tp = corpus::make_pairs(train, k, topics, tagger ? &*tagger : nullptr);
    const auto qp = corpus::make_pairs(test, k, topics, tagger ? &*tagger : nullptr);
    const evaluation::TfidfIndex index(tp);
    const auto top_k = x.get<std::size_t>("/top_k");
    std::vector<json> rows;
    double total = 0;
    for (std::size_t i = 0; i < qp.size(); ++i) {
      const auto s = evaluation::collect_references(i, qp[i], index, tp, top_k);
      total += static_cast<double>(s.refs.size());
      rows.push_back(evaluation::to_json(s));
    }
    synth::write_jsonl(x.output("refs.jsonl"), rows);
    x.out << rows.size() << " reference sets, " << (rows.empty() ? 0.0 : total / static_cast<double>(rows.size()))
          << " references on average\n";
  };
  return c;
}

inline Command export_latents_command() {
  Command c{"export-latents", "Write posterior means with their labels", json::object(), {}, {}};
  c.options = {
      {"checkpoint", "/checkpoint", "model.ckpt of a cvae or kgcvae run", Kind::input, json(nullptr)},
      {"data", "/data", "corpus to encode (JSONL)", Kind::input, json(nullptr)},
      {"tagger", "/tagger", "act lookup table for responses without an act", Kind::input, json(nullptr)},
  };
  c.exec = [](Context& x) {
    const auto b = load_bundle(x.required_path("/checkpoint"));
    const auto tagger = read_tagger(x, "/tagger");
    const auto d = pairs_for(b, x.required_path("/data"), tagger ? &*tagger : nullptr, x.out);
    const auto rows = evaluation::export_latents(b.model, d.raw, d.encoded);
    synth::write_jsonl(x.output("latents.jsonl"), rows);
    x.out << rows.size() << " latent rows\n";
  };
  return c;
}

inline Command probe_command() {
  Command c{"probe", "Fit a logistic probe from exported latents to a label", json::object(), {}, {}};
  c.options = {
      {"latents", "/latents", "latents.jsonl written by export-latents", Kind::input, json(nullptr)},
      {"label", "/label", "row field to predict (act|sentiment)", Kind::value, "sentiment"},
      {"train-fraction", "/train_fraction", "share of rows used for fitting", Kind::value, 0.8},
      {"max-iterations", "/max_iterations", "gradient steps cap", Kind::value, 20000u},
      {"tolerance", "/tolerance", "stop when the loss improves by less", Kind::value, 1e-6},
  };
  c.exec = [](Context& x) {
    const auto label = x.get<std::string>("/label");
    std::vector<std::vector<double>> z;
    std::vector<std::string> y;
    std::size_t skipped = 0;
    evaluation::read_jsonl(x.required_path("/latents"), [&](const json& j) {
      const auto& l = j.contains(label) ? j.at(label) : json(nullptr);
      if (!l.is_string()) {
        ++skipped;
        return;
      }
      z.push_back(j.at("z").get<std::vector<double>>());
      y.push_back(l.get<std::string>());
    });
    if (skipped) warn("probe: " + std::to_string(skipped) + " rows without '" + label + "' skipped");
    evaluation::ProbeOptions o;
    o.train_fraction = x.get<double>("/train_fraction");
    o.max_iterations = x.get<std::size_t>("/max_iterations");
    o.tolerance = x.get<double>("/tolerance");
    o.seed = x.get<std::uint64_t>("/seed");
    const auto r = evaluation::latent_probe(z, y, o);
    const json j = {{"label", label},         {"accuracy", r.accuracy},     {"chance", r.chance},
                    {"classes", r.classes},   {"train_size", r.train_size}, {"test_size", r.test_size},
                    {"iterations", r.iterations}, {"final_loss", r.final_loss}, {"skipped", skipped}};
    write_json(x.output("probe.json"), j);
    x.out << label << " probe accuracy " << r.accuracy << " (chance " << r.chance << ")\n";
  };
  return c;
}

inline std::vector<Command> commands() {
  std::vector<Command> cs{prep_command(),           train_command(),         generate_command(),
                          evaluate_command(),       collect_refs_command(),  probe_command(),
                          export_latents_command(), synth_command()};
  for (auto& c : cs) {
    c.options.push_back({"seed", "/seed", "root of all randomness", Kind::value, 0u});
    c.options.push_back({"out", "/out", "output directory", Kind::output, json(nullptr)});
    for (const auto& o : c.options)
      if (o.def) c.defaults[json::json_pointer(o.pointer)] = *o.def;
  }
  return cs;
}

// ---------------------------------------------------------------------------

/// Runs `cmd` on a resolved config and writes its manifest.
inline void execute(const Command& cmd, const json& cfg, const std::vector<std::string>& argv, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  Context x{cfg, out, hash_inputs(cmd, cfg), {}};
  cmd.exec(x);
  manifest::RunManifest m;
  m.command = cmd.name;
  m.config = cfg;
  m.seed = cfg.at("seed").get<std::uint64_t>();
  m.inputs = x.inputs;
  m.argv = argv;
  const auto mpath = x.output("manifest.json");
  m.outputs = x.outputs;
  m.outputs.pop_back();  // the manifest itself
  m.duration_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  m.write(mpath);
}

inline const Command& find_command(const std::vector<Command>& cs, const std::string& name) {
  for (const auto& c : cs)
    if (c.name == name) return c;
  throw ValidationError("unknown subcommand '" + name + "'");
}

/// Re-executes the run recorded in a manifest. Inputs must be unchanged.
inline void replay(const std::vector<Command>& cs, const std::string& path, const std::optional<std::string>& out_dir,
                   const std::vector<std::string>& argv, std::ostream& out) {
  const auto m = manifest::RunManifest::load(path);
  const auto& cmd = find_command(cs, m.command);
  m.verify_inputs();
  json cfg = cmd.defaults;
  overlay(cfg, m.config, path);
  if (out_dir) cfg["out"] = *out_dir;
  execute(cmd, cfg, argv, out);
}

/// Entry point; `args` excludes the program name. Returns 0 on success, 1 on
/// usage or validation errors, 2 on runtime failures.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  const auto cs = commands();
  CLI::App app{"Conditional VAE dialog toolkit", "dialvae"};
  app.require_subcommand(1, 1);
  app.failure_message(CLI::FailureMessage::help);

  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, std::string> config_path;
  std::map<std::string, CLI::App*> subs;
  for (const auto& c : cs) {
    auto* s = app.add_subcommand(c.name, c.help);
    s->add_option("--config", config_path[c.name], "JSON config; flags override its keys");
    for (const auto& o : c.options) s->add_option("--" + o.flag, values[c.name][o.flag], o.help);
    subs[c.name] = s;
  }
  std::string manifest_path, replay_out;
  auto* rs = app.add_subcommand("replay", "Re-run the command recorded in a manifest.json");
  rs->add_option("--manifest", manifest_path, "manifest.json of an earlier run")->required();
  rs->add_option("--out", replay_out, "output directory (default: the recorded one)");

  if (!args.empty() && !args[0].starts_with("-") && !app.get_subcommand_no_throw(args[0])) {
    err << "error: unknown subcommand '" << args[0] << "'\n" << app.help();
    return 1;
  }
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (rs->parsed()) {
      replay(cs, manifest_path, replay_out.empty() ? std::nullopt : std::optional<std::string>(replay_out), args, out);
      return 0;
    }
    for (const auto& c : cs) {
      auto* s = subs.at(c.name);
      if (!s->parsed()) continue;
      json cfg = c.defaults;
      if (s->count("--config")) overlay(cfg, load_json(config_path[c.name]), config_path[c.name]);
      for (const auto& o : c.options) {
        if (!s->count("--" + o.flag)) continue;
        const json::json_pointer p(o.pointer);
        cfg[p] = flag_value(o.flag, values[c.name][o.flag], cfg[p].is_null() ? json("") : cfg[p]);
      }
      execute(c, cfg, args, out);
      return 0;
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace dialvae::cli
