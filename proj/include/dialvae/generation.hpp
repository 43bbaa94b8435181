#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialvae/corpus.hpp"
#include "dialvae/error.hpp"
#include "dialvae/model.hpp"
#include "dialvae/numeric.hpp"
#include "dialvae/rng.hpp"

namespace dialvae::generation {

using corpus::EncodedPair;
using corpus::Vocabulary;
using model::DialogModel;
using model::EncodedContext;

enum class Mode {
  automatic,         // latent_greedy for cvae/kgcvae, softmax_sampling for the baseline
  latent_greedy,     // z ~ prior, greedy decoding
  softmax_sampling,  // ancestral sampling at temperature 1 (with z ~ prior for latent variants)
};

inline Mode parse_mode(const std::string& s) {
  if (s == "auto") return Mode::automatic;
  if (s == "latent_greedy" || s == "greedy") return Mode::latent_greedy;
  if (s == "softmax_sampling" || s == "sample") return Mode::softmax_sampling;
  throw ValidationError("unknown generation mode '" + s + "' (expected auto|latent_greedy|softmax_sampling)");
}

struct GeneratedResponse {
  std::vector<int> tokens;
  std::optional<int> predicted_act;
  std::optional<std::vector<float>> latent;
};

struct GenerationOptions {
  std::size_t n_samples = 5;
  Mode mode = Mode::automatic;
  std::size_t max_len = 0;   // 0: the model's max_decode_len
  double prior_scale = 1.0;  // multiplies the prior standard deviation; 0 decodes from the prior mean
};

/// PAD and BOS are never emitted.
inline bool emittable(int id) { return id != Vocabulary::kPad && id != Vocabulary::kBos; }

/// Argmax over emittable ids, ties to the lowest id.
template <class T>
int argmax_token(const std::vector<T>& logits) {
  int best = -1;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const int id = static_cast<int>(i);
    if (!emittable(id)) continue;
    if (best < 0 || logits[i] > logits[static_cast<std::size_t>(best)]) best = id;
  }
  return best;
}

/// Draws an id from softmax(logits) restricted to emittable ids.
template <class T>
int sample_token(const std::vector<T>& logits, CounterRng& rng) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (emittable(static_cast<int>(i))) mx = std::max(mx, static_cast<double>(logits[i]));
  std::vector<double> w(logits.size(), 0.0);
  double z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (emittable(static_cast<int>(i))) z += (w[i] = std::exp(static_cast<double>(logits[i]) - mx));
  double u = rng.uniform() * z;
  int last = -1;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    last = static_cast<int>(i);
    if (u < w[i]) return last;
    u -= w[i];
  }
  return last;
}

/// Greedy decoding from s_0: feed BOS, take the argmax each step, stop at EOS
/// or after max_len tokens. EOS is not included in the result.
template <class T>
std::vector<int> greedy_decode(const DialogModel<T>& m, std::span<const T> z, const EncodedContext<T>& ctx,
                               std::optional<int> act, std::size_t max_len) {
  if (max_len < 1) throw ValidationError("greedy_decode: max_len must be at least 1");
  auto h = m.decoder_initial_state(z, ctx, act);
  std::vector<int> out;
  std::vector<T> logits;
  int tok = Vocabulary::kBos;
  while (out.size() < max_len) {
    h = m.decoder_step(std::span<const T>(h), tok, act, logits);
    tok = argmax_token(logits);
    if (tok == Vocabulary::kEos) break;
    out.push_back(tok);
  }
  return out;
}

template <class T>
std::vector<int> sample_decode(const DialogModel<T>& m, std::span<const T> z, const EncodedContext<T>& ctx,
                               std::optional<int> act, std::size_t max_len, CounterRng& rng) {
  if (max_len < 1) throw ValidationError("sample_decode: max_len must be at least 1");
  auto h = m.decoder_initial_state(z, ctx, act);
  std::vector<int> out;
  std::vector<T> logits;
  int tok = Vocabulary::kBos;
  while (out.size() < max_len) {
    h = m.decoder_step(std::span<const T>(h), tok, act, logits);
    tok = sample_token(logits, rng);
    if (tok == Vocabulary::kEos) break;
    out.push_back(tok);
  }
  return out;
}

/// Argmax of predict_act, ties to the lowest label id.
template <class T>
int predicted_act(const DialogModel<T>& m, std::span<const T> z, const EncodedContext<T>& ctx) {
  const auto logits = m.predict_act(z, ctx);
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<int>(best);
}

/// N hypotheses for one context. Sample i draws from
/// rng.derive(kGeneration, context_index).derive(i), so hypotheses are
/// reproducible individually and independent of N.
template <class T>
std::vector<GeneratedResponse> sample_responses(const DialogModel<T>& m, const EncodedPair& pair,
                                                const GenerationOptions& opt, const CounterRng& rng,
                                                std::uint64_t context_index) {
  if (opt.n_samples < 1) throw ValidationError("sample_responses: n_samples must be at least 1");
  Mode mode = opt.mode;
  if (mode == Mode::automatic) mode = m.config().latent() ? Mode::latent_greedy : Mode::softmax_sampling;
  if (mode == Mode::latent_greedy && !m.config().latent())
    throw ValidationError("latent_greedy generation needs a latent variant");
  const std::size_t max_len = opt.max_len ? opt.max_len : m.config().max_decode_len;
  const auto ctx = m.encode_context(pair);
  std::optional<numeric::GaussianParams<T>> prior;
  if (m.config().latent()) prior = m.prior(ctx);
  const auto base = rng.derive(streams::kGeneration, context_index);

  std::vector<GeneratedResponse> out;
  for (std::size_t i = 0; i < opt.n_samples; ++i) {
    auto stream = base.derive(i);
    GeneratedResponse r;
    std::vector<T> z;
    std::optional<int> act;
    if (prior) {
      const auto Z = m.config().latent_dim;
      z.resize(Z);
      for (std::size_t d = 0; d < Z; ++d) {
        const double sd = std::exp(0.5 * static_cast<double>(prior->log_var[d]));
        z[d] = static_cast<T>(static_cast<double>(prior->mu[d]) + opt.prior_scale * sd * stream.normal());
      }
      if (m.config().knowledge_guided()) act = predicted_act(m, std::span<const T>(z), ctx);
      r.latent = std::vector<float>(z.begin(), z.end());
    }
    r.predicted_act = act;
    r.tokens = mode == Mode::latent_greedy ? greedy_decode(m, std::span<const T>(z), ctx, act, max_len)
                                           : sample_decode(m, std::span<const T>(z), ctx, act, max_len, stream);
    out.push_back(std::move(r));
  }
  return out;
}

/// {"context_id": int, "hyps": [{"tokens": [...], "act": str|null}]}
inline nlohmann::json generation_record(std::size_t context_id, const std::vector<GeneratedResponse>& hyps,
                                        const Vocabulary& vocab, const corpus::LabelSet& acts) {
  nlohmann::json j;
  j["context_id"] = context_id;
  j["hyps"] = nlohmann::json::array();
  for (const auto& h : hyps) {
    nlohmann::json hj;
    hj["tokens"] = vocab.decode(h.tokens);
    hj["act"] = h.predicted_act ? nlohmann::json(acts.name(*h.predicted_act))
                                : nlohmann::json(nullptr);
    j["hyps"].push_back(std::move(hj));
  }
  return j;
}

}  // namespace dialvae::generation
