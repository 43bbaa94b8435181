#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialvae/corpus.hpp"
#include "dialvae/error.hpp"
#include "dialvae/layers.hpp"
#include "dialvae/numeric.hpp"

namespace dialvae::model {

using corpus::EncodedPair;
using numeric::Affine;
using numeric::GaussianParams;
using numeric::Gru;
using numeric::Mlp;
using numeric::ModelParams;
using numeric::ParamId;

enum class Variant { baseline, cvae, kgcvae };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::cvae: return "cvae";
    case Variant::kgcvae: return "kgcvae";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "cvae") return Variant::cvae;
  if (s == "kgcvae") return Variant::kgcvae;
  throw ValidationError("unknown variant '" + s + "' (expected baseline|cvae|kgcvae)");
}

struct ModelConfig {
  Variant variant = Variant::kgcvae;
  bool use_bow = true;
  std::size_t emb_dim = 200;
  std::size_t utt_hidden = 300;  // per direction
  std::size_t ctx_hidden = 600;
  std::size_t dec_hidden = 400;
  std::size_t latent_dim = 200;
  std::size_t mlp_hidden = 400;
  std::size_t context_window = 10;
  std::size_t vocab_size = 0;
  std::size_t num_acts = 0;
  std::size_t meta_dim = 0;  // number of topics
  std::size_t max_decode_len = 40;

  bool latent() const { return variant != Variant::baseline; }
  bool knowledge_guided() const { return variant == Variant::kgcvae; }
  bool bow_enabled() const { return latent() && use_bow; }
  std::size_t utt_dim() const { return 2 * utt_hidden; }
  std::size_t context_dim() const { return ctx_hidden + meta_dim; }
  std::size_t act_dim() const { return knowledge_guided() ? num_acts : 0; }

  void validate() const {
    for (auto [v, n] : {std::pair{emb_dim, "emb_dim"}, {utt_hidden, "utt_hidden"}, {ctx_hidden, "ctx_hidden"},
                        {dec_hidden, "dec_hidden"}, {latent_dim, "latent_dim"}, {mlp_hidden, "mlp_hidden"},
                        {vocab_size, "vocab_size"}, {max_decode_len, "max_decode_len"}})
      if (v == 0) throw ValidationError(std::string("model config: ") + n + " must be positive");
    if (context_window < 2) throw ValidationError("model config: context_window must be at least 2");
    if (knowledge_guided() && num_acts < 1) throw ValidationError("model config: kgcvae needs at least one act label");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"variant", to_string(c.variant)}, {"use_bow", c.use_bow},           {"emb_dim", c.emb_dim},
       {"utt_hidden", c.utt_hidden},      {"ctx_hidden", c.ctx_hidden},     {"dec_hidden", c.dec_hidden},
       {"latent_dim", c.latent_dim},      {"mlp_hidden", c.mlp_hidden},     {"context_window", c.context_window},
       {"vocab_size", c.vocab_size},      {"num_acts", c.num_acts},         {"meta_dim", c.meta_dim},
       {"max_decode_len", c.max_decode_len}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
  };
  get("use_bow", c.use_bow);
  get("emb_dim", c.emb_dim);
  get("utt_hidden", c.utt_hidden);
  get("ctx_hidden", c.ctx_hidden);
  get("dec_hidden", c.dec_hidden);
  get("latent_dim", c.latent_dim);
  get("mlp_hidden", c.mlp_hidden);
  get("context_window", c.context_window);
  get("vocab_size", c.vocab_size);
  get("num_acts", c.num_acts);
  get("meta_dim", c.meta_dim);
  get("max_decode_len", c.max_decode_len);
}

/// c = [h^c ; m]
template <class T>
struct EncodedContext {
  std::vector<T> c;
  std::size_t hc_dim = 0;

  std::span<const T> hc() const { return std::span<const T>(c).first(hc_dim); }
  std::span<const T> meta() const { return std::span<const T>(c).subspan(hc_dim); }
};

struct LossBreakdown {
  double reconstruction = 0;
  double kl = 0;
  double bow = 0;
  double act = 0;
  double kl_weight = 1;
  std::size_t token_count = 0;

  double total() const { return reconstruction + kl_weight * kl + bow + act; }

  LossBreakdown& operator+=(const LossBreakdown& o) {
    reconstruction += o.reconstruction;
    kl += o.kl;
    bow += o.bow;
    act += o.act;
    token_count += o.token_count;
    return *this;
  }
};

template <class T>
struct DecodeResult {
  double loss = 0;
  std::vector<std::vector<T>> logits;  // one row per predicted position (|x| + 1)
};

template <class T>
class DialogModel {
 public:
  using StepCache = Gru::StepCache<T>;
  using MlpCache = Mlp::Cache<T>;

  explicit DialogModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto E = cfg_.emb_dim, Hu = cfg_.utt_hidden, C = cfg_.context_dim(), Z = cfg_.latent_dim,
               A = cfg_.act_dim(), M = cfg_.mlp_hidden, V = cfg_.vocab_size;
    embedding_ = params_.add("embedding", {V, E});
    utt_fwd_ = Gru::create(params_, "utt_fwd", E, Hu);
    utt_bwd_ = Gru::create(params_, "utt_bwd", E, Hu);
    ctx_ = Gru::create(params_, "ctx", cfg_.utt_dim() + 1, cfg_.ctx_hidden);
    if (cfg_.latent()) {
      recog_ = Affine::create(params_, "recog", cfg_.utt_dim() + C + A, 2 * Z);
      prior_ = Mlp::create(params_, "prior", C, M, 2 * Z);
      if (cfg_.knowledge_guided()) act_ = Mlp::create(params_, "act", Z + C, M, A);
      if (cfg_.use_bow) bow_ = Mlp::create(params_, "bow", Z + C, M, V);
    }
    dec_init_ = Affine::create(params_, "dec_init", (cfg_.latent() ? Z : 0) + C + A, cfg_.dec_hidden);
    dec_ = Gru::create(params_, "dec", E + A, cfg_.dec_hidden);
    out_ = Affine::create(params_, "out", cfg_.dec_hidden, V);
  }

  const ModelConfig& config() const { return cfg_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }
  ParamId embedding_id() const { return embedding_; }

  // --- encoders -----------------------------------------------------------

  std::vector<T> encode_utterance(std::span<const int> ids) const { return encode_utterance_impl(ids, nullptr); }

  EncodedContext<T> encode_context(const EncodedPair& pair) const { return encode_context_impl(pair, nullptr); }

  // --- latent networks ----------------------------------------------------

  GaussianParams<T> recognition(std::span<const T> x_vec, const EncodedContext<T>& ctx,
                                std::optional<int> act = std::nullopt) const {
    require_latent("recognition");
    std::vector<T> in, raw;
    return recognition_impl(x_vec, ctx, act, in, raw);
  }

  GaussianParams<T> prior(const EncodedContext<T>& ctx) const {
    require_latent("prior");
    std::vector<T> raw;
    return prior_impl(ctx, nullptr, raw);
  }

  std::vector<T> predict_act(std::span<const T> z, const EncodedContext<T>& ctx) const {
    if (!cfg_.knowledge_guided()) throw ValidationError("predict_act requires the kgcvae variant");
    auto zc = concat(z, ctx.c);
    return act_.forward(params_, std::span<const T>(zc));
  }

  double bow_loss(std::span<const T> z, const EncodedContext<T>& ctx, std::span<const int> response) const {
    if (!cfg_.bow_enabled()) throw ValidationError("bow_loss requires a latent variant with the BOW loss enabled");
    if (response.empty()) {
      warn("bow_loss: empty bag of words");
      return 0.0;
    }
    auto zc = concat(z, ctx.c);
    auto f = bow_.forward(params_, std::span<const T>(zc));
    const double lse = numeric::log_sum_exp(std::span<const T>(f));
    double loss = 0.0;
    for (int t : response) loss += lse - static_cast<double>(f[check_token(t)]);
    return loss;
  }

  // --- decoder ------------------------------------------------------------

  /// Teacher-forced reconstruction: inputs BOS x_1..x_n, targets x_1..x_n EOS.
  /// z is ignored (and may be empty) for the baseline.
  DecodeResult<T> decode_teacher_forced(std::span<const T> z, const EncodedContext<T>& ctx, std::optional<int> act,
                                        std::span<const int> response) const {
    DecodeResult<T> res;
    DecoderCache dc;
    auto init_in = decoder_init_input(z, ctx, act);
    res.loss = decode_impl(init_in, act, response, dc);
    for (std::size_t t = 0; t < dc.probs.size(); ++t) {
      auto row = out_.forward(params_, std::span<const T>(dc.steps[t].h));
      res.logits.push_back(std::move(row));
    }
    return res;
  }

  std::vector<T> decoder_initial_state(std::span<const T> z, const EncodedContext<T>& ctx,
                                       std::optional<int> act) const {
    auto in = decoder_init_input(z, ctx, act);
    return dec_init_.forward(params_, std::span<const T>(in));
  }

  /// Feeds `token` and returns the next state; logits over the vocabulary
  /// for the following position are written to `logits`.
  std::vector<T> decoder_step(std::span<const T> state, int token, std::optional<int> act,
                              std::vector<T>& logits) const {
    auto x = decoder_input(token, act);
    auto h = dec_.step(params_, std::span<const T>(x), state);
    logits = out_.forward(params_, std::span<const T>(h));
    return h;
  }

  // --- full objective -----------------------------------------------------

  /// Negative (annealed) lower bound for one pair with fixed reparametrization
  /// noise. Pure: repeated calls agree bit for bit.
  LossBreakdown loss_total(const EncodedPair& pair, double kl_weight, std::span<const T> noise) const {
    ExampleCache cache;
    return forward(pair, kl_weight, noise, cache);
  }

  /// Adds scale * d total / d params to the gradient slots and returns the
  /// same breakdown loss_total would.
  LossBreakdown accumulate_gradients(const EncodedPair& pair, double kl_weight, std::span<const T> noise,
                                     double scale) {
    ExampleCache cache;
    auto lb = forward(pair, kl_weight, noise, cache);
    backward(pair, cache, kl_weight, scale);
    return lb;
  }

  /// Posterior q(z | x, c[, y]) for a pair (oracle act for kgcvae).
  GaussianParams<T> posterior(const EncodedPair& pair) const {
    require_latent("posterior");
    auto ctx = encode_context(pair);
    auto x = encode_utterance(pair.response);
    return recognition(std::span<const T>(x), ctx, oracle_act(pair));
  }

  std::optional<int> oracle_act(const EncodedPair& pair) const {
    if (!cfg_.knowledge_guided()) return std::nullopt;
    if (pair.act < 0 || static_cast<std::size_t>(pair.act) >= cfg_.num_acts)
      throw ValidationError("kgcvae needs a dialog act label for every response");
    return pair.act;
  }

 private:
  struct UttCache {
    std::vector<int> ids;
    std::vector<StepCache> fwd, bwd;  // bwd in processing order (last token first)
  };

  struct ContextCache {
    std::vector<UttCache> utts;
    std::vector<StepCache> steps;
  };

  struct DecoderCache {
    std::vector<T> init_in;
    std::vector<T> s0;
    std::vector<int> inputs, targets;
    std::vector<StepCache> steps;
    std::vector<std::vector<double>> probs;
  };

  struct ExampleCache {
    ContextCache ctx;
    EncodedContext<T> c;
    UttCache resp;
    std::vector<T> x_vec;
    std::vector<T> recog_in, recog_raw, prior_raw;
    MlpCache prior_cache, act_cache, bow_cache;
    GaussianParams<T> q, p;
    std::vector<T> eps, z;
    std::vector<double> act_probs, bow_probs;
    DecoderCache dec;
  };

  void require_latent(const char* what) const {
    if (!cfg_.latent()) throw ValidationError(std::string(what) + " is undefined for the baseline variant");
  }

  std::size_t check_token(int t) const {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size) throw ValidationError("token id out of range");
    return static_cast<std::size_t>(t);
  }

  static std::vector<T> concat(std::span<const T> a, std::span<const T> b) {
    std::vector<T> v(a.begin(), a.end());
    v.insert(v.end(), b.begin(), b.end());
    return v;
  }

  void append_one_hot(std::vector<T>& v, std::optional<int> act) const {
    if (!cfg_.knowledge_guided()) return;
    if (!act || *act < 0 || static_cast<std::size_t>(*act) >= cfg_.num_acts)
      throw ValidationError("kgcvae needs a valid dialog act (oracle or predicted)");
    const auto base = v.size();
    v.resize(base + cfg_.num_acts, T(0));
    v[base + static_cast<std::size_t>(*act)] = T(1);
  }

  std::span<const T> embedding_row(int id) const {
    return params_.value(embedding_).subspan(check_token(id) * cfg_.emb_dim, cfg_.emb_dim);
  }

  void add_embedding_grad(int id, const double* g) {
    auto row = params_.grad(embedding_).subspan(static_cast<std::size_t>(id) * cfg_.emb_dim, cfg_.emb_dim);
    for (std::size_t j = 0; j < cfg_.emb_dim; ++j) row[j] += static_cast<T>(g[j]);
  }

  std::vector<T> encode_utterance_impl(std::span<const int> ids, UttCache* cache) const {
    if (ids.empty()) throw ValidationError("encode_utterance: empty token sequence");
    const auto Hu = cfg_.utt_hidden;
    std::vector<T> hf(Hu, T(0)), hb(Hu, T(0));
    if (cache) {
      cache->ids.assign(ids.begin(), ids.end());
      cache->fwd.resize(ids.size());
      cache->bwd.resize(ids.size());
    }
    for (std::size_t t = 0; t < ids.size(); ++t)
      hf = utt_fwd_.step(params_, embedding_row(ids[t]), std::span<const T>(hf), cache ? &cache->fwd[t] : nullptr);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t t = ids.size() - 1 - k;
      hb = utt_bwd_.step(params_, embedding_row(ids[t]), std::span<const T>(hb), cache ? &cache->bwd[k] : nullptr);
    }
    return concat(hf, hb);
  }

  void utterance_backward(const UttCache& c, std::span<const double> du) {
    const auto Hu = cfg_.utt_hidden, E = cfg_.emb_dim;
    const std::size_t n = c.ids.size();
    std::vector<double> dh(du.begin(), du.begin() + static_cast<std::ptrdiff_t>(Hu)), dprev(Hu), dx(E);
    for (std::size_t k = n; k-- > 0;) {
      std::fill(dprev.begin(), dprev.end(), 0.0);
      std::fill(dx.begin(), dx.end(), 0.0);
      utt_fwd_.backward(params_, c.fwd[k], std::span<const double>(dh), std::span<double>(dx), std::span<double>(dprev));
      add_embedding_grad(c.ids[k], dx.data());
      dh.swap(dprev);
    }
    dh.assign(du.begin() + static_cast<std::ptrdiff_t>(Hu), du.end());
    for (std::size_t k = n; k-- > 0;) {
      std::fill(dprev.begin(), dprev.end(), 0.0);
      std::fill(dx.begin(), dx.end(), 0.0);
      utt_bwd_.backward(params_, c.bwd[k], std::span<const double>(dh), std::span<double>(dx), std::span<double>(dprev));
      add_embedding_grad(c.ids[n - 1 - k], dx.data());
      dh.swap(dprev);
    }
  }

  EncodedContext<T> encode_context_impl(const EncodedPair& pair, ContextCache* cache) const {
    if (pair.context.empty()) throw ValidationError("encode_context: empty context");
    if (pair.floors.size() != pair.context.size()) throw ShapeError("encode_context: floors/context length mismatch");
    if (pair.meta.size() != cfg_.meta_dim) throw ShapeError("encode_context: meta length does not match config");
    std::vector<T> h(cfg_.ctx_hidden, T(0));
    if (cache) {
      cache->utts.resize(pair.context.size());
      cache->steps.resize(pair.context.size());
    }
    for (std::size_t i = 0; i < pair.context.size(); ++i) {
      auto u = encode_utterance_impl(pair.context[i], cache ? &cache->utts[i] : nullptr);
      u.push_back(static_cast<T>(pair.floors[i]));
      h = ctx_.step(params_, std::span<const T>(u), std::span<const T>(h), cache ? &cache->steps[i] : nullptr);
    }
    EncodedContext<T> ctx;
    ctx.hc_dim = cfg_.ctx_hidden;
    ctx.c = std::move(h);
    for (float m : pair.meta) ctx.c.push_back(static_cast<T>(m));
    return ctx;
  }

  void context_backward(const ContextCache& c, std::span<const double> dc) {
    const auto Hc = cfg_.ctx_hidden, U = cfg_.utt_dim();
    std::vector<double> dh(dc.begin(), dc.begin() + static_cast<std::ptrdiff_t>(Hc)), dprev(Hc), dx(U + 1);
    for (std::size_t i = c.steps.size(); i-- > 0;) {
      std::fill(dprev.begin(), dprev.end(), 0.0);
      std::fill(dx.begin(), dx.end(), 0.0);
      ctx_.backward(params_, c.steps[i], std::span<const double>(dh), std::span<double>(dx), std::span<double>(dprev));
      utterance_backward(c.utts[i], std::span<const double>(dx).first(U));
      dh.swap(dprev);
    }
  }

  static GaussianParams<T> split_gaussian(const std::vector<T>& raw) {
    const auto Z = raw.size() / 2;
    return GaussianParams<T>(std::vector<T>(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(Z)),
                             std::vector<T>(raw.begin() + static_cast<std::ptrdiff_t>(Z), raw.end()));
  }

  GaussianParams<T> recognition_impl(std::span<const T> x_vec, const EncodedContext<T>& ctx, std::optional<int> act,
                                     std::vector<T>& in, std::vector<T>& raw) const {
    in = concat(x_vec, ctx.c);
    append_one_hot(in, act);
    raw = recog_.forward(params_, std::span<const T>(in));
    return split_gaussian(raw);
  }

  GaussianParams<T> prior_impl(const EncodedContext<T>& ctx, MlpCache* cache, std::vector<T>& raw) const {
    raw = prior_.forward(params_, std::span<const T>(ctx.c), cache);
    return split_gaussian(raw);
  }

  std::vector<T> decoder_init_input(std::span<const T> z, const EncodedContext<T>& ctx, std::optional<int> act) const {
    std::vector<T> in;
    if (cfg_.latent()) {
      if (z.size() != cfg_.latent_dim) throw ShapeError("decoder: latent vector has the wrong length");
      in.assign(z.begin(), z.end());
    }
    in.insert(in.end(), ctx.c.begin(), ctx.c.end());
    append_one_hot(in, act);
    return in;
  }

  std::vector<T> decoder_input(int token, std::optional<int> act) const {
    auto e = embedding_row(token);
    std::vector<T> x(e.begin(), e.end());
    append_one_hot(x, act);
    return x;
  }

  double decode_impl(const std::vector<T>& init_in, std::optional<int> act, std::span<const int> response,
                     DecoderCache& dc) const {
    dc.init_in = init_in;
    dc.s0 = dec_init_.forward(params_, std::span<const T>(init_in));
    dc.inputs.assign(1, corpus::Vocabulary::kBos);
    dc.inputs.insert(dc.inputs.end(), response.begin(), response.end());
    dc.targets.assign(response.begin(), response.end());
    dc.targets.push_back(corpus::Vocabulary::kEos);
    const std::size_t n = dc.targets.size();
    dc.steps.resize(n);
    dc.probs.resize(n);
    std::vector<T> h = dc.s0;
    double loss = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      auto x = decoder_input(dc.inputs[t], act);
      h = dec_.step(params_, std::span<const T>(x), std::span<const T>(h), &dc.steps[t]);
      auto logits = out_.forward(params_, std::span<const T>(h));
      dc.probs[t].resize(logits.size());
      const double lse = numeric::softmax_into(std::span<const T>(logits), std::span<double>(dc.probs[t]));
      loss += lse - static_cast<double>(logits[check_token(dc.targets[t])]);
    }
    return loss;
  }

  /// Returns d loss / d s0 after accumulating decoder gradients.
  std::vector<double> decoder_backward(const DecoderCache& dc, double scale) {
    const auto Hd = cfg_.dec_hidden, E = cfg_.emb_dim, V = cfg_.vocab_size;
    const std::size_t in_dim = E + cfg_.act_dim();
    std::vector<double> dh(Hd, 0.0), dprev(Hd), dx(in_dim), dlogits(V);
    for (std::size_t t = dc.steps.size(); t-- > 0;) {
      for (std::size_t v = 0; v < V; ++v) dlogits[v] = scale * dc.probs[t][v];
      dlogits[static_cast<std::size_t>(dc.targets[t])] -= scale;
      out_.backward(params_, std::span<const T>(dc.steps[t].h), std::span<const double>(dlogits), std::span<double>(dh));
      std::fill(dprev.begin(), dprev.end(), 0.0);
      std::fill(dx.begin(), dx.end(), 0.0);
      dec_.backward(params_, dc.steps[t], std::span<const double>(dh), std::span<double>(dx), std::span<double>(dprev));
      add_embedding_grad(dc.inputs[t], dx.data());
      dh.swap(dprev);
    }
    return dh;
  }

  LossBreakdown forward(const EncodedPair& pair, double kl_weight, std::span<const T> noise, ExampleCache& ec) const {
    LossBreakdown lb;
    lb.kl_weight = kl_weight;
    lb.token_count = pair.response.size() + 1;
    ec.c = encode_context_impl(pair, &ec.ctx);
    const auto act = oracle_act(pair);
    if (!cfg_.latent()) {
      auto in = decoder_init_input({}, ec.c, std::nullopt);
      lb.reconstruction = decode_impl(in, std::nullopt, pair.response, ec.dec);
      return lb;
    }
    if (noise.size() != cfg_.latent_dim) throw ShapeError("loss_total: noise length must equal latent_dim");
    ec.x_vec = encode_utterance_impl(pair.response, &ec.resp);
    ec.q = recognition_impl(std::span<const T>(ec.x_vec), ec.c, act, ec.recog_in, ec.recog_raw);
    ec.p = prior_impl(ec.c, &ec.prior_cache, ec.prior_raw);
    ec.eps.assign(noise.begin(), noise.end());
    ec.z = numeric::reparameterize(ec.q, noise);
    lb.kl = numeric::gaussian_kl(ec.q, ec.p);
    auto zc = concat(ec.z, ec.c.c);
    if (cfg_.knowledge_guided()) {
      auto logits = act_.forward(params_, std::span<const T>(zc), &ec.act_cache);
      ec.act_probs.resize(logits.size());
      const double lse = numeric::softmax_into(std::span<const T>(logits), std::span<double>(ec.act_probs));
      lb.act = lse - static_cast<double>(logits[static_cast<std::size_t>(*act)]);
    }
    if (cfg_.use_bow) {
      auto f = bow_.forward(params_, std::span<const T>(zc), &ec.bow_cache);
      ec.bow_probs.resize(f.size());
      const double lse = numeric::softmax_into(std::span<const T>(f), std::span<double>(ec.bow_probs));
      for (int t : pair.response) lb.bow += lse - static_cast<double>(f[check_token(t)]);
    }
    auto in = decoder_init_input(std::span<const T>(ec.z), ec.c, act);
    lb.reconstruction = decode_impl(in, act, pair.response, ec.dec);
    return lb;
  }

  void backward(const EncodedPair& pair, const ExampleCache& ec, double kl_weight, double scale) {
    const auto C = cfg_.context_dim(), Z = cfg_.latent_dim, U = cfg_.utt_dim();
    std::vector<double> ds0 = decoder_backward(ec.dec, scale);
    std::vector<double> d_init(ec.dec.init_in.size(), 0.0);
    dec_init_.backward(params_, std::span<const T>(ec.dec.init_in), std::span<const double>(ds0), std::span<double>(d_init));
    std::vector<double> dc(C, 0.0);
    if (!cfg_.latent()) {
      for (std::size_t i = 0; i < C; ++i) dc[i] = d_init[i];
      context_backward(ec.ctx, std::span<const double>(dc));
      return;
    }
    std::vector<double> dz(Z, 0.0);
    for (std::size_t i = 0; i < Z; ++i) dz[i] = d_init[i];
    for (std::size_t i = 0; i < C; ++i) dc[i] = d_init[Z + i];

    auto zc_backward = [&](const Mlp& mlp, const MlpCache& cache, const std::vector<double>& dy) {
      std::vector<double> dzc(Z + C, 0.0);
      mlp.backward(params_, cache, std::span<const double>(dy), std::span<double>(dzc));
      for (std::size_t i = 0; i < Z; ++i) dz[i] += dzc[i];
      for (std::size_t i = 0; i < C; ++i) dc[i] += dzc[Z + i];
    };
    if (cfg_.knowledge_guided()) {
      std::vector<double> dy(ec.act_probs.size());
      for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = scale * ec.act_probs[i];
      dy[static_cast<std::size_t>(pair.act)] -= scale;
      zc_backward(act_, ec.act_cache, dy);
    }
    if (cfg_.use_bow) {
      const double n = static_cast<double>(pair.response.size());
      std::vector<double> dy(ec.bow_probs.size());
      for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = scale * n * ec.bow_probs[i];
      for (int t : pair.response) dy[static_cast<std::size_t>(t)] -= scale;
      zc_backward(bow_, ec.bow_cache, dy);
    }

    std::vector<double> dq(2 * Z, 0.0), dp(2 * Z, 0.0);
    for (std::size_t i = 0; i < Z; ++i) {
      dq[i] += dz[i];
      dq[Z + i] += dz[i] * static_cast<double>(ec.eps[i]) * 0.5 * std::exp(0.5 * static_cast<double>(ec.q.log_var[i]));
    }
    numeric::gaussian_kl_backward(ec.q, ec.p, scale * kl_weight, dq.data(), dq.data() + Z, dp.data(), dp.data() + Z);
    for (std::size_t i = 0; i < Z; ++i) {
      if (!in_logvar_range(ec.recog_raw[Z + i])) dq[Z + i] = 0.0;
      if (!in_logvar_range(ec.prior_raw[Z + i])) dp[Z + i] = 0.0;
    }
    std::vector<double> d_recog_in(ec.recog_in.size(), 0.0);
    recog_.backward(params_, std::span<const T>(ec.recog_in), std::span<const double>(dq), std::span<double>(d_recog_in));
    for (std::size_t i = 0; i < C; ++i) dc[i] += d_recog_in[U + i];
    std::vector<double> d_prior_in(C, 0.0);
    prior_.backward(params_, ec.prior_cache, std::span<const double>(dp), std::span<double>(d_prior_in));
    for (std::size_t i = 0; i < C; ++i) dc[i] += d_prior_in[i];

    utterance_backward(ec.resp, std::span<const double>(d_recog_in).first(U));
    context_backward(ec.ctx, std::span<const double>(dc));
  }

  static bool in_logvar_range(T raw) {
    const double r = raw;
    return r >= numeric::kLogVarMin && r <= numeric::kLogVarMax;
  }

  ModelConfig cfg_;
  ModelParams<T> params_;
  ParamId embedding_;
  Gru utt_fwd_, utt_bwd_, ctx_, dec_;
  Affine recog_, dec_init_, out_;
  Mlp prior_, act_, bow_;
};

}  // namespace dialvae::model
