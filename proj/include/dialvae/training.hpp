#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dialvae/checkpoint.hpp"
#include "dialvae/corpus.hpp"
#include "dialvae/error.hpp"
#include "dialvae/model.hpp"
#include "dialvae/numeric.hpp"
#include "dialvae/rng.hpp"

namespace dialvae::training {

using json = nlohmann::json;
using corpus::EncodedPair;
using model::DialogModel;
using model::ModelConfig;

enum class Schedule { none, linear };

inline std::string to_string(Schedule s) { return s == Schedule::none ? "none" : "linear"; }

inline Schedule parse_schedule(const std::string& s) {
  if (s == "none") return Schedule::none;
  if (s == "linear") return Schedule::linear;
  throw ValidationError("unknown KL schedule '" + s + "' (expected none|linear)");
}

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 30;
  double clip_norm = 5.0;
  std::uint64_t anneal_batches = 10000;
  std::uint64_t max_steps = 30000;
  std::uint64_t eval_interval = 1000;
  std::uint64_t seed = 0;
  Schedule schedule = Schedule::linear;
  bool freeze_embeddings = false;
  double init_scale = 0.08;

  void validate() const {
    if (anneal_batches < 1) throw ValidationError("train config: anneal_batches must be at least 1");
    if (batch_size < 1) throw ValidationError("train config: batch_size must be at least 1");
    if (eval_interval < 1) throw ValidationError("train config: eval_interval must be at least 1");
    if (!(learning_rate > 0)) throw ValidationError("train config: learning_rate must be positive");
    if (!(clip_norm > 0)) throw ValidationError("train config: clip_norm must be positive");
  }
};

inline void to_json(json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},   {"clip_norm", c.clip_norm},
       {"anneal_batches", c.anneal_batches}, {"max_steps", c.max_steps},   {"eval_interval", c.eval_interval},
       {"seed", c.seed},                   {"schedule", to_string(c.schedule)}, {"freeze_embeddings", c.freeze_embeddings},
       {"init_scale", c.init_scale}};
}

inline void from_json(const json& j, TrainConfig& c) {
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
  };
  get("learning_rate", c.learning_rate);
  get("batch_size", c.batch_size);
  get("clip_norm", c.clip_norm);
  get("anneal_batches", c.anneal_batches);
  get("max_steps", c.max_steps);
  get("eval_interval", c.eval_interval);
  get("seed", c.seed);
  if (j.contains("schedule")) c.schedule = parse_schedule(j.at("schedule").get<std::string>());
  get("freeze_embeddings", c.freeze_embeddings);
  get("init_scale", c.init_scale);
}

inline double kl_weight(std::uint64_t step, const TrainConfig& cfg) {
  if (cfg.schedule == Schedule::none) return 1.0;
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.anneal_batches));
}

struct StepRecord {
  std::uint64_t step = 0;
  double reconstruction = 0, kl = 0, bow = 0, act = 0;
  double kl_weight = 0;
  double grad_norm = 0, clip_scale = 1;
  double recon_per_token = 0;
};

struct EvalRecord {
  std::uint64_t step = 0;
  double valid_bound = 0;
  double perplexity = 0;
  std::optional<double> kl_cost;
};

inline json to_json(const StepRecord& r) {
  return {{"type", "step"},         {"step", r.step},         {"reconstruction", r.reconstruction},
          {"kl", r.kl},             {"bow", r.bow},           {"act", r.act},
          {"kl_weight", r.kl_weight}, {"grad_norm", r.grad_norm}, {"clip_scale", r.clip_scale},
          {"recon_per_token", r.recon_per_token}};
}

inline json to_json(const EvalRecord& r) {
  json j = {{"type", "eval"}, {"step", r.step}, {"valid_bound", r.valid_bound}, {"perplexity", r.perplexity}};
  j["kl_cost"] = r.kl_cost ? json(*r.kl_cost) : json(nullptr);
  return j;
}

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::vector<json> lines;  // interleaved, in emission order

  void add(const StepRecord& r) {
    steps.push_back(r);
    lines.push_back(to_json(r));
  }
  void add(const EvalRecord& r) {
    evals.push_back(r);
    lines.push_back(to_json(r));
  }

  std::string jsonl() const {
    std::string s;
    for (const auto& l : lines) s += l.dump() + "\n";
    return s;
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write training log " + path.string());
    f << jsonl();
  }
};

struct ElboResult {
  double perplexity = 0;
  std::optional<double> kl_cost;
  double bound = 0;  // mean negative bound per example at KL weight 1
  double reconstruction = 0;
  std::size_t tokens = 0;
  std::size_t examples = 0;
};

/// Teacher-forced reconstruction perplexity and KL cost, one recognition sample
/// per example drawn from noise.derive(example index).
template <class T>
ElboResult evaluate_elbo(const DialogModel<T>& m, const std::vector<EncodedPair>& data, const CounterRng& noise) {
  if (data.empty()) throw ValidationError("evaluate_elbo: empty dataset");
  ElboResult r;
  double kl = 0, bound = 0;
  std::vector<T> eps(m.config().latent_dim);
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto stream = noise.derive(i);
    stream.fill_normal(std::span<T>(eps));
    const auto lb = m.loss_total(data[i], 1.0, std::span<const T>(eps));
    r.reconstruction += lb.reconstruction;
    r.tokens += lb.token_count;
    kl += lb.kl;
    bound += lb.total();
  }
  r.examples = data.size();
  r.perplexity = std::exp(r.reconstruction / static_cast<double>(r.tokens));
  if (m.config().latent()) r.kl_cost = kl / static_cast<double>(data.size());
  r.bound = bound / static_cast<double>(data.size());
  return r;
}

/// Owns one training run: model, optimizer, schedule position, and the best
/// parameters seen so far. All randomness hangs off CounterRng(seed) through
/// derived streams keyed by step or epoch, so a run resumed from to_archive()
/// continues exactly as the uninterrupted one.
class Trainer {
 public:
  Trainer(ModelConfig mcfg, TrainConfig tcfg, std::vector<EncodedPair> train, std::vector<EncodedPair> valid)
      : tcfg_(tcfg), model_(std::move(mcfg)), train_(std::move(train)), valid_(std::move(valid)), rng_(tcfg.seed) {
    tcfg_.validate();
    if (train_.empty()) throw ValidationError("train: empty training split");
    if (valid_.empty()) throw ValidationError("train: empty validation split");
    auto init = rng_.derive(streams::kInit);
    numeric::init_uniform(model_.params(), init, tcfg_.init_scale);
    adam_ = numeric::AdamState<float>(model_.params(), tcfg_.learning_rate);
    adam_.frozen[model_.embedding_id().index] = tcfg_.freeze_embeddings;
    best_params_ = model_.params().template cast<float>();
  }

  const TrainConfig& train_config() const { return tcfg_; }
  const DialogModel<float>& model() const { return model_; }
  DialogModel<float>& model() { return model_; }
  const TrainLog& log() const { return log_; }
  std::uint64_t step() const { return step_; }
  bool done() const { return step_ >= tcfg_.max_steps; }
  std::optional<double> best_bound() const { return best_bound_; }
  std::uint64_t best_step() const { return best_step_; }
  const numeric::ModelParams<float>& best_params() const { return best_params_; }

  /// Overwrites the embedding rows (row-major |V| x emb_dim).
  void set_embeddings(const std::vector<float>& values) {
    auto e = model_.params().value(model_.embedding_id());
    if (values.size() != e.size()) throw ShapeError("set_embeddings: matrix does not match vocabulary x emb_dim");
    std::copy(values.begin(), values.end(), e.begin());
    if (step_ == 0) best_params_.assign_values(model_.params());
  }

  std::size_t batches_per_epoch() const { return (train_.size() + tcfg_.batch_size - 1) / tcfg_.batch_size; }

  /// Indices of the batch used at `step` (stateless in the step).
  std::vector<std::size_t> batch_indices(std::uint64_t step) const {
    const auto nb = batches_per_epoch();
    const auto epoch = step / nb, pos = step % nb;
    std::vector<std::size_t> perm(train_.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    auto s = rng_.derive(streams::kShuffle, epoch);
    s.shuffle(perm);
    const auto lo = pos * tcfg_.batch_size, hi = std::min(train_.size(), lo + tcfg_.batch_size);
    return std::vector<std::size_t>(perm.begin() + static_cast<std::ptrdiff_t>(lo),
                                    perm.begin() + static_cast<std::ptrdiff_t>(hi));
  }

  void run() {
    while (!done()) step_once();
  }

  void step_once() {
    const std::uint64_t s = step_;
    const double kw = kl_weight(s, tcfg_);
    const auto idx = batch_indices(s);
    const double scale = 1.0 / static_cast<double>(idx.size());
    auto noise = rng_.derive(streams::kNoise, s);
    std::vector<float> eps(model_.config().latent_dim);
    model_.params().zero_grad();
    model::LossBreakdown sum;
    for (auto i : idx) {
      noise.fill_normal(std::span<float>(eps));
      sum += model_.accumulate_gradients(train_[i], kw, std::span<const float>(eps), scale);
    }
    StepRecord rec;
    rec.step = s;
    rec.reconstruction = sum.reconstruction * scale;
    rec.kl = sum.kl * scale;
    rec.bow = sum.bow * scale;
    rec.act = sum.act * scale;
    rec.kl_weight = kw;
    rec.recon_per_token = sum.reconstruction / static_cast<double>(sum.token_count);
    const double total = rec.reconstruction + kw * rec.kl + rec.bow + rec.act;
    if (!std::isfinite(total)) throw TrainingError("non-finite loss at step " + std::to_string(s));
    rec.grad_norm = numeric::global_grad_norm(model_.params());
    if (!std::isfinite(rec.grad_norm)) throw TrainingError("non-finite gradient at step " + std::to_string(s));
    rec.clip_scale = numeric::clip_gradients(model_.params(), tcfg_.clip_norm);
    numeric::adam_step(adam_, model_.params());
    log_.add(rec);
    ++step_;
    if (step_ % tcfg_.eval_interval == 0 || step_ == tcfg_.max_steps) evaluate(s);
  }

  ElboResult validate() const { return evaluate_elbo(model_, valid_, rng_.derive(streams::kValidNoise)); }

  // --- persistence --------------------------------------------------------

  /// Full resumable state: current and best parameters, Adam moments, position.
  checkpoint::Archive to_archive(const json& extra = json::object()) const {
    checkpoint::Archive a;
    a.meta = extra;
    a.meta["model"] = model_.config();
    a.meta["train"] = tcfg_;
    a.meta["step"] = step_;
    a.meta["rng"] = {{"key", rng_.state().key}, {"counter", rng_.state().counter}};
    a.meta["adam_step"] = adam_.step;
    a.meta["best_bound"] = best_bound_ ? json(*best_bound_) : json(nullptr);
    a.meta["best_step"] = best_step_;
    a.meta["log"] = log_.lines;
    checkpoint::append_params(a, model_.params());
    for (std::size_t i = 0; i < model_.params().size(); ++i) {
      const auto id = model_.params().id(i);
      const auto& name = model_.params().name(id);
      const auto& shape = model_.params().shape(id);
      a.tensors.push_back({"adam.m/" + name, shape, adam_.m[i]});
      a.tensors.push_back({"adam.v/" + name, shape, adam_.v[i]});
    }
    checkpoint::append_params(a, best_params_, "best/");
    return a;
  }

  /// Restores a state written by to_archive(); the data splits must be the same.
  void restore(const checkpoint::Archive& a) {
    checkpoint::restore_params(a, model_.params());
    checkpoint::restore_params(a, best_params_, "best/");
    for (std::size_t i = 0; i < model_.params().size(); ++i) {
      const auto& name = model_.params().name(model_.params().id(i));
      const auto* m = a.find("adam.m/" + name);
      const auto* v = a.find("adam.v/" + name);
      if (!m || !v) throw CorruptionError("checkpoint: missing optimizer state for '" + name + "'");
      adam_.m[i] = m->values;
      adam_.v[i] = v->values;
    }
    const auto& meta = a.meta;
    step_ = meta.at("step").get<std::uint64_t>();
    adam_.step = meta.at("adam_step").get<std::uint64_t>();
    rng_ = CounterRng::from_state({meta.at("rng").at("key").get<std::uint64_t>(),
                                   meta.at("rng").at("counter").get<std::uint64_t>()});
    best_bound_.reset();
    if (!meta.at("best_bound").is_null()) best_bound_ = meta.at("best_bound").get<double>();
    best_step_ = meta.at("best_step").get<std::uint64_t>();
    log_ = TrainLog{};
    for (const auto& l : meta.value("log", json::array())) {
      if (l.at("type") == "step") {
        StepRecord r;
        r.step = l.at("step");
        r.reconstruction = l.at("reconstruction");
        r.kl = l.at("kl");
        r.bow = l.at("bow");
        r.act = l.at("act");
        r.kl_weight = l.at("kl_weight");
        r.grad_norm = l.at("grad_norm");
        r.clip_scale = l.at("clip_scale");
        r.recon_per_token = l.at("recon_per_token");
        log_.add(r);
      } else {
        EvalRecord r;
        r.step = l.at("step");
        r.valid_bound = l.at("valid_bound");
        r.perplexity = l.at("perplexity");
        if (!l.at("kl_cost").is_null()) r.kl_cost = l.at("kl_cost").get<double>();
        log_.add(r);
      }
    }
  }

  /// Inference checkpoint holding the best parameters only.
  checkpoint::Archive best_archive(const json& extra = json::object()) const {
    checkpoint::Archive a;
    a.meta = extra;
    a.meta["model"] = model_.config();
    a.meta["train"] = tcfg_;
    a.meta["step"] = best_step_;
    a.meta["rng"] = {{"key", rng_.state().key}, {"counter", rng_.state().counter}};
    a.meta["valid_bound"] = best_bound_ ? json(*best_bound_) : json(nullptr);
    checkpoint::append_params(a, best_params_);
    return a;
  }

 private:
  void evaluate(std::uint64_t s) {
    const auto r = validate();
    EvalRecord e;
    e.step = s;
    e.valid_bound = r.bound;
    e.perplexity = r.perplexity;
    e.kl_cost = r.kl_cost;
    log_.add(e);
    if (!best_bound_ || r.bound < *best_bound_) {
      best_bound_ = r.bound;
      best_step_ = s;
      best_params_.assign_values(model_.params());
    }
  }

  TrainConfig tcfg_;
  DialogModel<float> model_;
  std::vector<EncodedPair> train_, valid_;
  CounterRng rng_;
  numeric::AdamState<float> adam_;
  numeric::ModelParams<float> best_params_;
  TrainLog log_;
  std::uint64_t step_ = 0;
  std::optional<double> best_bound_;
  std::uint64_t best_step_ = 0;
};

/// Loads the model stored in an inference (or full) checkpoint.
inline DialogModel<float> model_from_archive(const checkpoint::Archive& a) {
  DialogModel<float> m(a.meta.at("model").get<ModelConfig>());
  checkpoint::restore_params(a, m.params());
  return m;
}

}  // namespace dialvae::training
