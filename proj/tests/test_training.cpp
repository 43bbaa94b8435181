#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "common.hpp"
#include "dialvae/training.hpp"

using namespace dialvae;
using namespace dialvae::training;
using model::ModelConfig;
using model::Variant;
using testutil::mini;
using testutil::random_pair;

namespace {

std::vector<corpus::EncodedPair> pairs(const ModelConfig& c, std::uint64_t seed, std::size_t n) {
  CounterRng r(seed);
  std::vector<corpus::EncodedPair> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(random_pair(r, c));
  return v;
}

TrainConfig quick(std::uint64_t steps = 20) {
  TrainConfig t;
  t.max_steps = steps;
  t.eval_interval = 5;
  t.batch_size = 4;
  t.anneal_batches = 10;
  t.seed = 9;
  return t;
}

}  // namespace

TEST(KlSchedule, LinearRampAndConstant) {
  TrainConfig t;
  t.anneal_batches = 10000;
  EXPECT_EQ(kl_weight(0, t), 0.0);
  EXPECT_EQ(kl_weight(5000, t), 0.5);
  EXPECT_EQ(kl_weight(10000, t), 1.0);
  EXPECT_EQ(kl_weight(20000, t), 1.0);
  for (std::uint64_t s = 1; s < 12000; ++s) EXPECT_GE(kl_weight(s, t), kl_weight(s - 1, t));
  t.schedule = Schedule::none;
  EXPECT_EQ(kl_weight(0, t), 1.0);
  EXPECT_EQ(kl_weight(123, t), 1.0);
}

TEST(KlSchedule, LoggedWeightsFollowTheRamp) {
  const auto c = mini(Variant::cvae);
  auto t = quick(30);
  Trainer tr(c, t, pairs(c, 1, 10), pairs(c, 2, 3));
  tr.run();
  ASSERT_EQ(tr.log().steps.size(), 30u);
  for (const auto& s : tr.log().steps) EXPECT_EQ(s.kl_weight, kl_weight(s.step, t));
}

TEST(TrainConfigJson, RoundTripAndValidation) {
  auto t = quick();
  t.schedule = Schedule::none;
  EXPECT_EQ(nlohmann::json(nlohmann::json(t).get<TrainConfig>()), nlohmann::json(t));
  EXPECT_THROW(parse_schedule("cosine"), ValidationError);
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ValidationError);
}

TEST(Batching, EachEpochVisitsEveryExampleOnce) {
  const auto c = mini(Variant::baseline);
  auto t = quick();
  t.batch_size = 3;
  const Trainer tr(c, t, pairs(c, 3, 10), pairs(c, 4, 2));
  ASSERT_EQ(tr.batches_per_epoch(), 4u);
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    std::multiset<std::size_t> seen;
    for (std::uint64_t b = 0; b < 4; ++b)
      for (auto i : tr.batch_indices(epoch * 4 + b)) seen.insert(i);
    EXPECT_EQ(seen.size(), 10u);
    EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 10u);
  }
  EXPECT_NE(tr.batch_indices(0), tr.batch_indices(4));
}

TEST(Batching, GradientIsTheMeanOfPerExampleGradients) {
  const auto c = mini(Variant::kgcvae);
  model::DialogModel<double> m(c);
  CounterRng r(5);
  numeric::init_uniform(m.params(), r, 0.3);
  const auto data = pairs(c, 6, 3);
  std::vector<std::vector<double>> eps(3, std::vector<double>(c.latent_dim));
  for (auto& e : eps) r.fill_normal(std::span<double>(e));

  m.params().zero_grad();
  for (std::size_t i = 0; i < 3; ++i) m.accumulate_gradients(data[i], 0.5, std::span<const double>(eps[i]), 1.0 / 3);
  std::vector<std::vector<double>> together;
  for (std::size_t k = 0; k < m.params().size(); ++k) {
    auto g = m.params().grad(m.params().id(k));
    together.emplace_back(g.begin(), g.end());
  }
  std::vector<std::vector<double>> sum(together.size());
  for (std::size_t k = 0; k < sum.size(); ++k) sum[k].assign(together[k].size(), 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    m.params().zero_grad();
    m.accumulate_gradients(data[i], 0.5, std::span<const double>(eps[i]), 1.0);
    for (std::size_t k = 0; k < sum.size(); ++k) {
      auto g = m.params().grad(m.params().id(k));
      for (std::size_t j = 0; j < g.size(); ++j) sum[k][j] += g[j] / 3;
    }
  }
  for (std::size_t k = 0; k < sum.size(); ++k)
    for (std::size_t j = 0; j < sum[k].size(); ++j) EXPECT_NEAR(together[k][j], sum[k][j], 1e-12);
}

TEST(Trainer, SameSeedGivesIdenticalRuns) {
  const auto c = mini(Variant::kgcvae);
  const auto tr_data = pairs(c, 7, 12), va = pairs(c, 8, 4);
  Trainer a(c, quick(), tr_data, va), b(c, quick(), tr_data, va);
  a.run();
  b.run();
  EXPECT_EQ(a.log().jsonl(), b.log().jsonl());
  EXPECT_TRUE(a.model().params().values_equal(b.model().params()));
  auto other = quick();
  other.seed = 10;
  Trainer d(c, other, tr_data, va);
  d.run();
  EXPECT_NE(a.log().jsonl(), d.log().jsonl());
}

TEST(Trainer, ResumeFromCheckpointMatchesUninterruptedRun) {
  for (auto v : {Variant::baseline, Variant::cvae, Variant::kgcvae}) {
    const auto c = mini(v);
    const auto tr_data = pairs(c, 11, 12), va = pairs(c, 12, 4);
    Trainer full(c, quick(), tr_data, va);
    full.run();

    Trainer first(c, quick(), tr_data, va);
    for (int i = 0; i < 7; ++i) first.step_once();
    const auto bytes = checkpoint::serialize(first.to_archive());
    Trainer second(c, quick(), tr_data, va);
    second.restore(checkpoint::deserialize(bytes));
    EXPECT_EQ(second.step(), 7u);
    second.run();

    EXPECT_EQ(second.log().jsonl(), full.log().jsonl()) << to_string(v);
    EXPECT_TRUE(second.model().params().values_equal(full.model().params()));
    EXPECT_TRUE(second.best_params().values_equal(full.best_params()));
    EXPECT_EQ(second.best_step(), full.best_step());
  }
}

TEST(Trainer, BestParametersComeFromTheLowestValidationBound) {
  const auto c = mini(Variant::cvae);
  auto t = quick(40);
  t.learning_rate = 0.05;
  const auto va = pairs(c, 14, 4);
  Trainer tr(c, t, pairs(c, 13, 12), va);
  tr.run();
  const auto& ev = tr.log().evals;
  ASSERT_EQ(ev.size(), 8u);
  const auto best = std::min_element(ev.begin(), ev.end(), [](auto& x, auto& y) { return x.valid_bound < y.valid_bound; });
  EXPECT_EQ(*tr.best_bound(), best->valid_bound);
  EXPECT_EQ(tr.best_step(), best->step);

  const auto m = model_from_archive(tr.best_archive());
  const auto r = evaluate_elbo(m, va, CounterRng(t.seed).derive(streams::kValidNoise));
  EXPECT_NEAR(r.bound, best->valid_bound, 1e-9);
}

TEST(Trainer, NonFiniteLossRaises) {
  const auto c = mini(Variant::cvae);
  Trainer tr(c, quick(), pairs(c, 15, 6), pairs(c, 16, 2));
  for (auto& x : tr.model().params().value(tr.model().params().at("out.W"))) x = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(tr.step_once(), TrainingError);
}

TEST(Trainer, ClippingIsAppliedAndLogged) {
  const auto c = mini(Variant::kgcvae);
  auto t = quick(5);
  t.clip_norm = 0.01;
  Trainer tr(c, t, pairs(c, 17, 6), pairs(c, 18, 2));
  tr.run();
  for (const auto& s : tr.log().steps) {
    ASSERT_GT(s.grad_norm, 0.01);
    EXPECT_NEAR(s.clip_scale, 0.01 / s.grad_norm, 1e-9);
  }
  const auto line = tr.log().lines.front();
  EXPECT_TRUE(line.contains("grad_norm"));
  EXPECT_TRUE(line.contains("clip_scale"));
}

TEST(Trainer, FrozenEmbeddingsDoNotMove) {
  const auto c = mini(Variant::cvae);
  auto t = quick(10);
  t.freeze_embeddings = true;
  Trainer tr(c, t, pairs(c, 19, 6), pairs(c, 20, 2));
  std::vector<float> e(c.vocab_size * c.emb_dim);
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = 0.01f * static_cast<float>(i % 7);
  tr.set_embeddings(e);
  const auto before = tr.model().params().cast<float>();
  tr.run();
  const auto id = tr.model().embedding_id();
  auto now = tr.model().params().value(id);
  EXPECT_TRUE(std::equal(now.begin(), now.end(), e.begin()));
  EXPECT_FALSE(tr.model().params().values_equal(before));
  EXPECT_THROW(tr.set_embeddings(std::vector<float>(3)), ShapeError);
}

TEST(Trainer, EmptySplitsAreRejected) {
  const auto c = mini(Variant::cvae);
  EXPECT_THROW(Trainer(c, quick(), {}, pairs(c, 1, 1)), ValidationError);
  EXPECT_THROW(Trainer(c, quick(), pairs(c, 1, 1), {}), ValidationError);
}

TEST(EvaluateElbo, ZeroParametersGiveVocabularySizedPerplexity) {
  for (auto v : {Variant::baseline, Variant::cvae, Variant::kgcvae}) {
    const auto c = mini(v);
    model::DialogModel<double> m(c);
    const auto r = evaluate_elbo(m, pairs(c, 21, 8), CounterRng(1));
    EXPECT_NEAR(r.perplexity, 20.0, 20.0 * 1e-4);
    EXPECT_EQ(r.kl_cost.has_value(), c.latent());
    if (r.kl_cost) {
      EXPECT_EQ(*r.kl_cost, 0.0);
    }
  }
}

TEST(EvaluateElbo, MatchesABruteForceSumOverExamples) {
  const auto c = mini(Variant::kgcvae);
  model::DialogModel<double> m(c);
  CounterRng init(22);
  numeric::init_uniform(m.params(), init, 0.4);
  const auto data = pairs(c, 23, 9);
  const CounterRng noise(77);
  double recon = 0, kl = 0, bound = 0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto s = noise.derive(i);
    std::vector<double> e(c.latent_dim);
    for (auto& x : e) x = s.normal();
    const auto lb = m.loss_total(data[i], 1.0, std::span<const double>(e));
    recon += lb.reconstruction;
    kl += lb.kl;
    bound += lb.reconstruction + lb.kl + lb.bow + lb.act;
    tokens += data[i].response.size() + 1;
  }
  const auto r = evaluate_elbo(m, data, noise);
  EXPECT_EQ(r.tokens, tokens);
  EXPECT_NEAR(r.perplexity, std::exp(recon / static_cast<double>(tokens)), 1e-9);
  EXPECT_NEAR(*r.kl_cost, kl / 9, 1e-12);
  EXPECT_NEAR(r.bound, bound / 9, 1e-12);
  EXPECT_THROW(evaluate_elbo(m, {}, noise), ValidationError);
}
