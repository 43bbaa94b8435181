#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "common.hpp"
#include "dialvae/evaluation.hpp"

using namespace dialvae;
using namespace dialvae::evaluation;
using testutil::utt;

namespace {

Tokens words(const std::string& s) {
  Tokens t;
  std::istringstream in(s);
  for (std::string w; in >> w;) t.push_back(w);
  return t;
}

corpus::ContextResponsePair crp(const std::string& topic, std::vector<Tokens> ctx, int last_floor, Tokens resp,
                                std::string act = "") {
  corpus::ContextResponsePair p;
  p.topic = topic;
  for (auto& c : ctx) p.context.push_back(utt("A", c));
  p.floors.assign(p.context.size(), 0);
  p.floors.back() = last_floor;
  p.response = utt("B", std::move(resp));
  p.response_act = std::move(act);
  return p;
}

}  // namespace

TEST(Bleu, HandComputedValues) {
  const auto r = words("the cat sat"), h = words("the cat");
  EXPECT_NEAR(dist_bleu(r, h, 1), std::exp(1.0 - 3.0 / 2.0), 1e-12);
  EXPECT_NEAR(dist_bleu(r, h, 2), std::exp(1.0 - 3.0 / 2.0), 1e-12);
  // order 3: no trigram in h, smoothed to (0 + 1) / (0 + 1)
  EXPECT_NEAR(dist_bleu(r, h, 3), std::exp(-0.5), 1e-12);
  EXPECT_DOUBLE_EQ(dist_bleu(r, r, 4), 1.0);
  EXPECT_EQ(dist_bleu(words("a b"), words("c d"), 2), 0.0);
  // hyp longer than ref: no brevity penalty. unigram 2/3, bigram (1+1)/(2+1)
  EXPECT_NEAR(dist_bleu(words("a b"), words("a b c"), 2), std::sqrt(2.0 / 3.0 * 2.0 / 3.0), 1e-12);
  ScopedWarningSink quiet;
  EXPECT_EQ(dist_bleu({}, h, 1), 0.0);
  EXPECT_THROW(dist_bleu(r, h, 5), ValidationError);
}

TEST(Bleu, AlwaysInTheUnitInterval) {
  CounterRng rng(1);
  ScopedWarningSink quiet;
  for (int t = 0; t < 2000; ++t) {
    Tokens a(rng.below(6)), b(1 + rng.below(6));
    for (auto& w : a) w = std::string(1, static_cast<char>('a' + rng.below(4)));
    for (auto& w : b) w = std::string(1, static_cast<char>('a' + rng.below(4)));
    for (int n = 1; n <= 4; ++n) {
      const double d = dist_bleu(a, b, n);
      EXPECT_GE(d, 0.0);
      EXPECT_LE(d, 1.0);
    }
  }
}

TEST(EmbeddingDistances, HandExamples) {
  const EmbeddingTable t({{"a", {1, 0}}, {"b", {0, 1}}, {"c", {-1, 0}}, {"d", {-2, 1}}}, 2);
  EXPECT_DOUBLE_EQ(dist_bow_embedding({"a"}, {"a"}, BowMode::average, t), 1.0);
  EXPECT_DOUBLE_EQ(dist_bow_embedding({"a"}, {"b"}, BowMode::average, t), 0.5);
  EXPECT_DOUBLE_EQ(dist_bow_embedding({"a"}, {"c"}, BowMode::average, t), 0.0);
  EXPECT_EQ(sentence_vector({"a", "d"}, BowMode::extrema, t), (std::vector<double>{-2, 1}));
  EXPECT_EQ(sentence_vector({"a", "b", "zz"}, BowMode::average, t), (std::vector<double>{0.5, 0.5}));
  ScopedWarningSink quiet;
  EXPECT_DOUBLE_EQ(dist_bow_embedding({"zz"}, {"a"}, BowMode::average, t), 0.5);
  EXPECT_THROW(EmbeddingTable({{"a", {1}}}, 2), ValidationError);
}

TEST(EmbeddingDistances, LoadFromFile) {
  testutil::TempDir d;
  testutil::write_text(d / "e.txt", "a 1 0\n<unk> 0 3\n");
  const auto t = EmbeddingTable::load(d / "e.txt");
  EXPECT_EQ(t.dim(), 2u);
  EXPECT_EQ(t.unk(), (std::vector<double>{0, 3}));
  EXPECT_DOUBLE_EQ(dist_bow_embedding({"a"}, {"qq"}, BowMode::extrema, t), 0.5);
}

TEST(DialogActDistance, ExactMatchAndMissingLabels) {
  EXPECT_EQ(dist_da("ask", "ask"), 1.0);
  EXPECT_EQ(dist_da("ask", "tell"), 0.0);
  EXPECT_THROW(dist_da(std::nullopt, "ask"), ValidationError);
  EXPECT_THROW(dist_da("", "ask"), ValidationError);
  EXPECT_EQ(distances_for("all", nullptr).size(), 7u);
  EXPECT_THROW(distances_for("rouge", nullptr), ValidationError);
}

TEST(PrecRecall, HandExample) {
  const auto pr = prec_recall(std::vector<std::vector<double>>{{1, 0}, {0, 1}, {0.5, 0.5}});
  EXPECT_DOUBLE_EQ(pr.precision, 1.0);
  EXPECT_NEAR(pr.recall, 2.5 / 3.0, 1e-15);
  EXPECT_THROW(prec_recall(std::vector<std::vector<double>>{}), ValidationError);
  EXPECT_THROW(prec_recall(std::vector<std::vector<double>>{{1, 0}, {1}}), ShapeError);
}

TEST(PrecRecall, MatchesBruteForceAndDuplicatesNeverChangeRecall) {
  CounterRng r(2);
  for (int t = 0; t < 300; ++t) {
    const std::size_t M = 1 + r.below(6), N = 1 + r.below(6);
    std::vector<std::vector<double>> d(M, std::vector<double>(N));
    for (auto& row : d)
      for (auto& x : row) x = r.uniform();
    double p = 0, q = 0;
    for (std::size_t i = 0; i < N; ++i) {
      double b = 0;
      for (std::size_t j = 0; j < M; ++j) b = std::max(b, d[j][i]);
      p += b / N;
    }
    for (std::size_t j = 0; j < M; ++j) q += *std::max_element(d[j].begin(), d[j].end()) / M;
    const auto pr = prec_recall(d);
    EXPECT_NEAR(pr.precision, p, 1e-12);
    EXPECT_NEAR(pr.recall, q, 1e-12);

    auto dup = d;
    const auto k = r.below(N);
    for (auto& row : dup) row.push_back(row[k]);
    EXPECT_DOUBLE_EQ(prec_recall(dup).recall, pr.recall);
    auto more = d;
    for (auto& row : more) row.push_back(r.uniform());
    EXPECT_GE(prec_recall(more).recall, pr.recall);
  }
}

TEST(ReferenceSets, DeduplicateAndRoundTrip) {
  ReferenceSet s;
  s.context_id = 3;
  EXPECT_TRUE(s.add({{"a"}, "x"}));
  EXPECT_FALSE(s.add({{"a"}, "y"}));
  EXPECT_TRUE(s.add({{"b"}, std::nullopt}));
  testutil::TempDir d;
  testutil::write_text(d / "refs.jsonl", to_json(s).dump() + "\n");
  const auto back = load_references(d / "refs.jsonl");
  ASSERT_EQ(back.count(3), 1u);
  EXPECT_EQ(back.at(3).refs.size(), 2u);
  EXPECT_EQ(back.at(3).refs[0].act, "x");
  EXPECT_FALSE(back.at(3).refs[1].act.has_value());
}

TEST(Tfidf, TopicAndFloorGateTheSimilarity) {
  const std::vector<corpus::ContextResponsePair> train{
      crp("music", {words("i like jazz")}, 0, words("me too")),
      crp("food", {words("i like jazz")}, 0, words("eat")),
      crp("music", {words("i like jazz")}, 1, words("ok")),
      crp("music", {words("rock is loud")}, 0, words("yes")),
  };
  const TfidfIndex idx(train);
  const auto q = crp("music", {words("i like jazz")}, 0, words("?"));
  const auto qv = idx.vectorize(q);
  EXPECT_NEAR(idx.similarity(q, qv, 0), 1.0, 1e-12);
  EXPECT_EQ(idx.similarity(q, qv, 1), 0.0);
  EXPECT_EQ(idx.similarity(q, qv, 2), 0.0);
  EXPECT_EQ(idx.similarity(q, qv, 3), 0.0);
  const auto nn = idx.nearest(q, 10);
  ASSERT_EQ(nn.size(), 1u);
  EXPECT_EQ(nn[0].first, 0u);

  const auto refs = collect_references(7, q, idx, train);
  EXPECT_EQ(refs.context_id, 7u);
  ASSERT_EQ(refs.refs.size(), 2u);
  EXPECT_EQ(refs.refs[0].tokens, words("?"));
  EXPECT_EQ(refs.refs[1].tokens, words("me too"));
}

TEST(Tfidf, RankingMatchesABruteForceCosine) {
  CounterRng r(3);
  auto sent = [&] {
    Tokens t(1 + r.below(5));
    for (auto& w : t) w = "w" + std::to_string(r.below(12));
    return t;
  };
  std::vector<corpus::ContextResponsePair> train;
  for (int i = 0; i < 80; ++i)
    train.push_back(crp("t" + std::to_string(r.below(2)), {sent(), sent()}, static_cast<int>(r.below(2)), sent()));
  const TfidfIndex idx(train);

  std::map<std::string, double> df;
  for (const auto& p : train) {
    std::set<std::string> s;
    for (const auto& u : p.context) s.insert(u.tokens.begin(), u.tokens.end());
    for (const auto& w : s) df[w] += 1;
  }
  auto vec = [&](const corpus::ContextResponsePair& p) {
    std::map<std::string, double> v;
    for (const auto& u : p.context)
      for (const auto& w : u.tokens)
        if (df.count(w)) v[w] += std::log(80.0 / df[w]);
    return v;
  };
  auto cosine = [](const auto& a, const auto& b) {
    double ab = 0, aa = 0, bb = 0;
    for (const auto& [k, x] : a) {
      aa += x * x;
      if (auto it = b.find(k); it != b.end()) ab += x * it->second;
    }
    for (const auto& [k, y] : b) bb += y * y;
    return aa && bb ? ab / std::sqrt(aa * bb) : 0.0;
  };
  for (int t = 0; t < 20; ++t) {
    const auto q = crp("t" + std::to_string(r.below(2)), {sent()}, static_cast<int>(r.below(2)), sent());
    std::vector<std::pair<std::size_t, double>> want;
    for (std::size_t j = 0; j < train.size(); ++j) {
      if (train[j].topic != q.topic || train[j].floors.back() != q.floors.back()) continue;
      const double s = cosine(vec(q), vec(train[j]));
      if (s > 0) want.emplace_back(j, s);
    }
    std::stable_sort(want.begin(), want.end(), [](auto& a, auto& b) { return a.second > b.second; });
    if (want.size() > 5) want.resize(5);
    const auto got = idx.nearest(q, 5);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i].second, want[i].second, 1e-9);
  }
}

TEST(Report, KeysAndTaggerFill) {
  std::map<std::size_t, std::vector<Utt>> gens{{0, {{{"yes"}, std::nullopt}, {{"no"}, std::nullopt}}}, {5, {{{"x"}, {}}}}};
  std::map<std::size_t, ReferenceSet> refs;
  refs[0].context_id = 0;
  refs[0].add({{"yes"}, "agree"});
  corpus::LookupTagger tagger({{{"yes"}, "agree"}, {{"no"}, "disagree"}});
  std::vector<std::string> warnings;
  ScopedWarningSink sink([&](const std::string& w) { warnings.push_back(w); });
  const auto rep = evaluate_report(gens, refs, distances_for("da", nullptr), &tagger);
  EXPECT_EQ(rep.at("contexts"), 1);
  EXPECT_DOUBLE_EQ(rep.at("da_prec").get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(rep.at("da_rec").get<double>(), 1.0);
  for (const char* k : {"perplexity", "kl_cost", "bleu1_prec", "bleu4_rec", "abow_prec", "ebow_rec"}) {
    ASSERT_TRUE(rep.contains(k)) << k;
    EXPECT_TRUE(rep.at(k).is_null()) << k;
  }
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_THROW(evaluate_report({{9, {{{"x"}, {}}}}}, refs, distances_for("da", nullptr), &tagger), ValidationError);
}

TEST(Probe, SeparableDataIsLearnedAndShuffledLabelsAreNear) {
  CounterRng r(4);
  std::vector<std::vector<double>> z;
  std::vector<std::string> y, shuffled;
  for (int i = 0; i < 1000; ++i) {
    const int c = static_cast<int>(r.below(3));
    z.push_back({3.0 * c + 0.3 * r.normal(), r.normal()});
    y.push_back("c" + std::to_string(c));
  }
  const auto res = latent_probe(z, y);
  EXPECT_GE(res.accuracy, 0.99);
  EXPECT_EQ(res.classes, 3u);
  EXPECT_DOUBLE_EQ(res.chance, 1.0 / 3.0);
  EXPECT_EQ(res.train_size, 800u);
  EXPECT_EQ(res.test_size, 200u);

  shuffled = y;
  r.shuffle(shuffled);
  const auto noise = latent_probe(z, shuffled);
  EXPECT_LT(std::abs(noise.accuracy - 1.0 / 3.0), 0.12);
  EXPECT_THROW(latent_probe(z, std::vector<std::string>(1000, "one")), ValidationError);
  EXPECT_THROW(latent_probe(z, {"a"}), ShapeError);
}

TEST(Consistency, RiggedActHeadGivesKnownAgreement) {
  auto c = testutil::mini(model::Variant::kgcvae);
  c.num_acts = 2;
  model::DialogModel<double> m(c);
  auto& p = m.params();
  for (std::size_t i = 0; i < p.size(); ++i)
    for (auto& v : p.value(p.id(i))) v = 0.0;
  CounterRng r(5);
  std::vector<corpus::EncodedPair> data;
  for (int i = 0; i < 6; ++i) data.push_back(testutil::random_pair(r, c));
  const auto vocab = corpus::Vocabulary::from_tokens({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "q"});
  const corpus::LabelSet acts({"ask", "tell"});
  struct Fixed : corpus::ActTagger {
    std::string tag(const std::vector<std::string>&) const override { return "tell"; }
  } tagger;

  p.value(p.at("act.output.b"))[1] = 5.0;
  auto res = consistency_accuracy(m, data, tagger, vocab, acts, CounterRng(1));
  EXPECT_EQ(res.accuracy, 1.0);
  EXPECT_EQ(res.total, 6u);
  EXPECT_TRUE(res.confusions.empty());

  p.value(p.at("act.output.b"))[0] = 10.0;
  res = consistency_accuracy(m, data, tagger, vocab, acts, CounterRng(1));
  EXPECT_EQ(res.accuracy, 0.0);
  ASSERT_EQ(res.confusions.size(), 1u);
  EXPECT_EQ(res.confusions[0].first.first, "ask");
  EXPECT_EQ(res.confusions[0].second, 6u);

  model::DialogModel<double> cvae(testutil::mini(model::Variant::cvae));
  EXPECT_THROW(consistency_accuracy(cvae, data, tagger, vocab, acts, CounterRng(1)), ValidationError);
}

TEST(ExportLatents, RowsArePosteriorMeans) {
  const auto c = testutil::mini(model::Variant::cvae);
  model::DialogModel<double> m(c);
  CounterRng r(6);
  numeric::init_uniform(m.params(), r, 0.3);
  std::vector<corpus::EncodedPair> data;
  std::vector<corpus::ContextResponsePair> raw;
  for (int i = 0; i < 4; ++i) {
    data.push_back(testutil::random_pair(r, c));
    raw.push_back(crp("t", {{"x"}}, 0, Tokens(data.back().response.size(), "w"), i % 2 ? "ask" : ""));
    raw.back().response.sentiment = "positive";
  }
  const auto rows = export_latents(m, raw, data);
  const auto means = posterior_means(m, data);
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto z = rows[i].at("z").get<std::vector<float>>();
    for (std::size_t d = 0; d < z.size(); ++d) EXPECT_EQ(z[d], static_cast<float>(means[i][d]));
    EXPECT_EQ(rows[i].at("sentiment"), "positive");
    EXPECT_EQ(rows[i].at("length"), data[i].response.size());
  }
  EXPECT_TRUE(rows[0].at("act").is_null());
  EXPECT_EQ(rows[1].at("act"), "ask");
  model::DialogModel<double> base(testutil::mini(model::Variant::baseline));
  EXPECT_THROW(export_latents(base, raw, data), ValidationError);
}
