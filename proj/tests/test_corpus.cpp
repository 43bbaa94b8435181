#include <gtest/gtest.h>

#include <sstream>

#include "common.hpp"
#include "dialvae/corpus.hpp"

using namespace dialvae;
using namespace dialvae::corpus;
using testutil::utt;

namespace {

Dialog dialog_of(std::size_t n, CounterRng& r) {
  Dialog d;
  d.topic = "t" + std::to_string(r.below(3));
  for (std::size_t i = 0; i < n; ++i)
    d.utterances.push_back(utt(r.below(2) ? "A" : "B", {"w" + std::to_string(r.below(20))}));
  return d;
}

}  // namespace

TEST(ParseCorpus, ReadsDialogsInOrderAndLowercases) {
  std::istringstream in(
      R"({"topic": "music", "utts": [{"speaker": "A", "tokens": ["Hello", "there"], "act": "greet"}, {"speaker": "B", "tokens": ["hi"]}]})"
      "\n\n"
      R"({"topic": "food", "utts": [{"speaker": "B", "tokens": ["x"], "sentiment": "positive"}, {"speaker": "A", "tokens": ["y"], "act": null}]})"
      "\n");
  const auto r = parse_corpus(in);
  ASSERT_EQ(r.dialogs.size(), 2u);
  EXPECT_EQ(r.dialogs[0].topic, "music");
  EXPECT_EQ(r.dialogs[1].topic, "food");
  EXPECT_EQ(r.dialogs[0].utterances[0].tokens, (std::vector<std::string>{"hello", "there"}));
  EXPECT_EQ(r.dialogs[0].utterances[0].dialog_act, "greet");
  EXPECT_FALSE(r.dialogs[1].utterances[1].dialog_act.has_value());
  EXPECT_EQ(r.dialogs[1].utterances[0].sentiment, "positive");
}

TEST(ParseCorpus, DropsUtterancesWithOnlyEmptyTokens) {
  std::istringstream in(
      R"({"topic": "t", "utts": [{"speaker": "A", "tokens": ["a"]}, {"speaker": "B", "tokens": ["", ""]}, {"speaker": "B", "tokens": ["b"]}]})"
      "\n");
  const auto r = parse_corpus(in);
  ASSERT_EQ(r.dialogs.size(), 1u);
  EXPECT_EQ(r.dialogs[0].utterances.size(), 2u);
  EXPECT_EQ(r.dropped_utterances, 1u);
}

TEST(ParseCorpus, RejectsMalformedLinesAndUnknownSpeakers) {
  std::istringstream bad("{not json\n");
  EXPECT_THROW(parse_corpus(bad), ParseError);
  std::istringstream spk(R"({"topic": "t", "utts": [{"speaker": "C", "tokens": ["a"]}, {"speaker": "A", "tokens": ["b"]}]})");
  EXPECT_THROW(parse_corpus(spk), ValidationError);
}

TEST(ParseCorpus, WriteCorpusRoundTrips) {
  testutil::TempDir dir;
  Dialog d;
  d.topic = "sports";
  d.utterances = {utt("A", {"go", "team"}, "statement"), utt("B", {"yes"})};
  d.utterances[1].sentiment = "positive";
  write_corpus(dir / "c.jsonl", {d, d});
  const auto r = load_corpus(dir / "c.jsonl");
  ASSERT_EQ(r.dialogs.size(), 2u);
  EXPECT_EQ(r.dialogs[1].utterances[0].tokens, d.utterances[0].tokens);
  EXPECT_EQ(r.dialogs[1].utterances[0].dialog_act, "statement");
  EXPECT_EQ(r.dialogs[1].utterances[1].sentiment, "positive");
}

TEST(BuildVocab, FrequencyRankAndCap) {
  Dialog d;
  d.utterances = {utt("A", {"a", "b", "a"}), utt("B", {"a"})};
  const auto v = build_vocab({d}, 10);
  EXPECT_EQ(v.encode("<pad>"), 0);
  EXPECT_EQ(v.encode("<unk>"), 1);
  EXPECT_EQ(v.encode("<s>"), 2);
  EXPECT_EQ(v.encode("</s>"), 3);
  EXPECT_EQ(v.encode("a"), 4);
  EXPECT_EQ(v.encode("b"), 5);
  EXPECT_EQ(v.size(), 6u);

  const auto one = build_vocab({d}, 1);
  EXPECT_EQ(one.size(), 5u);
  EXPECT_EQ(one.encode("a"), 4);
  EXPECT_EQ(one.encode("b"), Vocabulary::kUnk);
  EXPECT_THROW(build_vocab({d}, 0), ValidationError);
}

TEST(BuildVocab, BijectionDeterminismAndUnkRoundTrip) {
  CounterRng r(3);
  std::vector<Dialog> ds;
  for (int i = 0; i < 20; ++i) ds.push_back(dialog_of(2 + r.below(6), r));
  const auto v1 = build_vocab(ds, 12), v2 = build_vocab(ds, 12);
  EXPECT_EQ(v1.to_json(), v2.to_json());
  for (std::size_t id = 0; id < v1.size(); ++id) EXPECT_EQ(v1.encode(v1.decode(static_cast<int>(id))), static_cast<int>(id));
  const std::vector<std::string> s{"w1", "zzz", "w2"};
  const auto back = v1.decode(v1.encode(s));
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(back[i], v1.contains(s[i]) ? s[i] : "<unk>");
  EXPECT_EQ(Vocabulary::from_json(v1.to_json()).to_json(), v1.to_json());
}

TEST(MakePairs, Examples) {
  LabelSet topics({"t"});
  Dialog two;
  two.topic = "t";
  two.utterances = {utt("A", {"a"}), utt("B", {"b"})};
  const auto p2 = make_pairs(two, 10, topics);
  ASSERT_EQ(p2.size(), 1u);
  EXPECT_EQ(p2[0].context.size(), 1u);

  Dialog twelve;
  twelve.topic = "t";
  for (int i = 0; i < 12; ++i) twelve.utterances.push_back(utt(i % 2 ? "B" : "A", {"u" + std::to_string(i)}));
  const auto p12 = make_pairs(twelve, 10, topics);
  ASSERT_EQ(p12.size(), 11u);
  EXPECT_EQ(p12.back().context.size(), 9u);
  EXPECT_EQ(p12.back().context.front().tokens[0], "u2");

  Dialog aba;
  aba.topic = "t";
  aba.utterances = {utt("A", {"x"}), utt("B", {"y"}), utt("A", {"z"})};
  const auto p = make_pairs(aba, 10, topics);
  EXPECT_EQ(p[1].floors, (std::vector<int>{1, 0}));
  EXPECT_EQ(p[1].meta, (std::vector<float>{1.0f}));
}

TEST(MakePairs, SlicingIsExhaustiveAndFloorsMatchBruteForce) {
  CounterRng r(5);
  std::vector<Dialog> ds;
  std::size_t expected = 0;
  for (int i = 0; i < 62; ++i) {
    ds.push_back(dialog_of(2 + r.below(30), r));
    expected += ds.back().utterances.size() - 1;
  }
  const auto topics = collect_topics(ds);
  const auto pairs = make_pairs(ds, 10, topics);
  EXPECT_EQ(pairs.size(), expected);
  for (const auto& p : pairs) {
    ASSERT_EQ(p.floors.size(), p.context.size());
    EXPECT_LE(p.context.size(), 9u);
    EXPECT_GE(p.context.size(), 1u);
    for (std::size_t i = 0; i < p.context.size(); ++i)
      EXPECT_EQ(p.floors[i] == 1, p.context[i].speaker == p.response.speaker);
  }
}

TEST(MakePairs, TaggerFillsMissingActs) {
  LookupTagger tagger({{{"yes"}, "agree"}, {{"what", "now"}, "question"}});
  Dialog d;
  d.topic = "t";
  d.utterances = {utt("A", {"what", "now"}), utt("B", {"yes"}), utt("A", {"ok"}, "ack")};
  const auto p = make_pairs(d, 10, LabelSet({"t"}), &tagger);
  EXPECT_EQ(p[0].response_act, "agree");
  EXPECT_EQ(p[1].response_act, "ack");
  EXPECT_EQ(tagger.tag({"what", "now", "then"}), "question");
}

TEST(EncodePairs, UnknownActStaysNegative) {
  Dialog d;
  d.topic = "t";
  d.utterances = {utt("A", {"a"}), utt("B", {"b"}, "inform"), utt("A", {"c"}, "other")};
  const auto v = build_vocab({d}, 10);
  const auto e = encode_pairs(make_pairs(d, 10, LabelSet({"t"})), v, LabelSet({"inform"}));
  EXPECT_EQ(e[0].act, 0);
  EXPECT_EQ(e[1].act, -1);
  EXPECT_EQ(e[1].context.size(), 2u);
  EXPECT_EQ(e[1].response, (std::vector<int>{v.encode("c")}));
}

TEST(LoadEmbeddings, FullCoverageEmptyFileAndDimensionMismatch) {
  testutil::TempDir dir;
  Dialog d;
  d.utterances = {utt("A", {"a"}), utt("B", {"b"})};
  const auto v = build_vocab({d}, 10);
  testutil::write_text(dir / "e.txt", "a 0.5 -1 2\nb 3 4 5\n");
  const auto m = load_embeddings(dir / "e.txt", v, 3, CounterRng(1));
  EXPECT_EQ(m.coverage, 1.0);
  EXPECT_EQ(m.values[static_cast<std::size_t>(v.encode("a")) * 3 + 1], -1.0f);
  EXPECT_EQ(m.values[static_cast<std::size_t>(v.encode("b")) * 3 + 2], 5.0f);

  testutil::write_text(dir / "empty.txt", "");
  const auto z = load_embeddings(dir / "empty.txt", v, 200, CounterRng(1));
  EXPECT_EQ(z.coverage, 0.0);
  EXPECT_EQ(z.values.size(), v.size() * 200);
  for (float x : z.values) {
    EXPECT_GE(x, -0.08f);
    EXPECT_LE(x, 0.08f);
  }

  testutil::write_text(dir / "short.txt", "a 1 2 3\n");
  EXPECT_THROW(load_embeddings(dir / "short.txt", v, 200, CounterRng(1)), ValidationError);
}
