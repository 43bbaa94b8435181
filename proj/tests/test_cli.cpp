#include <gtest/gtest.h>

#include <sstream>

#include "common.hpp"
#include "dialvae/cli.hpp"

using namespace dialvae;
using testutil::read_text;
using testutil::TempDir;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  return {code, o.str(), e.str()};
}

std::string p(const std::filesystem::path& x) { return x.string(); }

/// synth latent8 + a small model config, shared by the pipeline tests.
struct Pipeline {
  TempDir dir;
  std::filesystem::path data, config;

  Pipeline() {
    data = dir / "data";
    config = dir / "small.json";
    testutil::write_text(config, R"({"model": {"emb_dim": 8, "utt_hidden": 8, "ctx_hidden": 8, "dec_hidden": 12,
      "latent_dim": 4, "mlp_hidden": 8}, "train": {"eval_interval": 5}})");
    const auto r = invoke({"synth", "--kind", "latent8", "--pairs", "60", "--seed", "2", "--out", p(data)});
    if (r.code != 0) throw std::runtime_error("synth failed: " + r.err);
  }

  Result train(const std::string& out, std::vector<std::string> extra = {}, const std::string& steps = "12") {
    std::vector<std::string> a{"train",        "--config", p(config), "--train-data", p(data / "train.jsonl"),
                               "--valid-data", p(data / "valid.jsonl"), "--tagger", p(data / "tagger.json"),
                               "--variant",    "kgcvae",   "--steps",  steps,        "--seed", "4",
                               "--out",        out};
    a.insert(a.end(), extra.begin(), extra.end());
    return invoke(a);
  }
};

}  // namespace

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(invoke({}).code, 1);
  const auto unknown = invoke({"frobnicate"});
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.err.find("unknown subcommand"), std::string::npos);
  EXPECT_NE(unknown.err.find("train"), std::string::npos);
  EXPECT_EQ(invoke({"train", "--no-such-flag", "1"}).code, 1);
  EXPECT_EQ(invoke({"synth", "--pairs", "many"}).code, 1);
  EXPECT_EQ(invoke({"generate", "--data", "x.jsonl"}).code, 1);
  EXPECT_EQ(invoke({"replay"}).code, 1);
}

TEST(Cli, HelpExitsWithZero) {
  const auto r = invoke({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"prep", "train", "generate", "evaluate", "collect-refs", "export-latents", "probe", "replay"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  EXPECT_EQ(invoke({"train", "--help"}).code, 0);
}

TEST(Cli, ConfigFilesRejectUnknownKeysAndWrongTypes) {
  TempDir d;
  testutil::write_text(d / "bad.json", R"({"pairs": 10, "colour": "red"})");
  EXPECT_EQ(invoke({"synth", "--config", p(d / "bad.json"), "--out", p(d / "o")}).code, 1);
  testutil::write_text(d / "typed.json", R"({"pairs": "ten"})");
  EXPECT_EQ(invoke({"synth", "--config", p(d / "typed.json"), "--out", p(d / "o")}).code, 1);
  testutil::write_text(d / "ok.json", R"({"pairs": 10, "kind": "mem50"})");
  EXPECT_EQ(invoke({"synth", "--config", p(d / "ok.json"), "--pairs", "12", "--out", p(d / "o")}).code, 0);
  const auto m = nlohmann::json::parse(read_text(d / "o" / "manifest.json"));
  EXPECT_EQ(m.at("config").at("pairs"), 12);
  EXPECT_EQ(m.at("config").at("kind"), "mem50");
  EXPECT_EQ(corpus::load_corpus(d / "o" / "train.jsonl").dialogs.size(), 12u);
}

TEST(Cli, MissingInputIsAValidationErrorAndCorruptCheckpointARuntimeFailure) {
  TempDir d;
  const auto r = invoke({"prep", "--train-data", p(d / "absent.jsonl"), "--out", p(d / "o")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("absent.jsonl"), std::string::npos);

  testutil::write_text(d / "bad.ckpt", "DVCK garbage");
  ASSERT_EQ(invoke({"synth", "--kind", "mem50", "--out", p(d / "m")}).code, 0);
  const auto c = invoke({"generate", "--checkpoint", p(d / "bad.ckpt"), "--data", p(d / "m" / "test.jsonl"), "--out",
                         p(d / "g")});
  EXPECT_EQ(c.code, 2);
  EXPECT_NE(c.err.find("checkpoint"), std::string::npos);
}

TEST(Cli, TrainingTwiceGivesIdenticalLogsAndCheckpoints) {
  Pipeline pl;
  ASSERT_EQ(pl.train(p(pl.dir / "a")).code, 0);
  ASSERT_EQ(pl.train(p(pl.dir / "b")).code, 0);
  for (const char* f : {"train_log.jsonl", "model.ckpt", "last.ckpt", "vocab.json", "labels.json"})
    EXPECT_EQ(read_text(pl.dir / "a" / f), read_text(pl.dir / "b" / f)) << f;
  const auto log = read_text(pl.dir / "a" / "train_log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 12 + 3);
}

TEST(Cli, ResumeContinuesToTheSameResult) {
  Pipeline pl;
  ASSERT_EQ(pl.train(p(pl.dir / "full")).code, 0);
  // the interrupted run stops on an eval boundary so its final eval is one the full run also makes
  ASSERT_EQ(pl.train(p(pl.dir / "half"), {}, "10").code, 0);
  const auto r = pl.train(p(pl.dir / "rest"), {"--resume", p(pl.dir / "half" / "last.ckpt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_text(pl.dir / "rest" / "train_log.jsonl"), read_text(pl.dir / "full" / "train_log.jsonl"));
  EXPECT_EQ(read_text(pl.dir / "rest" / "model.ckpt"), read_text(pl.dir / "full" / "model.ckpt"));
  const auto bad = pl.train(p(pl.dir / "x"), {"--resume", p(pl.dir / "half" / "last.ckpt"), "--variant", "cvae"});
  EXPECT_EQ(bad.code, 1);
}

TEST(Cli, FullPipelineWritesReportsAndReplays) {
  Pipeline pl;
  const auto d = pl.data;
  const auto run = pl.dir / "run";
  ASSERT_EQ(pl.train(p(run)).code, 0);

  std::map<std::string, std::string> before;
  for (const auto& e : std::filesystem::directory_iterator(d)) before[e.path().filename()] = read_text(e.path());

  auto g = invoke({"generate", "--checkpoint", p(run / "model.ckpt"), "--data", p(d / "test.jsonl"), "--n-samples", "3",
                "--seed", "5", "--out", p(pl.dir / "gen")});
  ASSERT_EQ(g.code, 0) << g.err;
  const auto gens = evaluation::load_generations(pl.dir / "gen" / "generations.jsonl");
  EXPECT_EQ(gens.size(), 6u);
  EXPECT_EQ(gens.begin()->second.size(), 3u);

  auto refs = invoke({"collect-refs", "--train-data", p(d / "train.jsonl"), "--test-data", p(d / "test.jsonl"),
                   "--tagger", p(d / "tagger.json"), "--out", p(pl.dir / "refs")});
  ASSERT_EQ(refs.code, 0) << refs.err;
  EXPECT_EQ(evaluation::load_references(pl.dir / "refs" / "refs.jsonl").size(), 6u);

  auto ev = invoke({"evaluate", "--generations", p(pl.dir / "gen" / "generations.jsonl"), "--refs", p(d / "refs.jsonl"),
                 "--embeddings", p(d / "embeddings.txt"), "--tagger", p(d / "tagger.json"), "--checkpoint",
                 p(run / "model.ckpt"), "--data", p(d / "test.jsonl"), "--out", p(pl.dir / "eval")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto rep = nlohmann::json::parse(read_text(pl.dir / "eval" / "report.json"));
  for (const char* k : {"perplexity", "kl_cost", "bleu1_prec", "bleu1_rec", "bleu4_prec", "bleu4_rec", "abow_prec",
                        "abow_rec", "ebow_prec", "ebow_rec", "da_prec", "da_rec"}) {
    ASSERT_TRUE(rep.contains(k)) << k;
    EXPECT_TRUE(rep.at(k).is_number()) << k;
  }

  auto lat = invoke({"export-latents", "--checkpoint", p(run / "model.ckpt"), "--data", p(d / "train.jsonl"), "--out",
                  p(pl.dir / "lat")});
  ASSERT_EQ(lat.code, 0) << lat.err;
  auto pr = invoke({"probe", "--latents", p(pl.dir / "lat" / "latents.jsonl"), "--out", p(pl.dir / "probe")});
  ASSERT_EQ(pr.code, 0) << pr.err;
  const auto probe = nlohmann::json::parse(read_text(pl.dir / "probe" / "probe.json"));
  EXPECT_DOUBLE_EQ(probe.at("chance").get<double>(), 0.5);

  // replay reproduces generate byte for byte
  auto rp = invoke({"replay", "--manifest", p(pl.dir / "gen" / "manifest.json"), "--out", p(pl.dir / "gen2")});
  ASSERT_EQ(rp.code, 0) << rp.err;
  EXPECT_EQ(read_text(pl.dir / "gen2" / "generations.jsonl"), read_text(pl.dir / "gen" / "generations.jsonl"));
  const auto man = nlohmann::json::parse(read_text(pl.dir / "gen" / "manifest.json"));
  EXPECT_EQ(man.at("command"), "generate");
  EXPECT_EQ(man.at("seed"), 5);
  EXPECT_EQ(man.at("inputs").size(), 2u);
  EXPECT_EQ(man.at("inputs")[0].at("git_sha1").get<std::string>().size(), 40u);

  for (const auto& [name, text] : before) EXPECT_EQ(read_text(d / name), text) << name;

  // a changed input makes replay refuse
  std::filesystem::copy_file(d / "test.jsonl", pl.dir / "test_copy.jsonl");
  auto g2 = invoke({"generate", "--checkpoint", p(run / "model.ckpt"), "--data", p(pl.dir / "test_copy.jsonl"), "--out",
                 p(pl.dir / "gen3")});
  ASSERT_EQ(g2.code, 0);
  testutil::write_text(pl.dir / "test_copy.jsonl", read_text(d / "train.jsonl"));
  EXPECT_EQ(invoke({"replay", "--manifest", p(pl.dir / "gen3" / "manifest.json"), "--out", p(pl.dir / "gen4")}).code, 1);
}

TEST(Cli, OutputsNeverOverwriteInputs) {
  Pipeline pl;
  const auto x = pl.dir / "x";
  std::filesystem::create_directories(x);
  std::filesystem::copy_file(pl.data / "test.jsonl", x / "refs.jsonl");
  const auto before = read_text(x / "refs.jsonl");
  const auto r = invoke({"collect-refs", "--train-data", p(pl.data / "train.jsonl"), "--test-data", p(x / "refs.jsonl"),
                      "--out", p(x)});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("refs.jsonl"), std::string::npos);
  EXPECT_EQ(read_text(x / "refs.jsonl"), before);
}

TEST(Cli, SynthMem50GivesIdenticalSplits) {
  TempDir d;
  ASSERT_EQ(invoke({"synth", "--kind", "mem50", "--out", p(d / "m")}).code, 0);
  EXPECT_EQ(read_text(d / "m" / "train.jsonl"), read_text(d / "m" / "valid.jsonl"));
  EXPECT_EQ(corpus::load_corpus(d / "m" / "train.jsonl").dialogs.size(), 50u);
}
