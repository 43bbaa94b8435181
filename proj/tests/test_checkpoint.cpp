#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "common.hpp"
#include "dialvae/checkpoint.hpp"
#include "dialvae/training.hpp"

using namespace dialvae;
using namespace dialvae::checkpoint;

namespace {

Archive sample() {
  Archive a;
  a.meta = {{"vocab", {"<pad>", "a"}}, {"step", 3}};
  a.tensors.push_back({"w", {2, 3}, {1.5f, -0.0f, 3e-39f, std::numeric_limits<float>::infinity(), -7.25f, 1e10f}});
  a.tensors.push_back({"b", {1}, {42.0f}});
  return a;
}

}  // namespace

TEST(Checkpoint, SerializeRoundTripIsBitExact) {
  const auto a = sample();
  const auto s = serialize(a);
  EXPECT_EQ(s.substr(0, 4), "DVCK");
  const auto b = deserialize(s);
  EXPECT_EQ(b.meta, a.meta);
  ASSERT_EQ(b.tensors.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(b.tensors[i].name, a.tensors[i].name);
    EXPECT_EQ(b.tensors[i].shape, a.tensors[i].shape);
    for (std::size_t j = 0; j < a.tensors[i].values.size(); ++j)
      EXPECT_EQ(std::bit_cast<std::uint32_t>(b.tensors[i].values[j]), std::bit_cast<std::uint32_t>(a.tensors[i].values[j]));
  }
  EXPECT_TRUE(std::signbit(b.tensors[0].values[1]));
  EXPECT_EQ(serialize(b), s);
}

TEST(Checkpoint, FileRoundTrip) {
  testutil::TempDir d;
  save(sample(), d / "x.ckpt");
  EXPECT_EQ(serialize(load(d / "x.ckpt")), serialize(sample()));
  EXPECT_THROW(load(d / "missing.ckpt"), Error);
}

TEST(Checkpoint, EveryTruncationIsDetected) {
  const auto s = serialize(sample());
  for (std::size_t n = 0; n < s.size(); ++n) EXPECT_THROW(deserialize(s.substr(0, n)), CorruptionError) << n;
  EXPECT_THROW(deserialize(s + "x"), CorruptionError);
}

TEST(Checkpoint, HeaderCorruptionIsDetected) {
  auto s = serialize(sample());
  auto bad = s;
  bad[0] = 'X';
  EXPECT_THROW(deserialize(bad), CorruptionError);
  bad = s;
  bad[4] = 2;
  EXPECT_THROW(deserialize(bad), CorruptionError);
  bad = s;
  bad[16] = '#';  // first manifest byte
  EXPECT_THROW(deserialize(bad), CorruptionError);
}

TEST(Checkpoint, ShapeValueMismatchRefusesToSerialize) {
  Archive a;
  a.tensors.push_back({"w", {2, 2}, {1.0f}});
  EXPECT_THROW(serialize(a), ShapeError);
}

TEST(Checkpoint, RestoreParamsNeedsEveryTensorWithItsShape) {
  numeric::ModelParams<float> p;
  p.add("w", {2, 3});
  p.add("b", {1});
  restore_params(sample(), p);
  EXPECT_EQ(p.value(p.at("b"))[0], 42.0f);
  EXPECT_EQ(p.value(p.at("w"))[4], -7.25f);

  numeric::ModelParams<float> extra;
  extra.add("w", {2, 3});
  extra.add("c", {1});
  EXPECT_THROW(restore_params(sample(), extra), CorruptionError);
  numeric::ModelParams<float> reshaped;
  reshaped.add("w", {3, 2});
  EXPECT_THROW(restore_params(sample(), reshaped), CorruptionError);
}

TEST(Checkpoint, ModelSurvivesARoundTrip) {
  const auto c = testutil::mini(model::Variant::kgcvae);
  model::DialogModel<float> m(c);
  CounterRng r(1);
  numeric::init_uniform(m.params(), r, 0.08);
  Archive a;
  a.meta["model"] = c;
  append_params(a, m.params());
  const auto back = training::model_from_archive(deserialize(serialize(a)));
  EXPECT_TRUE(back.params().values_equal(m.params()));
  EXPECT_EQ(nlohmann::json(back.config()), nlohmann::json(c));
}
