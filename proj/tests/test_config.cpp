#include <gtest/gtest.h>

#include "fagg/config.hpp"

using namespace fagg;

TEST(SynthConfigJson, DefaultsAndOverrides) {
  const auto c = parse_synth_config(R"({"dim": 16, "corrupt_noise_sigma": 2.5, "rng_seed": 42})");
  EXPECT_EQ(c.dim, 16u);
  EXPECT_EQ(c.corrupt_noise_sigma, 2.5);
  EXPECT_EQ(c.rng_seed, 42u);
  EXPECT_EQ(c.num_identities, SynthConfig{}.num_identities);
  EXPECT_EQ(parse_synth_config("{}").dim, SynthConfig{}.dim);
}

TEST(SynthConfigJson, Rejections) {
  EXPECT_THROW(parse_synth_config(R"({"dims": 16})"), Error);
  EXPECT_THROW(parse_synth_config(R"({"dim": -3})"), Error);
  EXPECT_THROW(parse_synth_config(R"({"dim": 2.5})"), Error);
  EXPECT_THROW(parse_synth_config(R"({"degrade_fraction": "half"})"), Error);
  EXPECT_THROW(parse_synth_config(R"({"degrade_fraction": 2})"), Error);
  EXPECT_THROW(parse_synth_config("[1, 2]"), Error);
  EXPECT_THROW(parse_synth_config("{"), Error);
}

TEST(TrainConfigJson, ModeAndNumbers) {
  const auto c = parse_train_config(
      R"({"mode": "frame", "learning_rate": 0.05, "epochs": 0, "init_hidden_gain": 20, "scale_s": 16})");
  EXPECT_EQ(c.mode, AttentionMode::FrameTanh);
  EXPECT_EQ(c.learning_rate, 0.05);
  EXPECT_EQ(c.epochs, 0u);
  EXPECT_EQ(c.init_hidden_gain, 20.0);
  EXPECT_EQ(c.scale_s, 16.0);
  EXPECT_EQ(parse_train_config("{}").mode, AttentionMode::CascadedTanh);
}

TEST(TrainConfigJson, Rejections) {
  EXPECT_THROW(parse_train_config(R"({"mode": "deep"})"), Error);
  EXPECT_THROW(parse_train_config(R"({"lr": 0.1})"), Error);
  EXPECT_THROW(parse_train_config(R"({"momentum": 1.0})"), Error);
  EXPECT_THROW(parse_train_config(R"({"batch_size": 0})"), Error);
  EXPECT_THROW(parse_train_config(R"({"mode": "linear", "init_hidden_bias": 1})"), Error);
}
