#include <gtest/gtest.h>

#include "lois/config.hpp"

using namespace lois;

TEST(Config, DefaultsValidate) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.S, 12u);
  EXPECT_EQ(c.heads, 8u);
  EXPECT_EQ(c.m, 1024u);
  EXPECT_DOUBLE_EQ(c.clip_norm, 0.25);
}

TEST(Config, ParsesAssignmentsAndComments) {
  auto c = parse_config("# toy run\nL = 16\n  lr=0.1   # faster\norder = none\nmask_question_padding = true\n\nseed = 42\n");
  EXPECT_EQ(c.L, 16u);
  EXPECT_DOUBLE_EQ(c.lr, 0.1);
  EXPECT_EQ(c.order, "none");
  EXPECT_TRUE(c.mask_question_padding);
  EXPECT_EQ(c.seed, 42u);
  auto t = c.train_config();
  EXPECT_EQ(t.order, ComposeOrder::None);
  EXPECT_EQ(t.dims.L, 16u);
}

TEST(Config, ErrorsNameTheField) {
  auto field_of = [](const std::string& text) -> std::string {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return e.field;
    }
    return "";
  };
  EXPECT_EQ(field_of("colour = red"), "colour");
  EXPECT_EQ(field_of("L = twelve"), "L");
  EXPECT_EQ(field_of("lr = -1"), "lr");
  EXPECT_EQ(field_of("momentum = 1"), "momentum");
  EXPECT_EQ(field_of("order = Q-I-B"), "order");
  EXPECT_EQ(field_of("gamma = 0"), "gamma");
  EXPECT_EQ(field_of("mask_question_padding = maybe"), "mask_question_padding");
  EXPECT_EQ(field_of("clip_mode = sometimes"), "clip_mode");
  EXPECT_EQ(field_of("dropout = 1.0"), "dropout");
  EXPECT_EQ(field_of("L 16"), "L 16");
}

TEST(Config, ElementwiseClipMode) {
  auto c = parse_config("clip_mode = elementwise");
  EXPECT_EQ(c.train_config().clip_mode, ClipMode::Elementwise);
}
