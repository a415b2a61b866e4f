#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace atomgraph;

namespace {

PipelineConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is, default_config());
}

Errc error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::EmptyInput;
}

}  // namespace

TEST(Config, DefaultsMatchDocumentedValues) {
  const auto c = default_config();
  EXPECT_EQ(c.token.dim, 64u);
  EXPECT_EQ(c.token.window, 5u);
  EXPECT_EQ(c.token.negatives, 5u);
  EXPECT_EQ(c.walk.walk_length, 20u);
  EXPECT_EQ(c.walk.walks_per_node, 10u);
  EXPECT_EQ(c.walk.return_param, 1.0);
  EXPECT_EQ(c.walk.inout_param, 1.0);
  EXPECT_EQ(c.grid_step, 0.05);
  EXPECT_EQ(c.aug_threshold, 0.9);
  EXPECT_EQ(c.arch.hidden, (std::vector<std::size_t>{128, 64, 32}));
  EXPECT_EQ(c.arch.dropout, 0.5);
  EXPECT_EQ(c.train.learning_rate, 1e-3);
  EXPECT_EQ(c.train.focal_gamma, 2.0);
  EXPECT_EQ(c.train_fraction, 0.9);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParsesKeysCommentsAndWhitespace) {
  const auto c = parse(
      "# comment\n"
      "\n"
      "seed = 42\n"
      "  embed.dim=16   # trailing comment\n"
      "walk.p = 0.5\n"
      "gcn.hidden = 32, 16\n"
      "gcn.readout = max\n"
      "train.class_weights = 1.5,0.5\n"
      "fusion.alpha = 0.75\n"
      "semantic.pooling = sum\n"
      "train.oversample = true\n");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.token.dim, 16u);
  EXPECT_EQ(c.walk.skipgram.dim, 16u);
  EXPECT_EQ(c.arch.input_dim, 16u);
  EXPECT_EQ(c.walk.return_param, 0.5);
  EXPECT_EQ(c.arch.hidden, (std::vector<std::size_t>{32, 16}));
  EXPECT_EQ(c.arch.readout, gcn::Readout::Max);
  ASSERT_TRUE(c.train.class_weights);
  EXPECT_EQ((*c.train.class_weights)[0], 1.5);
  EXPECT_EQ(c.alpha, 0.75);
  EXPECT_EQ(c.pooling, embed::Pooling::Sum);
  EXPECT_TRUE(c.train.oversample);
}

TEST(Config, SeedDerivesComponentSeeds) {
  const auto a = parse("seed = 5\n");
  const auto b = parse("seed = 6\n");
  EXPECT_NE(a.token.seed, b.token.seed);
  EXPECT_NE(a.train.seed, b.train.seed);
  EXPECT_NE(a.token.seed, a.walk.skipgram.seed);
  EXPECT_EQ(a.token.seed, parse("seed = 5\n").token.seed);
}

TEST(Config, Errors) {
  EXPECT_EQ(error_of("bogus.key = 1\n"), Errc::InvalidConfig);
  EXPECT_EQ(error_of("seed 5\n"), Errc::InvalidConfig);
  EXPECT_EQ(error_of("embed.dim = abc\n"), Errc::InvalidConfig);
  EXPECT_EQ(error_of("embed.dim = 0\n"), Errc::InvalidConfig);
  EXPECT_EQ(error_of("fusion.alpha = 1.5\n"), Errc::InvalidConfig);
  EXPECT_EQ(error_of("fusion.aug_threshold = 0\n"), Errc::InvalidConfig);
  EXPECT_EQ(error_of("train.oversample = maybe\n"), Errc::InvalidConfig);
  EXPECT_EQ(error_of("split.train_fraction = 1\n"), Errc::InvalidConfig);
  try {
    parse("seed = 1\n\nnope = 2\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.position().value_or(0), 3u);
  }
}

TEST(Config, FormatParsesBackToTheSameConfig) {
  auto c = parse("seed = 9\nembed.dim = 8\ngcn.hidden = 4,2\ntrain.class_weights = 2,1\nfusion.alpha = 0.35\n");
  std::istringstream is(format_config(c));
  const auto back = parse_config(is);
  EXPECT_EQ(format_config(back), format_config(c));
  EXPECT_EQ(back.token.seed, c.token.seed);
  EXPECT_EQ(back.arch.input_dim, 8u);
}
