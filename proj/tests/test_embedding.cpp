#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace atomgraph;
using namespace atomgraph::embed;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return v;
}

cfg::Cfg build(std::vector<std::uint8_t> bytes) { return cfg::build_cfg(std::span<const std::uint8_t>(bytes)); }

}  // namespace

// Analytic pair-loss gradient against central differences.
TEST(PairLoss, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  double worst = 0.0;
  for (int inst = 0; inst < 25; ++inst) {
    const std::size_t d = 2 + rng.below(8);
    const std::size_t k = 1 + rng.below(5);
    auto center = random_vec(rng, d);
    auto context = random_vec(rng, d);
    std::vector<std::vector<double>> negs;
    for (std::size_t i = 0; i < k; ++i) negs.push_back(random_vec(rng, d));
    auto loss = [&] {
      std::vector<std::span<const double>> ns(negs.begin(), negs.end());
      return pair_loss(center, context, ns);
    };
    std::vector<std::span<const double>> ns(negs.begin(), negs.end());
    const auto g = pair_loss_gradient(center, context, ns);
    for (std::size_t i = 0; i < d; ++i) {
      worst = std::max(worst, testkit::relative_error(g.center[i], testkit::central_difference(loss, center[i])));
      worst = std::max(worst, testkit::relative_error(g.context[i], testkit::central_difference(loss, context[i])));
      for (std::size_t n = 0; n < k; ++n) {
        worst = std::max(worst, testkit::relative_error(g.negatives[n][i], testkit::central_difference(loss, negs[n][i])));
      }
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(PairLoss, StableForLargeScores) {
  const std::vector<double> c{100.0};
  const std::vector<double> u{100.0};
  const std::vector<double> n{-100.0};
  std::vector<std::span<const double>> ns{n};
  EXPECT_TRUE(std::isfinite(pair_loss(c, u, ns)));
  EXPECT_NEAR(pair_loss(c, u, ns), 0.0, 1e-12);
}

TEST(SkipGram, LossDecreasesOnStructuredCorpus) {
  std::vector<std::vector<std::string>> sentences;
  for (int i = 0; i < 200; ++i) {
    sentences.push_back({"PUSH1", "PUSH1", "ADD", "SSTORE", "STOP"});
    sentences.push_back({"CALLER", "SLOAD", "GT", "JUMPI"});
  }
  SkipGramConfig cfg;
  cfg.dim = 16;
  cfg.epochs = 5;
  SkipGramTrace trace;
  const auto table = train_skipgram(sentences, cfg, &trace);
  ASSERT_EQ(trace.epoch_loss.size(), 5u);
  EXPECT_LT(trace.epoch_loss.back(), trace.initial_loss * 0.8);
  EXPECT_TRUE(table.all_finite());
  EXPECT_EQ(table.size(), 8u);
  EXPECT_EQ(table.keys().front(), "PUSH1");  // first-appearance order
}

TEST(SkipGram, InitialisationRange) {
  std::vector<std::vector<std::string>> sentences{{"A", "B"}};
  SkipGramConfig cfg;
  cfg.dim = 10;
  cfg.epochs = 1;
  cfg.learning_rate = 1e-12;  // effectively untrained
  const auto table = train_skipgram(sentences, cfg);
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (double v : table.input(i)) EXPECT_LE(std::abs(v), 0.5 / 10 + 1e-9);
  }
}

TEST(SkipGram, DeterministicGivenSeed) {
  std::vector<std::vector<std::string>> sentences;
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    std::vector<std::string> s;
    for (int j = 0; j < 6; ++j) s.push_back(std::string(1, static_cast<char>('a' + rng.below(6))));
    sentences.push_back(s);
  }
  SkipGramConfig cfg;
  cfg.dim = 8;
  EXPECT_EQ(train_skipgram(sentences, cfg), train_skipgram(sentences, cfg));
  auto other = cfg;
  other.seed = 2;
  EXPECT_FALSE(train_skipgram(sentences, cfg) == train_skipgram(sentences, other));
}

TEST(SkipGram, Errors) {
  SkipGramConfig cfg;
  EXPECT_THROW(train_skipgram(std::vector<std::vector<std::string>>{{"A", "A"}}, cfg), Error);
  EXPECT_THROW(train_skipgram(std::vector<std::vector<std::string>>{}, cfg), Error);
  cfg.dim = 0;
  EXPECT_THROW(train_skipgram(std::vector<std::vector<std::string>>{{"A", "B"}}, cfg), Error);
}

TEST(Table, WriteReadRoundTripIsExact) {
  std::vector<std::vector<std::string>> sentences{{"A", "B", "C"}, {"C", "B"}};
  SkipGramConfig cfg;
  cfg.dim = 7;
  const auto table = train_skipgram(sentences, cfg);
  std::stringstream ss;
  table.write(ss);
  const auto back = EmbeddingTable::read(ss);
  ASSERT_EQ(back.keys(), table.keys());
  for (std::size_t i = 0; i < table.size(); ++i) {
    EXPECT_TRUE(std::equal(back.input(i).begin(), back.input(i).end(), table.input(i).begin()));
  }
}

TEST(Table, ReadErrors) {
  auto code_of = [](const std::string& text) {
    std::istringstream is(text);
    try {
      EmbeddingTable::read(is);
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::EmptyInput;
  };
  EXPECT_EQ(code_of(""), Errc::MalformedRecord);
  EXPECT_EQ(code_of("2 2\na 1 2\n"), Errc::MalformedRecord);
  EXPECT_EQ(code_of("1 2\na 1 x\n"), Errc::MalformedRecord);
  EXPECT_EQ(code_of("1 2\na 1 2 3\n"), Errc::MalformedRecord);
  EXPECT_EQ(code_of("2 1\na 1\na 2\n"), Errc::DuplicateId);
}

TEST(Semantic, MeanAndSumPooling) {
  EmbeddingTable t(2, {"PUSH1", "STOP"});
  std::copy_n(std::vector<double>{1, 2}.begin(), 2, t.input(0).begin());
  std::copy_n(std::vector<double>{3, 4}.begin(), 2, t.input(1).begin());
  const auto g = build({0x60, 0x01, 0x00});
  const auto mean = semantic_node_vectors(g, t, Pooling::Mean);
  EXPECT_EQ(mean.at(0), (Vector{2, 3}));
  const auto sum = semantic_node_vectors(g, t, Pooling::Sum);
  EXPECT_EQ(sum.at(0), (Vector{4, 6}));
}

TEST(Semantic, UnknownTokensWarnAndCountAsZero) {
  EmbeddingTable t(2, {"PUSH1", "STOP"});
  std::copy_n(std::vector<double>{2, 2}.begin(), 2, t.input(0).begin());
  const auto g = build({0x60, 0x01, 0x01, 0x00});  // PUSH1 ADD STOP; ADD unknown
  std::vector<std::string> warnings;
  const auto v = semantic_node_vectors(g, t, Pooling::Mean, &warnings);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_NEAR(v.at(0)[0], 2.0 / 3.0, 1e-15);
}

TEST(Corpus, OneSentencePerBlock) {
  std::vector<cfg::Cfg> graphs{build({0x60, 0x04, 0x56, 0x00, 0x5b, 0x00})};
  const auto corpus = build_token_corpus(graphs);
  EXPECT_EQ(corpus.sentences.size(), 3u);
  EXPECT_EQ(corpus.sentences[0], (std::vector<std::string>{"PUSH1", "JUMP"}));
  EXPECT_EQ(corpus.frequencies.at("STOP"), 2u);
  EXPECT_THROW(build_token_corpus(std::span<const cfg::Cfg>{}), Error);
}

TEST(Walks, FollowEdgesAndIgnoreThreadCount) {
  synthetic::SyntheticSpec spec;
  spec.n_contracts = 4;
  const auto corpus = synthetic::generate_synthetic(spec);
  const auto g = cfg::build_cfg(std::span<const std::uint8_t>(corpus[0].bytecode));
  WalkConfig wc;
  wc.return_param = 0.5;
  wc.inout_param = 2.0;
  const auto walks = generate_walks(g, wc, 1);
  EXPECT_EQ(walks, generate_walks(g, wc, 4));
  const auto nbrs = cfg::undirected_neighbors(g);
  ASSERT_EQ(walks.size(), g.size() * wc.walks_per_node);
  for (std::size_t w = 0; w < walks.size(); ++w) {
    EXPECT_EQ(walks[w].front(), w % g.size());
    EXPECT_LE(walks[w].size(), wc.walk_length);
    for (std::size_t i = 1; i < walks[w].size(); ++i) {
      const auto& n = nbrs[walks[w][i - 1]];
      EXPECT_TRUE(std::binary_search(n.begin(), n.end(), walks[w][i]));
    }
  }
}

// Brute-force oracle: second-step transition frequencies match the p/q weights.
TEST(Walks, BiasMatchesExactTransitionProbabilities) {
  // Undirected graph: 0-1, 1-2, 1-3, 0-2 ; walk starts 0 -> 1 forced by conditioning.
  const std::vector<std::vector<std::size_t>> nbrs{{1, 2}, {0, 2, 3}, {0, 1}, {1}};
  WalkConfig wc;
  wc.walk_length = 3;
  wc.return_param = 2.0;  // weight 1/2 back to 0
  wc.inout_param = 0.25;  // weight 4 to 3 (distance 2 from 0); 2 is a common neighbour (weight 1)
  std::map<std::size_t, double> counts;
  double total = 0;
  for (std::uint64_t s = 0; s < 200000; ++s) {
    Rng rng(mix_seed(77, s));
    const auto w = embed::detail::node2vec_walk(nbrs, 0, wc, rng);
    if (w.size() == 3 && w[1] == 1) {
      counts[w[2]] += 1;
      total += 1;
    }
  }
  const double z = 0.5 + 1.0 + 4.0;
  EXPECT_NEAR(counts[0] / total, 0.5 / z, 0.01);
  EXPECT_NEAR(counts[2] / total, 1.0 / z, 0.01);
  EXPECT_NEAR(counts[3] / total, 4.0 / z, 0.01);
}

TEST(Structural, TinyGraphsGetZeroVectors) {
  const auto g = build({0x00});
  std::vector<std::string> warnings;
  WalkConfig wc;
  const auto v = structural_node_vectors(g, wc, &warnings);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_TRUE(std::all_of(v.at(0).begin(), v.at(0).end(), [](double x) { return x == 0.0; }));
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Structural, DeterministicAndNamespacedTable) {
  const auto g = build({0x60, 0x01, 0x60, 0x06, 0x57, 0x00, 0x5b, 0x00});
  WalkConfig wc;
  wc.skipgram.dim = 8;
  const auto a = structural_node_vectors(g, wc);
  EXPECT_EQ(a, structural_node_vectors(g, wc));
  std::vector<std::pair<std::string, NodeVectors>> contracts{{"c1", a}, {"c2", a}};
  const auto table = to_table(contracts, 8);
  EXPECT_EQ(table.size(), 6u);
  EXPECT_TRUE(table.contains("c2:6"));
  EXPECT_EQ(lookup_nodes(table, "c1", g), a);
  EXPECT_THROW(lookup_nodes(table, "c3", g), Error);
}

TEST(Config, WalkValidation) {
  WalkConfig wc;
  wc.return_param = 0.0;
  EXPECT_THROW(wc.validate(), Error);
  wc = WalkConfig{};
  wc.walk_length = 3;
  EXPECT_THROW(wc.validate(), Error);
}
