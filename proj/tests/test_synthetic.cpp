#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"

using namespace atomgraph;
using namespace atomgraph::synthetic;

TEST(Synthetic, ExactDefectFraction) {
  SyntheticSpec spec;
  spec.n_contracts = 10;
  spec.defect_fraction = 0.5;
  const auto corpus = generate_synthetic(spec);
  ASSERT_EQ(corpus.size(), 10u);
  EXPECT_EQ(std::count_if(corpus.begin(), corpus.end(), [](const auto& c) { return c.label == 1; }), 5);
  EXPECT_EQ(corpus[3].id, "synth-0003");
}

TEST(Synthetic, DeterministicGivenSeed) {
  SyntheticSpec spec;
  spec.n_contracts = 20;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].bytecode, b[i].bytecode);
    EXPECT_EQ(a[i].label, b[i].label);
  }
  spec.seed = 2;
  EXPECT_NE(generate_synthetic(spec)[0].bytecode, a[0].bytecode);
}

// Generator contract plus the reachability oracle, over many seeds and sizes.
TEST(Synthetic, ResolvableAndOracleFaithful) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticSpec spec;
    spec.n_contracts = 60;
    spec.seed = seed;
    spec.min_blocks = 10;
    spec.max_blocks = 40;
    for (const auto& c : generate_synthetic(spec)) {
      const auto d = evm::disassemble(c.bytecode);
      EXPECT_TRUE(d.warnings.empty());
      const auto g = cfg::build_cfg(d.instructions);
      EXPECT_TRUE(g.unresolved_jumps.empty()) << c.id;
      EXPECT_EQ(call_before_store_label(g), c.label) << c.id;
      EXPECT_GE(g.size(), 10u);
      EXPECT_LE(g.size(), 40u);
      EXPECT_TRUE(testkit::cfg_violations(d.instructions, g).empty());
    }
  }
}

TEST(Synthetic, BlockCountIsNotALabelCue) {
  // Same RNG stream, both labels: the withdraw pattern has identical block counts.
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng a(s);
    Rng b(s);
    const auto normal = generate_contract(false, 20, a);
    const auto defective = generate_contract(true, 20, b);
    EXPECT_EQ(cfg::build_cfg(std::span<const std::uint8_t>(normal)).size(),
              cfg::build_cfg(std::span<const std::uint8_t>(defective)).size());
  }
}

TEST(Synthetic, Errors) {
  SyntheticSpec spec;
  spec.max_blocks = 8;
  spec.min_blocks = 4;
  EXPECT_THROW(generate_synthetic(spec), Error);
  Rng rng(1);
  EXPECT_THROW(generate_contract(true, 5, rng), Error);
  spec = SyntheticSpec{};
  spec.defect_fraction = 1.0;
  EXPECT_THROW(generate_synthetic(spec), Error);
  spec = SyntheticSpec{};
  spec.n_contracts = 0;
  EXPECT_THROW(generate_synthetic(spec), Error);
}

TEST(Synthetic, OracleOnHandBuiltGraphs) {
  // CALL block reaches SSTORE block.
  const std::vector<std::uint8_t> bad{0xf1, 0x60, 0x04, 0x56, 0x5b, 0x55, 0x00};
  EXPECT_EQ(call_before_store_label(cfg::build_cfg(std::span<const std::uint8_t>(bad))), 1);
  // SSTORE then CALL in one block.
  const std::vector<std::uint8_t> good{0x55, 0xf1, 0x00};
  EXPECT_EQ(call_before_store_label(cfg::build_cfg(std::span<const std::uint8_t>(good))), 0);
  // CALL then SSTORE in one block.
  const std::vector<std::uint8_t> inline_bad{0xf1, 0x55, 0x00};
  EXPECT_EQ(call_before_store_label(cfg::build_cfg(std::span<const std::uint8_t>(inline_bad))), 1);
}

TEST(Synthetic, WriteCorpusProducesLoadableManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "atomgraph_synth_test";
  std::filesystem::remove_all(dir);
  SyntheticSpec spec;
  spec.n_contracts = 6;
  const auto corpus = generate_synthetic(spec);
  write_corpus(corpus, dir);
  const auto m = dataset::load_manifest(dir / "manifest.txt");
  ASSERT_EQ(m.records.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(m.records[i].label, corpus[i].label);
    EXPECT_EQ(dataset::load_bytecode(m.records[i].path).bytes, corpus[i].bytecode);
  }
  std::filesystem::remove_all(dir);
}
