#include <gtest/gtest.h>

#include "support.hpp"

using namespace atomgraph;
using namespace atomgraph::cfg;

namespace {

Cfg build(std::vector<std::uint8_t> bytes) { return build_cfg(std::span<const std::uint8_t>(bytes)); }

bool has_edge(const Cfg& g, BlockId a, BlockId b, EdgeKind k) {
  return std::any_of(g.edges.begin(), g.edges.end(), [&](const Edge& e) { return e.from == a && e.to == b && e.kind == k; });
}

}  // namespace

TEST(Partition, SplitsAfterTerminatorsAndBeforeJumpdest) {
  // PUSH1 4 JUMP STOP JUMPDEST STOP
  const auto g = build({0x60, 0x04, 0x56, 0x00, 0x5b, 0x00});
  EXPECT_EQ(g.ids(), (std::vector<BlockId>{0, 3, 4}));
  EXPECT_EQ(g.blocks.at(0).terminator, Terminator::Jump);
  EXPECT_EQ(g.blocks.at(3).terminator, Terminator::Stop);
  EXPECT_TRUE(has_edge(g, 0, 4, EdgeKind::JumpTaken));
  EXPECT_EQ(g.edges.size(), 1u);
  EXPECT_TRUE(g.unresolved_jumps.empty());
}

TEST(Partition, JumpiHasTakenAndFallthrough) {
  const auto g = build({0x60, 0x01, 0x60, 0x06, 0x57, 0x00, 0x5b, 0x00});
  EXPECT_TRUE(has_edge(g, 0, 6, EdgeKind::BranchTaken));
  EXPECT_TRUE(has_edge(g, 0, 5, EdgeKind::BranchFallthrough));
  EXPECT_EQ(g.out_edges(0).size(), 2u);
}

TEST(Partition, FallThroughIntoJumpdest) {
  const auto g = build({0x60, 0x01, 0x5b, 0x00});
  EXPECT_EQ(g.ids(), (std::vector<BlockId>{0, 2}));
  EXPECT_TRUE(has_edge(g, 0, 2, EdgeKind::FallThrough));
}

TEST(Resolve, DynamicJumpIsUnresolved) {
  const auto g = build({0x35, 0x56, 0x5b, 0x00});
  ASSERT_EQ(g.unresolved_jumps.size(), 1u);
  EXPECT_EQ(g.unresolved_jumps[0].reason, UnresolvedReason::NoConstantTarget);
  EXPECT_TRUE(g.out_edges(0).empty());
}

TEST(Resolve, TargetWithoutJumpdestIsUnresolved) {
  const auto g = build({0x60, 0x05, 0x56, 0x00, 0x00, 0x00});
  ASSERT_EQ(g.unresolved_jumps.size(), 1u);
  EXPECT_EQ(g.unresolved_jumps[0].reason, UnresolvedReason::TargetNotJumpdest);
  EXPECT_EQ(g.unresolved_jumps[0].target, 5u);
}

TEST(Resolve, JumpdestInsidePushDataIsNotATarget) {
  // PUSH1 0x5b (data byte looks like JUMPDEST at pc 1) ; PUSH1 1 JUMP
  const auto g = build({0x60, 0x5b, 0x60, 0x01, 0x56});
  ASSERT_EQ(g.unresolved_jumps.size(), 1u);
  EXPECT_TRUE(g.edges.empty());
}

TEST(Resolve, Push0TargetsPcZero) {
  const auto g = build({0x5b, 0x5f, 0x56});
  EXPECT_TRUE(has_edge(g, 0, 0, EdgeKind::JumpTaken));
}

TEST(Resolve, InvalidAndUndefinedTerminate) {
  const auto g = build({0x60, 0x01, 0xfe, 0x60, 0x00, 0x0c, 0x00});
  EXPECT_EQ(g.blocks.at(0).terminator, Terminator::Invalid);
  EXPECT_EQ(g.blocks.at(3).terminator, Terminator::Invalid);
  EXPECT_TRUE(g.edges.empty());
}

TEST(Invariants, HandWrittenPrograms) {
  const auto programs = testkit::hand_written_programs();
  ASSERT_EQ(programs.size(), 50u);
  for (const auto& p : programs) {
    const auto d = evm::disassemble(p);
    const auto g = build_cfg(d.instructions);
    const auto v = testkit::cfg_violations(d.instructions, g);
    EXPECT_TRUE(v.empty()) << v.front();
  }
}

TEST(Invariants, RandomBytecode) {
  Rng rng(99);
  for (int i = 0; i < 1500; ++i) {
    const auto bytes = i % 2 ? testkit::random_bytes(rng, 512) : testkit::random_flowy_bytes(rng, 256);
    const auto d = evm::disassemble(bytes);
    const auto g = build_cfg(d.instructions);
    const auto v = testkit::cfg_violations(d.instructions, g);
    ASSERT_TRUE(v.empty()) << v.front();
  }
}

TEST(Dot, ExactFormat) {
  const auto g = build({0x60, 0x04, 0x56, 0x00, 0x5b, 0x00});
  EXPECT_EQ(to_dot(g),
            "digraph cfg {\n"
            "  \"0\" [label=\"PUSH1\\nJUMP\"];\n"
            "  \"3\" [label=\"STOP\"];\n"
            "  \"4\" [label=\"JUMPDEST\\nSTOP\"];\n"
            "  \"0\" -> \"4\" [kind=JumpTaken];\n"
            "}\n");
}

TEST(Dot, RoundTripRandomAndHandWritten) {
  Rng rng(3);
  auto programs = testkit::hand_written_programs();
  for (int i = 0; i < 300; ++i) programs.push_back(testkit::random_flowy_bytes(rng, 200));
  for (const auto& p : programs) {
    const auto g = build_cfg(std::span<const std::uint8_t>(p));
    EXPECT_EQ(parse_dot(to_dot(g)), skeleton_of(g));
  }
}

TEST(Dot, RoundTripWithVirtualEdges) {
  auto g = build({0x60, 0x01, 0x60, 0x06, 0x57, 0x00, 0x5b, 0x00});
  g.edges.push_back({5, 6, EdgeKind::Virtual});
  EXPECT_EQ(parse_dot(to_dot(g)), skeleton_of(g));
}

TEST(Dot, ParseErrorsCarryLineNumbers) {
  auto line_of = [](std::string_view text) -> std::size_t {
    try {
      parse_dot(text);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::DotParse);
      return e.position().value_or(0);
    }
    ADD_FAILURE() << "no error for: " << text;
    return 0;
  };
  EXPECT_EQ(line_of("not a graph"), 1u);
  EXPECT_EQ(line_of("digraph cfg {\n  \"0\" [label=\"STOP\"];\n  \"0\" -> \"9\" [kind=JumpTaken];\n}\n"), 3u);
  EXPECT_EQ(line_of("digraph cfg {\n  \"0\" [label=\"STOP\"];\n  \"0\" [label=\"STOP\"];\n}\n"), 3u);
  EXPECT_EQ(line_of("digraph cfg {\n  \"0\" -> \"0\" [kind=Sideways];\n}\n"), 2u);
  EXPECT_GE(line_of("digraph cfg {\n  \"0\" [label=\"STOP\"];\n"), 2u);
}

TEST(Neighbors, UndirectedSortedNoSelfLoops) {
  const auto g = build({0x5b, 0x60, 0x00, 0x56});  // self loop on block 0
  const auto n = undirected_neighbors(g);
  ASSERT_EQ(n.size(), 1u);
  EXPECT_TRUE(n[0].empty());
  const auto h = build({0x60, 0x01, 0x60, 0x06, 0x57, 0x00, 0x5b, 0x00});
  const auto m = undirected_neighbors(h);
  EXPECT_EQ(m[0], (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(m[1], (std::vector<std::size_t>{0}));
}
