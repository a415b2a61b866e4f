#include <gtest/gtest.h>

#include "support.hpp"

using namespace atomgraph;
using namespace atomgraph::evm;

TEST(Hex, DecodesWithAndWithoutPrefix) {
  EXPECT_EQ(decode_hex("0x6001").bytes, (std::vector<std::uint8_t>{0x60, 0x01}));
  EXPECT_EQ(decode_hex("6001").bytes, (std::vector<std::uint8_t>{0x60, 0x01}));
  EXPECT_EQ(decode_hex("0XABcd\n").bytes, (std::vector<std::uint8_t>{0xab, 0xcd}));
}

TEST(Hex, OddLengthReportsOffset) {
  try {
    decode_hex("0x600");
    FAIL() << "expected OddLength";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::OddLength);
    ASSERT_TRUE(e.position());
    EXPECT_EQ(*e.position(), 4u);
  }
}

TEST(Hex, NonHexReportsOffsetInOriginalText) {
  try {
    decode_hex("0x6zz1");
    FAIL() << "expected NonHexCharacter";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonHexCharacter);
    ASSERT_TRUE(e.position());
    EXPECT_EQ(*e.position(), 3u);
  }
}

TEST(Hex, EmptyInputRejected) {
  EXPECT_THROW(decode_hex(""), Error);
  EXPECT_THROW(decode_hex("0x"), Error);
  EXPECT_THROW(disassemble(std::span<const std::uint8_t>{}), Error);
}

TEST(Hex, EncodeDecodeRoundTrip) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto bytes = testkit::random_bytes(rng, 64);
    EXPECT_EQ(decode_hex(encode_hex(bytes)).bytes, bytes);
  }
}

TEST(Opcodes, TableMatchesShanghai) {
  EXPECT_EQ(mnemonic(0x00), "STOP");
  EXPECT_EQ(mnemonic(0x20), "KECCAK256");
  EXPECT_EQ(mnemonic(0x44), "PREVRANDAO");
  EXPECT_EQ(mnemonic(0x5f), "PUSH0");
  EXPECT_EQ(mnemonic(0x7f), "PUSH32");
  EXPECT_EQ(mnemonic(0x8f), "DUP16");
  EXPECT_EQ(mnemonic(0x9f), "SWAP16");
  EXPECT_EQ(mnemonic(0xf1), "CALL");
  EXPECT_EQ(mnemonic(0xfe), "INVALID");
  EXPECT_EQ(mnemonic(0x0c), "INVALID");
  EXPECT_FALSE(is_defined(0x0c));
  EXPECT_TRUE(is_defined(0xfe));
  EXPECT_EQ(immediate_width(0x5f), 0u);
  EXPECT_EQ(immediate_width(0x60), 1u);
  EXPECT_EQ(immediate_width(0x7f), 32u);
  EXPECT_EQ(immediate_width(0x01), 0u);
  for (unsigned b = 0; b < 256; ++b) EXPECT_FALSE(mnemonic(static_cast<std::uint8_t>(b)).empty());
}

TEST(Disassemble, SpecExample) {
  const auto d = disassemble(decode_hex("0x6001600201"));
  ASSERT_EQ(d.instructions.size(), 3u);
  EXPECT_EQ(format_instruction(d.instructions[0]), "0: PUSH1 0x01");
  EXPECT_EQ(format_instruction(d.instructions[1]), "2: PUSH1 0x02");
  EXPECT_EQ(format_instruction(d.instructions[2]), "4: ADD");
  EXPECT_TRUE(d.warnings.empty());
}

TEST(Disassemble, TruncatedPushIsPaddedAndFlagged) {
  const std::vector<std::uint8_t> code{0x61, 0xaa};
  const auto d = disassemble(code);
  ASSERT_EQ(d.instructions.size(), 1u);
  EXPECT_EQ(d.instructions[0].immediate, (std::vector<std::uint8_t>{0xaa, 0x00}));
  EXPECT_EQ(d.instructions[0].padding, 1);
  EXPECT_EQ(d.instructions[0].encoded_size(), 2u);
  EXPECT_EQ(d.warnings.size(), 1u);
  EXPECT_EQ(reencode(d.instructions), code);
}

TEST(Disassemble, Push0HasNoImmediate) {
  const std::vector<std::uint8_t> code{0x5f, 0x5f, 0x01};
  const auto d = disassemble(code);
  ASSERT_EQ(d.instructions.size(), 3u);
  EXPECT_FALSE(d.instructions[0].has_immediate());
  EXPECT_EQ(d.instructions[1].pc, 1u);
}

TEST(Disassemble, ImmediateValue) {
  const auto d = disassemble(decode_hex("0x61012363deadbeef"));
  EXPECT_EQ(d.instructions[0].immediate_value(), 0x0123u);
  EXPECT_EQ(d.instructions[1].immediate_value(), 0xdeadbeefu);
  std::vector<std::uint8_t> big{0x7f};
  big.insert(big.end(), 32, 0xff);
  EXPECT_FALSE(disassemble(big).instructions[0].immediate_value().has_value());
}

// Property: pcs are strictly increasing, consecutive, and re-encoding restores the bytes.
TEST(Disassemble, RoundTripProperty) {
  Rng rng(17);
  for (int i = 0; i < 2000; ++i) {
    const auto bytes = testkit::random_bytes(rng, 512);
    const auto d = disassemble(bytes);
    ASSERT_EQ(reencode(d.instructions), bytes);
    std::size_t expect_pc = 0;
    for (const auto& ins : d.instructions) {
      ASSERT_EQ(ins.pc, expect_pc);
      ASSERT_EQ(ins.immediate.size(), immediate_width(ins.opcode));
      expect_pc += 1 + immediate_width(ins.opcode);
    }
    ASSERT_GE(expect_pc, bytes.size());
    ASSERT_LE(d.warnings.size(), 1u);
  }
}
