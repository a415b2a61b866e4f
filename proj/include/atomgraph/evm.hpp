#pragma once

// EVM runtime bytecode decoding and linear-sweep disassembly (Shanghai opcode set).

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "atomgraph/error.hpp"

namespace atomgraph::evm {

struct Bytecode {
  std::vector<std::uint8_t> bytes;
  std::string source_id;
};

namespace op {
inline constexpr std::uint8_t STOP = 0x00;
inline constexpr std::uint8_t ADD = 0x01;
inline constexpr std::uint8_t MUL = 0x02;
inline constexpr std::uint8_t SUB = 0x03;
inline constexpr std::uint8_t LT = 0x10;
inline constexpr std::uint8_t GT = 0x11;
inline constexpr std::uint8_t EQ = 0x14;
inline constexpr std::uint8_t ISZERO = 0x15;
inline constexpr std::uint8_t AND = 0x16;
inline constexpr std::uint8_t SHR = 0x1c;
inline constexpr std::uint8_t KECCAK256 = 0x20;
inline constexpr std::uint8_t ADDRESS = 0x30;
inline constexpr std::uint8_t BALANCE = 0x31;
inline constexpr std::uint8_t CALLER = 0x33;
inline constexpr std::uint8_t CALLVALUE = 0x34;
inline constexpr std::uint8_t CALLDATALOAD = 0x35;
inline constexpr std::uint8_t CALLDATASIZE = 0x36;
inline constexpr std::uint8_t TIMESTAMP = 0x42;
inline constexpr std::uint8_t POP = 0x50;
inline constexpr std::uint8_t MLOAD = 0x51;
inline constexpr std::uint8_t MSTORE = 0x52;
inline constexpr std::uint8_t SLOAD = 0x54;
inline constexpr std::uint8_t SSTORE = 0x55;
inline constexpr std::uint8_t JUMP = 0x56;
inline constexpr std::uint8_t JUMPI = 0x57;
inline constexpr std::uint8_t GAS = 0x5a;
inline constexpr std::uint8_t JUMPDEST = 0x5b;
inline constexpr std::uint8_t PUSH0 = 0x5f;
inline constexpr std::uint8_t PUSH1 = 0x60;
inline constexpr std::uint8_t PUSH2 = 0x61;
inline constexpr std::uint8_t PUSH4 = 0x63;
inline constexpr std::uint8_t PUSH32 = 0x7f;
inline constexpr std::uint8_t DUP1 = 0x80;
inline constexpr std::uint8_t DUP2 = 0x81;
inline constexpr std::uint8_t SWAP1 = 0x90;
inline constexpr std::uint8_t LOG1 = 0xa1;
inline constexpr std::uint8_t CALL = 0xf1;
inline constexpr std::uint8_t RETURN = 0xf3;
inline constexpr std::uint8_t DELEGATECALL = 0xf4;
inline constexpr std::uint8_t STATICCALL = 0xfa;
inline constexpr std::uint8_t REVERT = 0xfd;
inline constexpr std::uint8_t INVALID = 0xfe;
inline constexpr std::uint8_t SELFDESTRUCT = 0xff;
}  // namespace op

namespace detail {

struct OpcodeTable {
  std::array<std::string_view, 256> names{};

  constexpr OpcodeTable() {
    for (auto& n : names) n = "INVALID";
    constexpr std::pair<std::uint8_t, std::string_view> fixed[] = {
        {0x00, "STOP"},         {0x01, "ADD"},          {0x02, "MUL"},           {0x03, "SUB"},
        {0x04, "DIV"},          {0x05, "SDIV"},         {0x06, "MOD"},           {0x07, "SMOD"},
        {0x08, "ADDMOD"},       {0x09, "MULMOD"},       {0x0a, "EXP"},           {0x0b, "SIGNEXTEND"},
        {0x10, "LT"},           {0x11, "GT"},           {0x12, "SLT"},           {0x13, "SGT"},
        {0x14, "EQ"},           {0x15, "ISZERO"},       {0x16, "AND"},           {0x17, "OR"},
        {0x18, "XOR"},          {0x19, "NOT"},          {0x1a, "BYTE"},          {0x1b, "SHL"},
        {0x1c, "SHR"},          {0x1d, "SAR"},          {0x20, "KECCAK256"},     {0x30, "ADDRESS"},
        {0x31, "BALANCE"},      {0x32, "ORIGIN"},       {0x33, "CALLER"},        {0x34, "CALLVALUE"},
        {0x35, "CALLDATALOAD"}, {0x36, "CALLDATASIZE"}, {0x37, "CALLDATACOPY"},  {0x38, "CODESIZE"},
        {0x39, "CODECOPY"},     {0x3a, "GASPRICE"},     {0x3b, "EXTCODESIZE"},   {0x3c, "EXTCODECOPY"},
        {0x3d, "RETURNDATASIZE"}, {0x3e, "RETURNDATACOPY"}, {0x3f, "EXTCODEHASH"}, {0x40, "BLOCKHASH"},
        {0x41, "COINBASE"},     {0x42, "TIMESTAMP"},    {0x43, "NUMBER"},        {0x44, "PREVRANDAO"},
        {0x45, "GASLIMIT"},     {0x46, "CHAINID"},      {0x47, "SELFBALANCE"},   {0x48, "BASEFEE"},
        {0x50, "POP"},          {0x51, "MLOAD"},        {0x52, "MSTORE"},        {0x53, "MSTORE8"},
        {0x54, "SLOAD"},        {0x55, "SSTORE"},       {0x56, "JUMP"},          {0x57, "JUMPI"},
        {0x58, "PC"},           {0x59, "MSIZE"},        {0x5a, "GAS"},           {0x5b, "JUMPDEST"},
        {0x5f, "PUSH0"},        {0xa0, "LOG0"},         {0xa1, "LOG1"},          {0xa2, "LOG2"},
        {0xa3, "LOG3"},         {0xa4, "LOG4"},         {0xf0, "CREATE"},        {0xf1, "CALL"},
        {0xf2, "CALLCODE"},     {0xf3, "RETURN"},       {0xf4, "DELEGATECALL"},  {0xf5, "CREATE2"},
        {0xfa, "STATICCALL"},   {0xfd, "REVERT"},       {0xfe, "INVALID"},       {0xff, "SELFDESTRUCT"},
    };
    for (const auto& [code, name] : fixed) names[code] = name;
    constexpr std::string_view push[] = {
        "PUSH1",  "PUSH2",  "PUSH3",  "PUSH4",  "PUSH5",  "PUSH6",  "PUSH7",  "PUSH8",
        "PUSH9",  "PUSH10", "PUSH11", "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16",
        "PUSH17", "PUSH18", "PUSH19", "PUSH20", "PUSH21", "PUSH22", "PUSH23", "PUSH24",
        "PUSH25", "PUSH26", "PUSH27", "PUSH28", "PUSH29", "PUSH30", "PUSH31", "PUSH32"};
    constexpr std::string_view dup[] = {"DUP1", "DUP2",  "DUP3",  "DUP4",  "DUP5",  "DUP6",  "DUP7",  "DUP8",
                                        "DUP9", "DUP10", "DUP11", "DUP12", "DUP13", "DUP14", "DUP15", "DUP16"};
    constexpr std::string_view swap[] = {"SWAP1",  "SWAP2",  "SWAP3",  "SWAP4",  "SWAP5",  "SWAP6",
                                         "SWAP7",  "SWAP8",  "SWAP9",  "SWAP10", "SWAP11", "SWAP12",
                                         "SWAP13", "SWAP14", "SWAP15", "SWAP16"};
    for (int i = 0; i < 32; ++i) names[0x60 + i] = push[i];
    for (int i = 0; i < 16; ++i) {
      names[0x80 + i] = dup[i];
      names[0x90 + i] = swap[i];
    }
  }
};

inline constexpr OpcodeTable kOpcodeTable{};

inline int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace detail

constexpr std::string_view mnemonic(std::uint8_t opcode) { return detail::kOpcodeTable.names[opcode]; }

/// Immediate width in bytes: 1..32 for PUSH1..PUSH32, 0 otherwise (including PUSH0).
constexpr unsigned immediate_width(std::uint8_t opcode) {
  return (opcode >= op::PUSH1 && opcode <= op::PUSH32) ? static_cast<unsigned>(opcode - op::PUSH1 + 1) : 0U;
}

constexpr bool is_push(std::uint8_t opcode) { return opcode >= op::PUSH0 && opcode <= op::PUSH32; }

constexpr bool is_defined(std::uint8_t opcode) {
  return opcode == op::INVALID || mnemonic(opcode) != "INVALID";
}

struct Instruction {
  std::uint32_t pc = 0;
  std::uint8_t opcode = 0;
  std::string_view mnemonic;
  std::vector<std::uint8_t> immediate;
  /// Zero bytes appended because the code ended inside the immediate.
  std::uint8_t padding = 0;

  bool has_immediate() const { return !immediate.empty(); }
  std::size_t encoded_size() const { return 1 + immediate.size() - padding; }

  /// Big-endian immediate value when it fits in 64 bits.
  std::optional<std::uint64_t> immediate_value() const {
    std::uint64_t value = 0;
    for (std::size_t i = 0; i < immediate.size(); ++i) {
      if (value >> 56) return std::nullopt;
      value = (value << 8) | immediate[i];
    }
    return value;
  }

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

struct Disassembly {
  std::vector<Instruction> instructions;
  std::vector<std::string> warnings;
};

inline Bytecode decode_hex(std::string_view text, std::string source_id = {}) {
  std::size_t offset = 0;
  if (text.size() >= 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')) offset = 2;
  // Trailing newline from files is tolerated; interior whitespace is not.
  std::size_t end = text.size();
  while (end > offset && (text[end - 1] == '\n' || text[end - 1] == '\r' || text[end - 1] == ' ')) --end;
  if (end == offset) throw Error(Errc::EmptyInput, "no hex digits", offset);
  for (std::size_t i = offset; i < end; ++i) {
    if (detail::hex_value(text[i]) < 0) {
      throw Error(Errc::NonHexCharacter, "non-hex character at offset " + std::to_string(i), i);
    }
  }
  if ((end - offset) % 2 != 0) {
    throw Error(Errc::OddLength, "odd number of hex digits", end - 1);
  }
  Bytecode code;
  code.source_id = std::move(source_id);
  code.bytes.reserve((end - offset) / 2);
  for (std::size_t i = offset; i < end; i += 2) {
    code.bytes.push_back(
        static_cast<std::uint8_t>(detail::hex_value(text[i]) * 16 + detail::hex_value(text[i + 1])));
  }
  return code;
}

inline std::string encode_hex(std::span<const std::uint8_t> bytes, bool prefix = true) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out = prefix ? "0x" : "";
  out.reserve(out.size() + bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xf]);
  }
  return out;
}

inline Disassembly disassemble(std::span<const std::uint8_t> code) {
  if (code.empty()) throw Error(Errc::EmptyInput, "empty bytecode");
  Disassembly out;
  out.instructions.reserve(code.size());
  std::size_t pc = 0;
  while (pc < code.size()) {
    Instruction ins;
    ins.pc = static_cast<std::uint32_t>(pc);
    ins.opcode = code[pc];
    ins.mnemonic = mnemonic(ins.opcode);
    const unsigned width = immediate_width(ins.opcode);
    if (width > 0) {
      const std::size_t available = std::min<std::size_t>(width, code.size() - pc - 1);
      ins.immediate.assign(code.begin() + static_cast<std::ptrdiff_t>(pc + 1),
                           code.begin() + static_cast<std::ptrdiff_t>(pc + 1 + available));
      if (available < width) {
        ins.padding = static_cast<std::uint8_t>(width - available);
        ins.immediate.resize(width, 0);
        out.warnings.push_back("truncated " + std::string(ins.mnemonic) + " at pc " + std::to_string(pc) +
                               ": padded " + std::to_string(ins.padding) + " zero byte(s)");
      }
    }
    pc += 1 + width;
    out.instructions.push_back(std::move(ins));
  }
  return out;
}

inline Disassembly disassemble(const Bytecode& code) { return disassemble(std::span<const std::uint8_t>(code.bytes)); }

/// Inverse of disassemble: opcode byte plus immediate bytes, padding removed.
inline std::vector<std::uint8_t> reencode(std::span<const Instruction> instructions) {
  std::vector<std::uint8_t> bytes;
  for (const auto& ins : instructions) {
    bytes.push_back(ins.opcode);
    bytes.insert(bytes.end(), ins.immediate.begin(),
                 ins.immediate.end() - static_cast<std::ptrdiff_t>(ins.padding));
  }
  return bytes;
}

/// `PC: MNEMONIC [0xIMM]` listing line.
inline std::string format_instruction(const Instruction& ins) {
  std::string line = std::to_string(ins.pc) + ": " + std::string(ins.mnemonic);
  if (ins.has_immediate()) line += " " + encode_hex(ins.immediate);
  return line;
}

}  // namespace atomgraph::evm
