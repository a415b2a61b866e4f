#pragma once

// Basic-block partitioning, static jump resolution and DOT (de)serialization.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "atomgraph/error.hpp"
#include "atomgraph/evm.hpp"

namespace atomgraph::cfg {

using evm::Instruction;
using BlockId = std::uint32_t;

enum class Terminator { Jump, JumpI, Stop, Revert, Return, Invalid, SelfDestruct, FallThrough };

enum class EdgeKind { JumpTaken, BranchTaken, BranchFallthrough, FallThrough, Virtual };

inline std::string_view to_string(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::JumpTaken: return "JumpTaken";
    case EdgeKind::BranchTaken: return "BranchTaken";
    case EdgeKind::BranchFallthrough: return "BranchFallthrough";
    case EdgeKind::FallThrough: return "FallThrough";
    case EdgeKind::Virtual: return "Virtual";
  }
  return "FallThrough";
}

inline std::string_view to_string(Terminator t) {
  switch (t) {
    case Terminator::Jump: return "Jump";
    case Terminator::JumpI: return "JumpI";
    case Terminator::Stop: return "Stop";
    case Terminator::Revert: return "Revert";
    case Terminator::Return: return "Return";
    case Terminator::Invalid: return "Invalid";
    case Terminator::SelfDestruct: return "SelfDestruct";
    case Terminator::FallThrough: return "FallThrough";
  }
  return "FallThrough";
}

inline bool parse_edge_kind(std::string_view text, EdgeKind& out) {
  for (auto k : {EdgeKind::JumpTaken, EdgeKind::BranchTaken, EdgeKind::BranchFallthrough, EdgeKind::FallThrough,
                 EdgeKind::Virtual}) {
    if (to_string(k) == text) {
      out = k;
      return true;
    }
  }
  return false;
}

/// Terminator kind of an instruction, FallThrough for non-terminators.
inline Terminator terminator_of(const Instruction& ins) {
  switch (ins.opcode) {
    case evm::op::JUMP: return Terminator::Jump;
    case evm::op::JUMPI: return Terminator::JumpI;
    case evm::op::STOP: return Terminator::Stop;
    case evm::op::REVERT: return Terminator::Revert;
    case evm::op::RETURN: return Terminator::Return;
    case evm::op::SELFDESTRUCT: return Terminator::SelfDestruct;
    default: break;
  }
  return evm::is_defined(ins.opcode) && ins.opcode != evm::op::INVALID ? Terminator::FallThrough
                                                                        : Terminator::Invalid;
}

inline bool is_terminator(const Instruction& ins) { return terminator_of(ins) != Terminator::FallThrough; }

struct BasicBlock {
  BlockId id = 0;
  std::vector<Instruction> instructions;
  Terminator terminator = Terminator::FallThrough;

  std::uint32_t end_pc() const {
    const auto& last = instructions.back();
    return last.pc + static_cast<std::uint32_t>(1 + last.immediate.size());
  }
  bool starts_with_jumpdest() const {
    return !instructions.empty() && instructions.front().opcode == evm::op::JUMPDEST;
  }
};

struct Edge {
  BlockId from = 0;
  BlockId to = 0;
  EdgeKind kind = EdgeKind::FallThrough;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

enum class UnresolvedReason { NoConstantTarget, TargetNotJumpdest };

struct UnresolvedJump {
  BlockId block = 0;
  UnresolvedReason reason = UnresolvedReason::NoConstantTarget;
  /// Constant target when the reason is TargetNotJumpdest.
  std::uint64_t target = 0;
};

struct Cfg {
  std::map<BlockId, BasicBlock> blocks;
  std::vector<Edge> edges;
  BlockId entry = 0;
  std::vector<UnresolvedJump> unresolved_jumps;

  std::size_t size() const { return blocks.size(); }

  /// Dense index of each block in pc order.
  std::map<BlockId, std::size_t> index() const {
    std::map<BlockId, std::size_t> out;
    std::size_t i = 0;
    for (const auto& [id, _] : blocks) out.emplace(id, i++);
    return out;
  }

  std::vector<BlockId> ids() const {
    std::vector<BlockId> out;
    out.reserve(blocks.size());
    for (const auto& [id, _] : blocks) out.push_back(id);
    return out;
  }

  std::vector<const Edge*> out_edges(BlockId id) const {
    std::vector<const Edge*> out;
    for (const auto& e : edges) {
      if (e.from == id) out.push_back(&e);
    }
    return out;
  }
};

inline std::vector<BasicBlock> partition_blocks(std::span<const Instruction> instructions) {
  std::vector<BasicBlock> blocks;
  BasicBlock current;
  auto close = [&] {
    if (current.instructions.empty()) return;
    current.id = current.instructions.front().pc;
    current.terminator = terminator_of(current.instructions.back());
    blocks.push_back(std::move(current));
    current = BasicBlock{};
  };
  for (const auto& ins : instructions) {
    if (ins.opcode == evm::op::JUMPDEST) close();
    current.instructions.push_back(ins);
    if (is_terminator(ins)) close();
  }
  close();
  return blocks;
}

namespace detail {

/// Constant jump target pushed by the instruction immediately before the terminator.
inline std::optional<std::uint64_t> static_jump_target(const BasicBlock& block) {
  if (block.instructions.size() < 2) return std::nullopt;
  const auto& prev = block.instructions[block.instructions.size() - 2];
  if (!evm::is_push(prev.opcode)) return std::nullopt;
  if (prev.opcode == evm::op::PUSH0) return 0;
  return prev.immediate_value();
}

}  // namespace detail

inline Cfg resolve_targets_and_link(std::vector<BasicBlock> blocks) {
  Cfg g;
  for (auto& b : blocks) g.blocks.emplace(b.id, std::move(b));
  if (!g.blocks.empty()) g.entry = g.blocks.begin()->first;

  for (auto it = g.blocks.begin(); it != g.blocks.end(); ++it) {
    const BasicBlock& block = it->second;
    const auto next = std::next(it);
    const bool has_next = next != g.blocks.end();

    auto link_target = [&](EdgeKind kind) {
      const auto target = detail::static_jump_target(block);
      if (!target) {
        g.unresolved_jumps.push_back({block.id, UnresolvedReason::NoConstantTarget, 0});
        return;
      }
      const auto found = *target <= UINT32_MAX ? g.blocks.find(static_cast<BlockId>(*target)) : g.blocks.end();
      if (found == g.blocks.end() || !found->second.starts_with_jumpdest()) {
        g.unresolved_jumps.push_back({block.id, UnresolvedReason::TargetNotJumpdest, *target});
        return;
      }
      g.edges.push_back({block.id, found->first, kind});
    };

    switch (block.terminator) {
      case Terminator::Jump:
        link_target(EdgeKind::JumpTaken);
        break;
      case Terminator::JumpI:
        link_target(EdgeKind::BranchTaken);
        if (has_next) g.edges.push_back({block.id, next->first, EdgeKind::BranchFallthrough});
        break;
      case Terminator::FallThrough:
        if (has_next) g.edges.push_back({block.id, next->first, EdgeKind::FallThrough});
        break;
      default:
        break;
    }
  }
  return g;
}

inline Cfg build_cfg(std::span<const Instruction> instructions) {
  return resolve_targets_and_link(partition_blocks(instructions));
}

inline Cfg build_cfg(std::span<const std::uint8_t> bytecode) {
  return build_cfg(evm::disassemble(bytecode).instructions);
}

inline std::string block_label(const BasicBlock& block) {
  std::string label;
  for (const auto& ins : block.instructions) {
    if (!label.empty()) label += "\\n";
    label += ins.mnemonic;
  }
  return label;
}

inline std::string to_dot(const Cfg& g) {
  std::string out = "digraph cfg {\n";
  for (const auto& [id, block] : g.blocks) {
    out += "  \"" + std::to_string(id) + "\" [label=\"" + block_label(block) + "\"];\n";
  }
  for (const auto& e : g.edges) {
    out += "  \"" + std::to_string(e.from) + "\" -> \"" + std::to_string(e.to) + "\" [kind=" +
           std::string(to_string(e.kind)) + "];\n";
  }
  out += "}\n";
  return out;
}

struct DotNode {
  BlockId id = 0;
  std::string label;
  friend bool operator==(const DotNode&, const DotNode&) = default;
};

/// Ids, labels and edges of a CFG; what survives a DOT round trip.
struct CfgSkeleton {
  std::vector<DotNode> nodes;
  std::vector<Edge> edges;
  friend bool operator==(const CfgSkeleton&, const CfgSkeleton&) = default;
};

inline CfgSkeleton skeleton_of(const Cfg& g) {
  CfgSkeleton s;
  for (const auto& [id, block] : g.blocks) s.nodes.push_back({id, block_label(block)});
  s.edges = g.edges;
  return s;
}

namespace detail {

class DotCursor {
 public:
  DotCursor(std::string_view line, std::size_t line_no) : line_(line), line_no_(line_no) {}

  void skip_ws() {
    while (pos_ < line_.size() && (line_[pos_] == ' ' || line_[pos_] == '\t' || line_[pos_] == '\r')) ++pos_;
  }
  bool done() {
    skip_ws();
    return pos_ >= line_.size();
  }
  bool peek(std::string_view token) {
    skip_ws();
    return line_.substr(pos_, token.size()) == token;
  }
  void expect(std::string_view token) {
    if (!peek(token)) fail("expected '" + std::string(token) + "'");
    pos_ += token.size();
  }
  std::string quoted() {
    expect("\"");
    std::string out;
    while (pos_ < line_.size() && line_[pos_] != '"') {
      if (line_[pos_] == '\\' && pos_ + 1 < line_.size()) {
        out.push_back(line_[pos_]);
        ++pos_;
      }
      out.push_back(line_[pos_]);
      ++pos_;
    }
    if (pos_ >= line_.size()) fail("unterminated string");
    ++pos_;
    return out;
  }
  std::string word() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < line_.size() && (std::isalnum(static_cast<unsigned char>(line_[pos_])) || line_[pos_] == '_')) {
      ++pos_;
    }
    if (start == pos_) fail("expected identifier");
    return std::string(line_.substr(start, pos_ - start));
  }
  BlockId id() {
    const std::string text = quoted();
    if (text.empty() || text.size() > 10 ||
        !std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      fail("node id must be a decimal pc");
    }
    const auto value = std::stoull(text);
    if (value > UINT32_MAX) fail("node id out of range");
    return static_cast<BlockId>(value);
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(Errc::DotParse, "line " + std::to_string(line_no_) + ": " + what, line_no_);
  }

 private:
  std::string_view line_;
  std::size_t line_no_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses the DOT subset emitted by to_dot.
inline CfgSkeleton parse_dot(std::string_view text) {
  CfgSkeleton out;
  std::size_t line_no = 0;
  bool opened = false;
  bool closed = false;
  std::set<BlockId> seen;
  std::vector<std::size_t> edge_lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    detail::DotCursor cur(line, line_no);
    if (cur.done()) {
      if (end == text.size()) break;
      continue;
    }
    if (closed) cur.fail("content after closing brace");
    if (!opened) {
      cur.expect("digraph");
      cur.word();
      cur.expect("{");
      if (!cur.done()) cur.fail("trailing content after '{'");
      opened = true;
      continue;
    }
    if (cur.peek("}")) {
      cur.expect("}");
      if (!cur.done()) cur.fail("trailing content after '}'");
      closed = true;
      continue;
    }
    const BlockId from = cur.id();
    if (cur.peek("->")) {
      cur.expect("->");
      const BlockId to = cur.id();
      cur.expect("[");
      if (cur.word() != "kind") cur.fail("expected kind attribute");
      cur.expect("=");
      Edge e{from, to, EdgeKind::FallThrough};
      if (!parse_edge_kind(cur.word(), e.kind)) cur.fail("unknown edge kind");
      cur.expect("]");
      cur.expect(";");
      if (!cur.done()) cur.fail("trailing content");
      out.edges.push_back(e);
      edge_lines.push_back(line_no);
    } else {
      cur.expect("[");
      if (cur.word() != "label") cur.fail("expected label attribute");
      cur.expect("=");
      DotNode node{from, cur.quoted()};
      cur.expect("]");
      cur.expect(";");
      if (!cur.done()) cur.fail("trailing content");
      if (!seen.insert(from).second) cur.fail("duplicate node " + std::to_string(from));
      out.nodes.push_back(std::move(node));
    }
  }
  if (!opened) throw Error(Errc::DotParse, "line 1: missing digraph header", 1);
  if (!closed) throw Error(Errc::DotParse, "line " + std::to_string(line_no) + ": missing closing brace", line_no);
  for (std::size_t i = 0; i < out.edges.size(); ++i) {
    const auto& e = out.edges[i];
    if (!seen.count(e.from) || !seen.count(e.to)) {
      throw Error(Errc::DotParse, "line " + std::to_string(edge_lines[i]) + ": edge references undeclared node",
                  edge_lines[i]);
    }
  }
  return out;
}

struct CfgStats {
  std::size_t blocks = 0;
  std::size_t edges = 0;
  std::size_t unresolved_jumps = 0;
};

inline CfgStats stats(const Cfg& g) { return {g.blocks.size(), g.edges.size(), g.unresolved_jumps.size()}; }

/// Undirected simple-graph view (no self loops, no parallel edges) over dense indices.
inline std::vector<std::vector<std::size_t>> undirected_neighbors(const Cfg& g) {
  const auto index = g.index();
  std::vector<std::set<std::size_t>> sets(g.blocks.size());
  for (const auto& e : g.edges) {
    const auto a = index.at(e.from);
    const auto b = index.at(e.to);
    if (a == b) continue;
    sets[a].insert(b);
    sets[b].insert(a);
  }
  std::vector<std::vector<std::size_t>> out(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) out[i].assign(sets[i].begin(), sets[i].end());
  return out;
}

}  // namespace atomgraph::cfg
