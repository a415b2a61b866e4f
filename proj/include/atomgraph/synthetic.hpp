#pragma once

// Seeded generator of labeled runtime bytecode. Every contract has a
// selector dispatcher, filler functions and one withdraw-style function:
//   normal:    check -> SSTORE -> CALL            (state written before the call)
//   defective: check -> CALL -> JUMPI skip/SSTORE (call first, write skippable)

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "atomgraph/cfg.hpp"
#include "atomgraph/dataset.hpp"
#include "atomgraph/error.hpp"
#include "atomgraph/evm.hpp"
#include "atomgraph/rng.hpp"

namespace atomgraph::synthetic {

struct SyntheticSpec {
  std::size_t n_contracts = 200;
  double defect_fraction = 0.5;
  std::size_t min_blocks = 16;
  std::size_t max_blocks = 32;
  std::uint64_t seed = 1;
  /// Random straight-line opcodes inserted per filler slot (upper bound).
  std::size_t max_filler = 4;

  void validate() const {
    if (n_contracts == 0) throw Error(Errc::InvalidConfig, "n_contracts must be positive");
    if (!(defect_fraction > 0.0 && defect_fraction < 1.0)) {
      throw Error(Errc::InvalidConfig, "defect_fraction must lie in (0, 1)");
    }
    if (min_blocks > max_blocks) throw Error(Errc::InvalidConfig, "min_blocks exceeds max_blocks");
  }
};

struct SyntheticContract {
  std::string id;
  std::vector<std::uint8_t> bytecode;
  int label = 0;
};

/// Prelude, dispatcher revert, fallback, and the withdraw pattern (6 blocks in
/// either variant) plus its dispatcher entry.
inline constexpr std::size_t kMinimumBlocks = 10;

/// Two-pass assembler with PUSH2 label references.
class Assembler {
 public:
  using Label = std::size_t;

  Label label() {
    positions_.push_back(-1);
    return positions_.size() - 1;
  }
  void bind(Label l) {
    positions_[l] = static_cast<long>(code_.size());
    op(evm::op::JUMPDEST);
  }
  void op(std::uint8_t opcode) { code_.push_back(opcode); }
  void push(std::uint64_t value, unsigned width) {
    code_.push_back(static_cast<std::uint8_t>(evm::op::PUSH1 + width - 1));
    for (unsigned i = width; i-- > 0;) code_.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xff));
  }
  void push_label(Label l) {
    code_.push_back(evm::op::PUSH2);
    fixups_.emplace_back(code_.size(), l);
    code_.push_back(0);
    code_.push_back(0);
  }
  void jump(Label l) {
    push_label(l);
    op(evm::op::JUMP);
  }
  void jumpi(Label l) {
    push_label(l);
    op(evm::op::JUMPI);
  }
  std::vector<std::uint8_t> finish() {
    for (const auto& [at, l] : fixups_) {
      const long target = positions_.at(l);
      if (target < 0) throw Error(Errc::InvalidConfig, "unbound assembler label");
      code_[at] = static_cast<std::uint8_t>((target >> 8) & 0xff);
      code_[at + 1] = static_cast<std::uint8_t>(target & 0xff);
    }
    return code_;
  }

 private:
  std::vector<std::uint8_t> code_;
  std::vector<long> positions_;
  std::vector<std::pair<std::size_t, Label>> fixups_;
};

namespace detail {

class ContractWriter {
 public:
  ContractWriter(Rng& rng, std::size_t max_filler) : rng_(rng), max_filler_(max_filler) {}

  Assembler& as() { return as_; }

  /// Stack-neutral straight-line noise; never a terminator, JUMPDEST, SSTORE or CALL.
  void filler() {
    const std::size_t count = rng_.below(max_filler_ + 1);
    for (std::size_t i = 0; i < count; ++i) {
      switch (rng_.below(8)) {
        case 0: as_.push(rng_.below(256), 1); as_.push(rng_.below(256), 1); as_.op(evm::op::ADD); as_.op(evm::op::POP); break;
        case 1: as_.push(rng_.below(256), 1); as_.op(evm::op::MLOAD); as_.op(evm::op::POP); break;
        case 2: as_.push(rng_.below(65536), 2); as_.push(0x40, 1); as_.op(evm::op::MSTORE); break;
        case 3: as_.op(evm::op::CALLVALUE); as_.op(evm::op::ISZERO); as_.op(evm::op::POP); break;
        case 4: as_.push(rng_.below(256), 1); as_.op(evm::op::DUP1); as_.op(evm::op::MUL); as_.op(evm::op::POP); break;
        case 5: as_.op(evm::op::TIMESTAMP); as_.push(rng_.below(256), 1); as_.op(evm::op::AND); as_.op(evm::op::POP); break;
        case 6: as_.push(0x20, 1); as_.push(0, 1); as_.op(evm::op::KECCAK256); as_.op(evm::op::POP); break;
        default: as_.op(evm::op::GAS); as_.op(evm::op::POP); break;
      }
    }
  }

  void revert_block() {
    filler();
    as_.push(0, 1);
    as_.op(evm::op::DUP1);
    as_.op(evm::op::REVERT);
  }

  /// `if caller's balance slot is zero: revert` — ends the current block with
  /// a JUMPI to `ok` and emits the revert block. 2 blocks.
  void check(Assembler::Label ok, std::uint8_t slot) {
    filler();
    as_.op(evm::op::CALLER);
    as_.push(slot, 1);
    as_.op(evm::op::SLOAD);
    as_.op(evm::op::GT);
    as_.jumpi(ok);
    revert_block();
  }

  void store(std::uint8_t slot) {
    filler();
    as_.push(0, 1);
    as_.push(slot, 1);
    as_.op(evm::op::SSTORE);
  }

  /// CALL(gas, caller, value, 0, 0, 0, 0) leaving the success flag on the stack.
  void external_call() {
    filler();
    as_.push(0, 1);
    as_.op(evm::op::DUP1);
    as_.op(evm::op::DUP1);
    as_.op(evm::op::DUP1);
    as_.op(evm::op::CALLVALUE);
    as_.op(evm::op::CALLER);
    as_.op(evm::op::GAS);
    as_.op(evm::op::CALL);
  }

  void stop_block() {
    filler();
    as_.op(evm::op::STOP);
  }

  // ---- filler functions; each returns its block count --------------------

  std::size_t getter(Assembler::Label entry) {
    as_.bind(entry);
    filler();
    as_.push(rng_.below(16), 1);
    as_.op(evm::op::SLOAD);
    as_.push(0, 1);
    as_.op(evm::op::MSTORE);
    as_.push(0x20, 1);
    as_.push(0, 1);
    as_.op(evm::op::RETURN);
    return 1;
  }

  std::size_t setter(Assembler::Label entry) {
    const auto ok = as_.label();
    as_.bind(entry);
    check(ok, static_cast<std::uint8_t>(rng_.below(16)));
    as_.bind(ok);
    as_.push(4, 1);
    as_.op(evm::op::CALLDATALOAD);
    store(static_cast<std::uint8_t>(16 + rng_.below(16)));
    as_.op(evm::op::POP);
    as_.op(evm::op::STOP);
    return 3;
  }

  /// Counted loop: header, body (jumps back), exit.
  std::size_t loop(Assembler::Label entry) {
    const auto head = as_.label();
    const auto done = as_.label();
    as_.bind(entry);
    filler();
    as_.push(rng_.below(8) + 1, 1);
    as_.bind(head);
    as_.op(evm::op::DUP1);
    as_.op(evm::op::ISZERO);
    as_.jumpi(done);
    filler();
    as_.push(1, 1);
    as_.op(evm::op::SWAP1);
    as_.op(evm::op::SUB);
    as_.jump(head);
    as_.bind(done);
    as_.op(evm::op::POP);
    as_.op(evm::op::STOP);
    return 4;
  }

  /// External call with a success check and no state write. 3 blocks.
  std::size_t notify(Assembler::Label entry) {
    const auto fail = as_.label();
    as_.bind(entry);
    external_call();
    as_.op(evm::op::ISZERO);
    as_.jumpi(fail);
    stop_block();
    as_.bind(fail);
    revert_block();
    return 3;
  }

  std::size_t emit_logger(Assembler::Label entry) {
    as_.bind(entry);
    filler();
    as_.push(rng_.below(256), 1);
    as_.push(0x20, 1);
    as_.push(0, 1);
    as_.op(evm::op::LOG1);
    as_.op(evm::op::STOP);
    return 1;
  }

  /// The labeled pattern; 6 blocks for either label.
  std::size_t withdraw(Assembler::Label entry, bool defective) {
    const auto ok = as_.label();
    const std::uint8_t slot = static_cast<std::uint8_t>(rng_.below(16));
    as_.bind(entry);
    check(ok, slot);
    as_.bind(ok);
    if (!defective) {
      const auto interact = as_.label();
      const auto fail = as_.label();
      store(slot);
      as_.jump(interact);
      as_.bind(interact);
      external_call();
      as_.op(evm::op::ISZERO);
      as_.jumpi(fail);
      stop_block();
      as_.bind(fail);
      revert_block();
      return 6;
    }
    const auto skip = as_.label();
    const auto end = as_.label();
    external_call();
    as_.op(evm::op::ISZERO);
    as_.jumpi(skip);
    store(slot);
    as_.jump(end);
    as_.bind(skip);
    stop_block();
    as_.bind(end);
    as_.op(evm::op::STOP);
    return 6;
  }

 private:
  Rng& rng_;
  std::size_t max_filler_;
  Assembler as_;
};

}  // namespace detail

/// One contract with the given label and a block budget in [min, max].
inline std::vector<std::uint8_t> generate_contract(bool defective, std::size_t target_blocks, Rng& rng,
                                                   std::size_t max_filler = 4) {
  if (target_blocks < kMinimumBlocks) {
    throw Error(Errc::PatternTooLarge, "block budget " + std::to_string(target_blocks) + " cannot hold the pattern (needs " +
                                           std::to_string(kMinimumBlocks) + ")");
  }
  detail::ContractWriter w(rng, max_filler);
  auto& as = w.as();

  enum class Kind { Getter, Setter, Loop, Notify, Logger, Withdraw };
  // Blocks: function body + 1 dispatcher JUMPI block.
  auto cost = [](Kind k) -> std::size_t {
    switch (k) {
      case Kind::Getter: return 2;
      case Kind::Setter: return 4;
      case Kind::Loop: return 5;
      case Kind::Notify: return 4;
      case Kind::Logger: return 2;
      case Kind::Withdraw: return 7;
    }
    return 2;
  };
  // prelude size check + dispatcher revert + fallback; the selector load shares
  // a block with the first dispatcher entry.
  std::size_t used = 3 + cost(Kind::Withdraw);
  std::vector<Kind> functions{Kind::Withdraw};
  const Kind pool[] = {Kind::Getter, Kind::Setter, Kind::Loop, Kind::Notify, Kind::Logger};
  for (std::size_t attempts = 0; attempts < 64 && used < target_blocks; ++attempts) {
    const Kind k = pool[rng.below(std::size(pool))];
    if (used + cost(k) > target_blocks) continue;
    functions.push_back(k);
    used += cost(k);
  }
  rng.shuffle(std::span<Kind>(functions));

  const auto fallback = as.label();
  std::vector<Assembler::Label> entries;
  for (std::size_t i = 0; i < functions.size(); ++i) entries.push_back(as.label());

  // Prelude: free-memory pointer, short-calldata guard, selector extraction.
  as.push(0x80, 1);
  as.push(0x40, 1);
  as.op(evm::op::MSTORE);
  as.push(4, 1);
  as.op(evm::op::CALLDATASIZE);
  as.op(evm::op::LT);
  as.jumpi(fallback);
  as.push(0, 1);
  as.op(evm::op::CALLDATALOAD);
  as.push(0xe0, 1);
  as.op(evm::op::SHR);
  for (std::size_t i = 0; i < functions.size(); ++i) {
    as.op(evm::op::DUP1);
    as.push(static_cast<std::uint32_t>(rng()), 4);
    as.op(evm::op::EQ);
    as.jumpi(entries[i]);
  }
  w.revert_block();
  as.bind(fallback);
  w.revert_block();

  for (std::size_t i = 0; i < functions.size(); ++i) {
    switch (functions[i]) {
      case Kind::Getter: w.getter(entries[i]); break;
      case Kind::Setter: w.setter(entries[i]); break;
      case Kind::Loop: w.loop(entries[i]); break;
      case Kind::Notify: w.notify(entries[i]); break;
      case Kind::Logger: w.emit_logger(entries[i]); break;
      case Kind::Withdraw: w.withdraw(entries[i], defective); break;
    }
  }
  return as.finish();
}

/// Exactly round(n * defect_fraction) contracts are labeled defective; ids
/// are `synth-0000`, ... in generation order.
inline std::vector<SyntheticContract> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  if (spec.max_blocks < kMinimumBlocks) {
    throw Error(Errc::PatternTooLarge, "max_blocks " + std::to_string(spec.max_blocks) + " is below the pattern minimum " +
                                           std::to_string(kMinimumBlocks));
  }
  const auto defective =
      static_cast<std::size_t>(std::llround(spec.defect_fraction * static_cast<double>(spec.n_contracts)));
  std::vector<int> labels(spec.n_contracts, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(std::min(defective, spec.n_contracts)), 1);
  Rng rng(mix_seed(spec.seed, 0x73796e7468ULL));
  rng.shuffle(std::span<int>(labels));

  const std::size_t lo = std::max(spec.min_blocks, kMinimumBlocks);
  std::vector<SyntheticContract> out;
  out.reserve(spec.n_contracts);
  for (std::size_t i = 0; i < spec.n_contracts; ++i) {
    Rng contract_rng(mix_seed(spec.seed, i));
    const std::size_t target = lo + contract_rng.below(spec.max_blocks - lo + 1);
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%04zu", i);
    out.push_back({id, generate_contract(labels[i] == 1, target, contract_rng, spec.max_filler), labels[i]});
  }
  return out;
}

/// Writes `<dir>/contracts/<id>.hex` and `<dir>/manifest.txt`; returns the manifest.
inline dataset::DatasetManifest write_corpus(const std::vector<SyntheticContract>& contracts,
                                             const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "contracts");
  dataset::DatasetManifest manifest;
  for (const auto& c : contracts) {
    const auto path = dir / "contracts" / (c.id + ".hex");
    std::ofstream out(path);
    if (!out) throw Error(Errc::MissingFile, "cannot write " + path.string());
    out << evm::encode_hex(c.bytecode) << '\n';
    manifest.records.push_back({c.id, path, c.label});
  }
  std::ofstream mf(dir / "manifest.txt");
  if (!mf) throw Error(Errc::MissingFile, "cannot write manifest in " + dir.string());
  dataset::write_manifest(mf, manifest, dir);
  return manifest;
}

/// Reachability oracle: 1 when some path leads from a block containing CALL to
/// a block containing SSTORE (or CALL precedes SSTORE inside one block).
inline int call_before_store_label(const cfg::Cfg& g) {
  std::vector<cfg::BlockId> call_blocks;
  std::set<cfg::BlockId> store_blocks;
  for (const auto& [id, block] : g.blocks) {
    bool seen_call = false;
    for (const auto& ins : block.instructions) {
      if (ins.opcode == evm::op::CALL) seen_call = true;
      if (ins.opcode == evm::op::SSTORE) {
        store_blocks.insert(id);
        if (seen_call) return 1;
      }
    }
    if (seen_call) call_blocks.push_back(id);
  }
  std::map<cfg::BlockId, std::vector<cfg::BlockId>> succ;
  for (const auto& e : g.edges) {
    if (e.kind != cfg::EdgeKind::Virtual) succ[e.from].push_back(e.to);
  }
  for (auto start : call_blocks) {
    std::set<cfg::BlockId> seen;
    std::vector<cfg::BlockId> stack(succ[start].begin(), succ[start].end());
    while (!stack.empty()) {
      const auto b = stack.back();
      stack.pop_back();
      if (!seen.insert(b).second) continue;
      if (store_blocks.count(b)) return 1;
      for (auto s : succ[b]) stack.push_back(s);
    }
  }
  return 0;
}

}  // namespace atomgraph::synthetic
