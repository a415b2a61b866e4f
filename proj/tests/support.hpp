#pragma once

// Shared generators and oracles for the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "atomgraph/atomgraph.hpp"

namespace atomgraph::testkit {

inline std::vector<std::uint8_t> random_bytes(Rng& rng, std::size_t max_len) {
  std::vector<std::uint8_t> out(1 + rng.below(max_len));
  for (auto& b : out) b = static_cast<std::uint8_t>(rng.below(256));
  return out;
}

/// Random bytes biased toward control flow: JUMPDEST, PUSH1/PUSH2, JUMP,
/// JUMPI and terminators appear far more often than in uniform bytes.
inline std::vector<std::uint8_t> random_flowy_bytes(Rng& rng, std::size_t max_len) {
  static constexpr std::uint8_t hot[] = {0x5b, 0x60, 0x61, 0x56, 0x57, 0x00, 0xf3, 0xfd, 0xfe, 0x5f, 0x01, 0x80};
  std::vector<std::uint8_t> out(1 + rng.below(max_len));
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (rng.bernoulli(0.5)) {
      out[i] = hot[rng.below(std::size(hot))];
      if (out[i] == 0x60 && i + 1 < out.size()) out[++i] = static_cast<std::uint8_t>(rng.below(out.size()));
    } else {
      out[i] = static_cast<std::uint8_t>(rng.below(256));
    }
  }
  return out;
}

/// 50 small hand-written programs covering the CFG corner cases: straight
/// line code, resolved and unresolved jumps, jumps onto non-JUMPDEST bytes,
/// PUSH0 targets, loops, truncated pushes, back-to-back JUMPDESTs, INVALID
/// and undefined opcodes, SELFDESTRUCT, and assembled function dispatchers.
inline std::vector<std::vector<std::uint8_t>> hand_written_programs() {
  std::vector<std::vector<std::uint8_t>> p = {
      {0x00},                                                  // STOP
      {0x60, 0x01, 0x60, 0x02, 0x01, 0x00},                    // PUSH1 1 PUSH1 2 ADD STOP
      {0x60, 0x03, 0x56, 0x5b, 0x00},                          // jump to 3
      {0x60, 0x04, 0x56, 0x00, 0x5b, 0x00},                    // jump over STOP
      {0x60, 0x02, 0x56},                                      // jump onto itself (not JUMPDEST)
      {0x60, 0x01, 0x60, 0x06, 0x57, 0x00, 0x5b, 0x00},        // JUMPI taken/fallthrough
      {0x60, 0x01, 0x60, 0x05, 0x57, 0x00, 0x00},              // JUMPI to non-JUMPDEST
      {0x5b, 0x60, 0x00, 0x56},                                // loop to pc 0
      {0x5f, 0x56, 0x00},                                      // PUSH0 JUMP -> pc 0 (not JUMPDEST)
      {0x5b, 0x5f, 0x56},                                      // PUSH0 JUMP -> JUMPDEST at 0
      {0x35, 0x56, 0x5b, 0x00},                                // dynamic jump
      {0x60, 0x01, 0x35, 0x57, 0x00},                          // dynamic JUMPI
      {0x5b, 0x5b, 0x5b, 0x00},                                // consecutive JUMPDESTs
      {0x61, 0x00},                                            // truncated PUSH2
      {0x7f},                                                  // PUSH32 with no immediate
      {0x60, 0x01, 0xfe, 0x5b, 0x00},                          // INVALID then JUMPDEST
      {0x0c, 0x0d, 0x00},                                      // undefined opcodes
      {0x33, 0xff, 0x5b, 0x00},                                // SELFDESTRUCT terminator
      {0x60, 0x00, 0x60, 0x00, 0xfd},                          // REVERT
      {0x60, 0x00, 0x60, 0x00, 0xf3, 0x5b, 0x00},              // RETURN then dead JUMPDEST
      {0x61, 0x00, 0x05, 0x56, 0x00, 0x5b, 0x00},              // PUSH2 target
      {0x60, 0xff, 0x56},                                      // target beyond code
      {0x60, 0x04, 0x60, 0x01, 0x57, 0x5b, 0x00},              // JUMPI target is the fallthrough block
      {0x60, 0x00, 0x80, 0x50, 0x60, 0x08, 0x57, 0x00, 0x5b, 0x60, 0x00, 0x56},  // loop with exit
      {0x7f, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
       0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x23, 0x56,
       0x5b, 0x00},  // PUSH32 0x..23 JUMP -> JUMPDEST at 0x23
  };
  // Assembled programs: dispatchers and function bodies from the synthetic generator.
  for (std::uint64_t seed = 0; p.size() < 50; ++seed) {
    Rng rng(mix_seed(0x68616e64ULL, seed));
    p.push_back(synthetic::generate_contract(seed % 2 == 0, 10 + seed % 15, rng, seed % 5));
  }
  return p;
}

/// Violations of the partition and edge invariants (empty when valid).
inline std::vector<std::string> cfg_violations(std::span<const evm::Instruction> instructions, const cfg::Cfg& g) {
  std::vector<std::string> out;
  std::map<std::uint32_t, int> seen;
  for (const auto& [id, block] : g.blocks) {
    if (block.instructions.empty()) out.push_back("empty block " + std::to_string(id));
    else if (block.instructions.front().pc != id) out.push_back("block id differs from first pc at " + std::to_string(id));
    for (const auto& ins : block.instructions) ++seen[ins.pc];
  }
  for (const auto& ins : instructions) {
    const auto it = seen.find(ins.pc);
    if (it == seen.end() || it->second != 1) out.push_back("instruction at pc " + std::to_string(ins.pc) + " not in exactly one block");
  }
  if (seen.size() != instructions.size()) out.push_back("blocks contain instructions not in the listing");
  std::map<cfg::BlockId, std::size_t> out_degree;
  for (const auto& e : g.edges) {
    if (!g.blocks.count(e.from) || !g.blocks.count(e.to)) {
      out.push_back("dangling edge");
      continue;
    }
    ++out_degree[e.from];
    if ((e.kind == cfg::EdgeKind::JumpTaken || e.kind == cfg::EdgeKind::BranchTaken) &&
        !g.blocks.at(e.to).starts_with_jumpdest()) {
      out.push_back("taken edge into non-JUMPDEST block " + std::to_string(e.to));
    }
  }
  for (const auto& [id, block] : g.blocks) {
    if (block.terminator == cfg::Terminator::JumpI && out_degree[id] > 2) {
      out.push_back("JUMPI block " + std::to_string(id) + " has more than two successors");
    }
  }
  return out;
}

/// Random undirected edge list over n nodes (possibly with duplicates,
/// reversed duplicates and self pairs).
inline std::vector<std::pair<std::size_t, std::size_t>> random_edges(Rng& rng, std::size_t n, double density = 0.4) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (rng.bernoulli(density / 2)) edges.emplace_back(i, j);
    }
  }
  return edges;
}

template <typename T>
gcn::Matrix<T> random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  gcn::Matrix<T> m(r, c);
  for (auto& v : m.data) v = static_cast<T>(scale * rng.normal());
  return m;
}

/// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-6) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2 * h);
}

// ---------------------------------------------------------------------------
// Structure-signal / noise-semantics fixture for the weight search
// ---------------------------------------------------------------------------

struct ModalitySample {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::size_t n = 0;
  embed::NodeVectors structural;
  embed::NodeVectors semantic;
  int label = 0;
};

struct ModalitySet {
  std::vector<ModalitySample> train;
  std::vector<ModalitySample> val;
  std::size_t dim = 0;
};

/// Structural node vectors carry the label (a class-dependent mean offset
/// buried in noise); semantic vectors are pure Gaussian noise.
inline ModalitySet structure_signal_set(std::uint64_t seed, std::size_t n_train = 128, std::size_t n_val = 128,
                                        std::size_t dim = 8, double signal = 0.6) {
  Rng rng(mix_seed(seed, 0x66697874ULL));
  ModalitySet set;
  set.dim = dim;
  auto make = [&](int label) {
    ModalitySample s;
    s.label = label;
    s.n = 4 + rng.below(6);
    s.edges = random_edges(rng, s.n, 0.5);
    for (std::size_t i = 0; i < s.n; ++i) {
      embed::Vector vs(dim);
      embed::Vector vc(dim);
      for (std::size_t k = 0; k < dim; ++k) {
        vs[k] = rng.normal();
        vc[k] = rng.normal();
      }
      vs[0] += label ? signal : -signal;
      s.structural.emplace(static_cast<cfg::BlockId>(i), std::move(vs));
      s.semantic.emplace(static_cast<cfg::BlockId>(i), std::move(vc));
    }
    return s;
  };
  for (std::size_t i = 0; i < n_train; ++i) set.train.push_back(make(static_cast<int>(i % 2)));
  for (std::size_t i = 0; i < n_val; ++i) set.val.push_back(make(static_cast<int>(i % 2)));
  return set;
}

inline std::vector<gcn::GraphSample<double>> fuse_set(const std::vector<ModalitySample>& samples, fusion::FusionWeights w) {
  std::vector<gcn::GraphSample<double>> out;
  for (const auto& s : samples) {
    gcn::GraphSample<double> g;
    g.label = s.label;
    g.adjacency = gcn::normalize_adjacency<double>(s.edges, s.n);
    const auto fused = fusion::fuse_nodes(s.structural, s.semantic, fusion::Strategy::Adaptive, w);
    g.features = gcn::Matrix<double>(s.n, fused.vectors.begin()->second.size());
    std::size_t r = 0;
    for (const auto& [_, v] : fused.vectors) std::copy(v.begin(), v.end(), g.features.row(r++).begin());
    out.push_back(std::move(g));
  }
  return out;
}

struct RecoveryConfig {
  gcn::Architecture arch{8, {16}, 0.0, gcn::Readout::Mean};
  gcn::TrainConfig train = [] {
    gcn::TrainConfig t;
    t.epochs = 40;
    t.batch_size = 16;
    t.learning_rate = 1e-2;
    t.early_stop_patience = 40;
    t.lr_patience = 40;
    return t;
  }();
};

/// Runs the real weight search with a GCN trainer that reports validation loss.
inline fusion::WeightSearchResult recover_alpha(std::uint64_t seed, double step = 0.05,
                                                const RecoveryConfig& rc = RecoveryConfig{}) {
  const auto set = structure_signal_set(seed);
  auto evaluate = [&](fusion::FusionWeights w) {
    const auto train = fuse_set(set.train, w);
    const auto val = fuse_set(set.val, w);
    auto arch = rc.arch;
    arch.input_dim = set.dim;
    auto model = gcn::Model<double>::init(arch, mix_seed(seed, 11));
    auto tc = rc.train;
    tc.seed = mix_seed(seed, 12);
    const auto history = gcn::train<double>(model, train, val, tc);
    return fusion::FusionQualityScore{gcn::mean_loss<double>(model, val, tc.focal_gamma, history.class_weights)};
  };
  const auto grid = fusion::alpha_grid(step);
  return fusion::search_weights(grid, evaluate);
}

}  // namespace atomgraph::testkit
