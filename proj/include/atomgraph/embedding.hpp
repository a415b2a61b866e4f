#pragma once

// Skip-gram with negative sampling, shared by the opcode (Word2Vec-style) and
// CFG-walk (Node2Vec-style) embeddings.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "atomgraph/cfg.hpp"
#include "atomgraph/error.hpp"
#include "atomgraph/rng.hpp"

namespace atomgraph::embed {

using Vector = std::vector<double>;
using NodeVectors = std::map<cfg::BlockId, Vector>;

struct SkipGramConfig {
  std::size_t dim = 64;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 1;

  void validate() const {
    if (dim == 0 || window == 0 || negatives == 0 || epochs == 0 || !(learning_rate > 0.0)) {
      throw Error(Errc::InvalidConfig, "skip-gram parameters must be positive");
    }
  }
};

struct WalkConfig {
  std::size_t walk_length = 20;
  std::size_t walks_per_node = 10;
  double return_param = 1.0;  // p
  double inout_param = 1.0;   // q
  SkipGramConfig skipgram{};

  void validate() const {
    skipgram.validate();
    if (walk_length == 0 || walks_per_node == 0 || !(return_param > 0.0) || !(inout_param > 0.0)) {
      throw Error(Errc::InvalidConfig, "walk parameters must be positive");
    }
    if (skipgram.window > walk_length) throw Error(Errc::InvalidConfig, "window exceeds walk length");
  }
};

enum class Pooling { Mean, Sum };

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t dim, std::vector<std::string> keys)
      : dim_(dim), keys_(std::move(keys)), input_(keys_.size() * dim, 0.0), output_(keys_.size() * dim, 0.0) {
    index_.reserve(keys_.size());
    for (std::size_t i = 0; i < keys_.size(); ++i) index_.emplace(keys_[i], i);
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return keys_.size(); }
  const std::vector<std::string>& keys() const { return keys_; }

  std::optional<std::size_t> find(std::string_view key) const {
    const auto it = index_.find(std::string(key));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(std::string_view key) const { return find(key).has_value(); }

  std::span<double> input(std::size_t i) { return {input_.data() + i * dim_, dim_}; }
  std::span<const double> input(std::size_t i) const { return {input_.data() + i * dim_, dim_}; }
  std::span<double> output(std::size_t i) { return {output_.data() + i * dim_, dim_}; }
  std::span<const double> output(std::size_t i) const { return {output_.data() + i * dim_, dim_}; }

  std::span<const double> input(std::string_view key) const {
    const auto i = find(key);
    if (!i) throw Error(Errc::DimensionMismatch, "unknown embedding key " + std::string(key));
    return input(*i);
  }

  bool all_finite() const {
    return std::all_of(input_.begin(), input_.end(), [](double v) { return std::isfinite(v); }) &&
           std::all_of(output_.begin(), output_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    return a.dim_ == b.dim_ && a.keys_ == b.keys_ && a.input_ == b.input_ && a.output_ == b.output_;
  }

  /// `<count> <dim>` header then `<key> <dim floats>` per line (input vectors only).
  void write(std::ostream& os) const {
    os << keys_.size() << ' ' << dim_ << '\n';
    char buf[32];
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      os << keys_[i];
      for (double v : input(i)) {
        const auto res = std::to_chars(buf, buf + sizeof(buf), v);
        os << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
      }
      os << '\n';
    }
  }

  static EmbeddingTable read(std::istream& is) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(is, line)) throw Error(Errc::MalformedRecord, "missing table header", line_no);
    std::istringstream header(line);
    std::size_t count = 0;
    std::size_t dim = 0;
    if (!(header >> count >> dim) || dim == 0) throw Error(Errc::MalformedRecord, "bad table header", line_no);
    std::vector<std::string> keys;
    std::vector<double> values;
    keys.reserve(count);
    values.reserve(count * dim);
    while (keys.size() < count && std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::istringstream row(line);
      std::string key;
      row >> key;
      for (std::size_t j = 0; j < dim; ++j) {
        std::string token;
        double v = 0.0;
        if (!(row >> token) || std::from_chars(token.data(), token.data() + token.size(), v).ec != std::errc{}) {
          throw Error(Errc::MalformedRecord, "bad vector entry on line " + std::to_string(line_no), line_no);
        }
        values.push_back(v);
      }
      std::string extra;
      if (row >> extra) throw Error(Errc::MalformedRecord, "too many values on line " + std::to_string(line_no), line_no);
      keys.push_back(std::move(key));
    }
    if (keys.size() != count) throw Error(Errc::MalformedRecord, "table shorter than header count", line_no);
    EmbeddingTable table(dim, std::move(keys));
    if (table.index_.size() != count) throw Error(Errc::DuplicateId, "duplicate key in table");
    std::copy(values.begin(), values.end(), table.input_.begin());
    return table;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> input_;
  std::vector<double> output_;
};

// ---------------------------------------------------------------------------
// Pair objective
// ---------------------------------------------------------------------------

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

/// Negative-sampling loss for one (center, context) pair:
///   -log σ(u_ctx·v) - Σ log σ(-u_neg·v)
inline double pair_loss(std::span<const double> center, std::span<const double> context,
                        std::span<const std::span<const double>> negatives) {
  double loss = detail::softplus(-detail::dot(context, center));
  for (const auto& neg : negatives) loss += detail::softplus(detail::dot(neg, center));
  return loss;
}

struct PairGradient {
  Vector center;
  Vector context;
  std::vector<Vector> negatives;
};

inline PairGradient pair_loss_gradient(std::span<const double> center, std::span<const double> context,
                                       std::span<const std::span<const double>> negatives) {
  const std::size_t d = center.size();
  PairGradient g{Vector(d, 0.0), Vector(d, 0.0), {}};
  const double pos = detail::sigmoid(detail::dot(context, center)) - 1.0;
  for (std::size_t i = 0; i < d; ++i) {
    g.center[i] += pos * context[i];
    g.context[i] = pos * center[i];
  }
  for (const auto& neg : negatives) {
    const double c = detail::sigmoid(detail::dot(neg, center));
    Vector gn(d);
    for (std::size_t i = 0; i < d; ++i) {
      g.center[i] += c * neg[i];
      gn[i] = c * center[i];
    }
    g.negatives.push_back(std::move(gn));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Mean pair loss on a fixed probe batch, recorded after every epoch.
struct SkipGramTrace {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;
};

namespace detail {

class UnigramSampler {
 public:
  explicit UnigramSampler(std::span<const std::size_t> counts) {
    cumulative_.reserve(counts.size());
    double total = 0.0;
    for (auto c : counts) {
      total += std::pow(static_cast<double>(c), 0.75);
      cumulative_.push_back(total);
    }
  }
  std::size_t operator()(Rng& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
  }

 private:
  std::vector<double> cumulative_;
};

struct ProbePair {
  std::size_t center;
  std::size_t context;
  std::vector<std::size_t> negatives;
};

inline double probe_loss(const EmbeddingTable& t, std::span<const ProbePair> probes) {
  if (probes.empty()) return 0.0;
  double total = 0.0;
  std::vector<std::span<const double>> negs;
  for (const auto& p : probes) {
    negs.clear();
    for (auto n : p.negatives) negs.push_back(t.output(n));
    total += pair_loss(t.input(p.center), t.output(p.context), negs);
  }
  return total / static_cast<double>(probes.size());
}

}  // namespace detail

/// Trains input/output vectors over integer sentences; `vocab[i]` names token i.
inline EmbeddingTable train_skipgram(const std::vector<std::vector<std::size_t>>& sentences,
                                     std::vector<std::string> vocab, const SkipGramConfig& config,
                                     SkipGramTrace* trace = nullptr) {
  config.validate();
  if (vocab.size() < 2) throw Error(Errc::VocabularyTooSmall, "skip-gram needs at least two distinct keys");
  std::vector<std::size_t> counts(vocab.size(), 0);
  std::size_t total_tokens = 0;
  for (const auto& s : sentences) {
    for (auto w : s) {
      if (w >= vocab.size()) throw Error(Errc::DimensionMismatch, "token index outside vocabulary");
      ++counts[w];
    }
    total_tokens += s.size();
  }
  if (total_tokens == 0) throw Error(Errc::EmptyCorpus, "no tokens to train on");
  // Never-seen keys still get a small sampling mass so every row is reachable.
  for (auto& c : counts) c = std::max<std::size_t>(c, 1);

  const std::size_t d = config.dim;
  EmbeddingTable table(d, std::move(vocab));
  Rng rng(config.seed);
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (auto& v : table.input(i)) v = (rng.uniform() - 0.5) / static_cast<double>(d);
  }
  const detail::UnigramSampler sampler(counts);

  std::vector<detail::ProbePair> probes;
  if (trace) {
    Rng probe_rng(mix_seed(config.seed, 0x70726f6265ULL));
    for (std::size_t attempt = 0; attempt < 4096 && probes.size() < 256; ++attempt) {
      const auto& s = sentences[probe_rng.below(sentences.size())];
      if (s.size() < 2) continue;
      const std::size_t i = probe_rng.below(s.size());
      std::size_t j = probe_rng.below(s.size() - 1);
      if (j >= i) ++j;
      if (j > i + config.window || i > j + config.window) continue;
      detail::ProbePair p{s[i], s[j], {}};
      for (std::size_t k = 0; k < config.negatives; ++k) p.negatives.push_back(sampler(probe_rng));
      probes.push_back(std::move(p));
    }
    trace->initial_loss = detail::probe_loss(table, probes);
    trace->epoch_loss.clear();
  }

  const double total_steps = static_cast<double>(config.epochs * total_tokens);
  double processed = 0.0;
  Vector grad_center(d);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& s : sentences) {
      for (std::size_t i = 0; i < s.size(); ++i, processed += 1.0) {
        const double lr = config.learning_rate * std::max(1e-4, 1.0 - processed / total_steps);
        const std::size_t reduced = 1 + rng.below(config.window);
        const std::size_t lo = i >= reduced ? i - reduced : 0;
        const std::size_t hi = std::min(s.size() - 1, i + reduced);
        auto center = table.input(s[i]);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          std::fill(grad_center.begin(), grad_center.end(), 0.0);
          auto step = [&](std::size_t target, bool positive) {
            auto u = table.output(target);
            const double coeff = detail::sigmoid(detail::dot(u, center)) - (positive ? 1.0 : 0.0);
            for (std::size_t k = 0; k < d; ++k) {
              grad_center[k] += coeff * u[k];
              u[k] -= lr * coeff * center[k];
            }
          };
          step(s[j], true);
          for (std::size_t n = 0; n < config.negatives; ++n) {
            const std::size_t neg = sampler(rng);
            if (neg == s[j]) continue;
            step(neg, false);
          }
          for (std::size_t k = 0; k < d; ++k) center[k] -= lr * grad_center[k];
        }
      }
    }
    if (trace) trace->epoch_loss.push_back(detail::probe_loss(table, probes));
  }
  return table;
}

/// String-keyed convenience wrapper; vocabulary order is first appearance.
inline EmbeddingTable train_skipgram(const std::vector<std::vector<std::string>>& sentences,
                                     const SkipGramConfig& config, SkipGramTrace* trace = nullptr) {
  std::vector<std::string> vocab;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<std::size_t>> encoded;
  encoded.reserve(sentences.size());
  for (const auto& s : sentences) {
    auto& row = encoded.emplace_back();
    row.reserve(s.size());
    for (const auto& tok : s) {
      auto [it, inserted] = index.emplace(tok, vocab.size());
      if (inserted) vocab.push_back(tok);
      row.push_back(it->second);
    }
  }
  return train_skipgram(encoded, std::move(vocab), config, trace);
}

// ---------------------------------------------------------------------------
// Opcode corpus (semantic modality)
// ---------------------------------------------------------------------------

struct TokenCorpus {
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> vocab;
  std::map<std::string, std::size_t> frequencies;
};

inline std::vector<std::string> block_tokens(const cfg::BasicBlock& block) {
  std::vector<std::string> out;
  out.reserve(block.instructions.size());
  for (const auto& ins : block.instructions) out.emplace_back(ins.mnemonic);
  return out;
}

/// One sentence per basic block; PUSH immediates are dropped from tokens.
inline TokenCorpus build_token_corpus(std::span<const cfg::Cfg> cfgs) {
  TokenCorpus corpus;
  for (const auto& g : cfgs) {
    for (const auto& [_, block] : g.blocks) {
      auto sentence = block_tokens(block);
      for (const auto& tok : sentence) {
        if (corpus.frequencies[tok]++ == 0) corpus.vocab.push_back(tok);
      }
      corpus.sentences.push_back(std::move(sentence));
    }
  }
  if (corpus.sentences.empty()) throw Error(Errc::EmptyCorpus, "no basic blocks in corpus");
  return corpus;
}

inline EmbeddingTable train_token_embeddings(const TokenCorpus& corpus, const SkipGramConfig& config,
                                             SkipGramTrace* trace = nullptr) {
  return train_skipgram(corpus.sentences, config, trace);
}

/// Per-block pooled token vectors. Unknown tokens contribute nothing and are
/// reported through `warnings`.
inline NodeVectors semantic_node_vectors(const cfg::Cfg& g, const EmbeddingTable& tokens,
                                         Pooling pooling = Pooling::Mean,
                                         std::vector<std::string>* warnings = nullptr) {
  NodeVectors out;
  for (const auto& [id, block] : g.blocks) {
    Vector v(tokens.dim(), 0.0);
    std::size_t known = 0;
    for (const auto& ins : block.instructions) {
      const auto idx = tokens.find(ins.mnemonic);
      if (!idx) {
        if (warnings) warnings->push_back("unknown token " + std::string(ins.mnemonic) + " in block " + std::to_string(id));
        continue;
      }
      const auto src = tokens.input(*idx);
      for (std::size_t k = 0; k < v.size(); ++k) v[k] += src[k];
      ++known;
    }
    if (pooling == Pooling::Mean && known > 0) {
      // Divide by the full token count so unknown tokens act as zero vectors.
      const double n = static_cast<double>(block.instructions.size());
      for (auto& x : v) x /= n;
    }
    out.emplace(id, std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Biased random walks (structural modality)
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::size_t> node2vec_walk(const std::vector<std::vector<std::size_t>>& nbrs, std::size_t start,
                                              const WalkConfig& config, Rng& rng) {
  std::vector<std::size_t> walk{start};
  walk.reserve(config.walk_length);
  std::vector<double> weights;
  while (walk.size() < config.walk_length) {
    const std::size_t cur = walk.back();
    const auto& cand = nbrs[cur];
    if (cand.empty()) break;
    if (walk.size() == 1) {
      walk.push_back(cand[rng.below(cand.size())]);
      continue;
    }
    const std::size_t prev = walk[walk.size() - 2];
    const auto& prev_nbrs = nbrs[prev];
    weights.resize(cand.size());
    double total = 0.0;
    for (std::size_t k = 0; k < cand.size(); ++k) {
      const std::size_t x = cand[k];
      double w = 1.0 / config.inout_param;
      if (x == prev) {
        w = 1.0 / config.return_param;
      } else if (std::binary_search(prev_nbrs.begin(), prev_nbrs.end(), x)) {
        w = 1.0;
      }
      weights[k] = w;
      total += w;
    }
    double u = rng.uniform() * total;
    std::size_t pick = cand.size() - 1;
    for (std::size_t k = 0; k < cand.size(); ++k) {
      if (u < weights[k]) {
        pick = k;
        break;
      }
      u -= weights[k];
    }
    walk.push_back(cand[pick]);
  }
  return walk;
}

}  // namespace detail

/// Walks over dense block indices (pc order). Walk r of start node s uses its
/// own seed, so output does not depend on `threads`.
inline std::vector<std::vector<std::size_t>> generate_walks(const cfg::Cfg& g, const WalkConfig& config,
                                                            unsigned threads = 1) {
  config.validate();
  const auto nbrs = cfg::undirected_neighbors(g);
  const std::size_t n = nbrs.size();
  std::vector<std::vector<std::size_t>> walks(n * config.walks_per_node);
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t w = begin; w < end; ++w) {
      Rng rng(mix_seed(config.skipgram.seed, w));
      walks[w] = detail::node2vec_walk(nbrs, w % n, config, rng);
    }
  };
  threads = std::max(1U, threads);
  if (threads == 1 || walks.size() < 64) {
    run(0, walks.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (walks.size() + threads - 1) / threads;
    for (std::size_t b = 0; b < walks.size(); b += chunk) pool.emplace_back(run, b, std::min(walks.size(), b + chunk));
  }
  return walks;
}

inline std::string node_key(std::string_view contract, cfg::BlockId pc) {
  return std::string(contract) + ":" + std::to_string(pc);
}

/// Node2Vec-style vectors for one contract graph, keyed by block id. Graphs
/// with fewer than two blocks get zero vectors.
inline NodeVectors structural_node_vectors(const cfg::Cfg& g, const WalkConfig& config,
                                           std::vector<std::string>* warnings = nullptr) {
  NodeVectors out;
  const std::size_t d = config.skipgram.dim;
  if (g.size() < 2) {
    if (warnings) warnings->push_back("graph with fewer than two blocks: zero structural vectors");
    for (const auto& [id, _] : g.blocks) out.emplace(id, Vector(d, 0.0));
    return out;
  }
  std::vector<std::string> vocab;
  for (const auto& [id, _] : g.blocks) vocab.push_back(std::to_string(id));
  const auto walks = generate_walks(g, config);
  const auto table = train_skipgram(walks, vocab, config.skipgram);
  std::size_t i = 0;
  for (const auto& [id, _] : g.blocks) {
    const auto v = table.input(i++);
    out.emplace(id, Vector(v.begin(), v.end()));
  }
  return out;
}

/// Collects per-contract node vectors into one table keyed `<contract>:<pc>`.
inline EmbeddingTable to_table(std::span<const std::pair<std::string, NodeVectors>> contracts, std::size_t dim) {
  std::vector<std::string> keys;
  for (const auto& [name, vectors] : contracts) {
    for (const auto& [pc, _] : vectors) keys.push_back(node_key(name, pc));
  }
  EmbeddingTable table(dim, std::move(keys));
  std::size_t i = 0;
  for (const auto& [name, vectors] : contracts) {
    for (const auto& [pc, v] : vectors) {
      if (v.size() != dim) throw Error(Errc::DimensionMismatch, "vector width differs from table dim");
      std::copy(v.begin(), v.end(), table.input(i++).begin());
    }
  }
  return table;
}

/// Node vectors of one contract out of a namespaced table.
inline NodeVectors lookup_nodes(const EmbeddingTable& table, std::string_view contract, const cfg::Cfg& g) {
  NodeVectors out;
  for (const auto& [id, _] : g.blocks) {
    const auto v = table.input(node_key(contract, id));
    out.emplace(id, Vector(v.begin(), v.end()));
  }
  return out;
}

}  // namespace atomgraph::embed
