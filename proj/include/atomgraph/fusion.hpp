#pragma once

// Normalization and fusion of structural/semantic node vectors, the ablation
// variants, opcode-similarity graph augmentation and the fusion-weight search.

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "atomgraph/cfg.hpp"
#include "atomgraph/embedding.hpp"
#include "atomgraph/error.hpp"

namespace atomgraph::fusion {

using embed::NodeVectors;
using embed::Vector;

enum class Strategy { Adaptive, Average, Concat, SemanticOnly, StructuralOnly, GraphAug };

inline constexpr Strategy kAllStrategies[] = {Strategy::SemanticOnly, Strategy::StructuralOnly, Strategy::GraphAug,
                                              Strategy::Concat,       Strategy::Average,        Strategy::Adaptive};

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Adaptive: return "adaptive";
    case Strategy::Average: return "average";
    case Strategy::Concat: return "concat";
    case Strategy::SemanticOnly: return "semantic";
    case Strategy::StructuralOnly: return "structural";
    case Strategy::GraphAug: return "graphaug";
  }
  return "adaptive";
}

inline Strategy parse_strategy(std::string_view text) {
  for (auto s : kAllStrategies) {
    if (to_string(s) == text) return s;
  }
  throw Error(Errc::InvalidConfig, "unknown fusion strategy '" + std::string(text) + "'");
}

/// alpha weighs the structural vector; beta = 1 - alpha is derived, never stored.
class FusionWeights {
 public:
  FusionWeights() = default;
  explicit FusionWeights(double alpha) : alpha_(alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(Errc::InvalidConfig, "alpha must lie in [0, 1]");
  }
  double alpha() const { return alpha_; }
  double beta() const { return 1.0 - alpha_; }
  friend bool operator==(const FusionWeights&, const FusionWeights&) = default;

 private:
  double alpha_ = 0.5;
};

inline constexpr double kNormEpsilon = 1e-12;

inline Vector l2_normalize(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(Errc::NonFiniteInput, "cannot normalize a non-finite vector");
    sq += x * x;
  }
  const double norm = std::sqrt(sq);
  Vector out(v.begin(), v.end());
  if (norm > kNormEpsilon) {
    for (auto& x : out) x /= norm;
  }
  return out;
}

inline Vector fuse_weighted(std::span<const double> structural, std::span<const double> semantic, FusionWeights w) {
  if (structural.size() != semantic.size()) throw Error(Errc::LengthMismatch, "modality vectors differ in length");
  Vector out(structural.size());
  const double a = w.alpha();
  const double b = w.beta();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * structural[i] + b * semantic[i];
  return out;
}

/// Per-vector combination for every strategy except GraphAug (which changes
/// the graph, not the combination, and uses the structural vector here).
inline Vector fuse_variant(std::span<const double> structural, std::span<const double> semantic, Strategy strategy,
                           FusionWeights adaptive_weights = FusionWeights{}) {
  switch (strategy) {
    case Strategy::Concat: {
      Vector out(structural.begin(), structural.end());
      out.insert(out.end(), semantic.begin(), semantic.end());
      return out;
    }
    case Strategy::Average:
      return fuse_weighted(structural, semantic, FusionWeights{0.5});
    case Strategy::Adaptive:
      return fuse_weighted(structural, semantic, adaptive_weights);
    case Strategy::SemanticOnly:
      if (structural.size() != semantic.size()) throw Error(Errc::LengthMismatch, "modality vectors differ in length");
      return Vector(semantic.begin(), semantic.end());
    case Strategy::StructuralOnly:
    case Strategy::GraphAug:
      if (structural.size() != semantic.size()) throw Error(Errc::LengthMismatch, "modality vectors differ in length");
      return Vector(structural.begin(), structural.end());
  }
  return {};
}

inline std::size_t fused_dim(std::size_t dim, Strategy strategy) { return strategy == Strategy::Concat ? 2 * dim : dim; }

/// Fused per-node features for one graph. Both modalities are L2-normalized
/// per node before combination.
struct FusedNodeFeatures {
  NodeVectors vectors;
  Strategy strategy = Strategy::Adaptive;
  std::optional<FusionWeights> weights;
};

inline FusedNodeFeatures fuse_nodes(const NodeVectors& structural, const NodeVectors& semantic, Strategy strategy,
                                    FusionWeights adaptive_weights = FusionWeights{}) {
  FusedNodeFeatures out;
  out.strategy = strategy;
  if (strategy == Strategy::Adaptive) out.weights = adaptive_weights;
  if (strategy == Strategy::Average) out.weights = FusionWeights{0.5};
  for (const auto& [id, vs] : structural) {
    const auto it = semantic.find(id);
    if (it == semantic.end()) throw Error(Errc::DimensionMismatch, "missing semantic vector for block " + std::to_string(id));
    out.vectors.emplace(id, fuse_variant(l2_normalize(vs), l2_normalize(it->second), strategy, adaptive_weights));
  }
  return out;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa <= 0.0 || bb <= 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

inline void validate_aug_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw Error(Errc::InvalidConfig, "augmentation threshold must lie in (0, 1]");
}

/// Adds a Virtual edge (lower pc -> higher pc) between every pair of distinct
/// blocks whose nonzero semantic vectors have cosine >= threshold.
inline cfg::Cfg augment_graph(const cfg::Cfg& g, const NodeVectors& semantic, double threshold) {
  validate_aug_threshold(threshold);
  cfg::Cfg out = g;
  const auto ids = g.ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& a = semantic.at(ids[i]);
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      const auto& b = semantic.at(ids[j]);
      if (cosine(a, b) >= threshold) out.edges.push_back({ids[i], ids[j], cfg::EdgeKind::Virtual});
    }
  }
  return out;
}

inline std::size_t virtual_edge_count(const cfg::Cfg& g) {
  return static_cast<std::size_t>(
      std::count_if(g.edges.begin(), g.edges.end(), [](const cfg::Edge& e) { return e.kind == cfg::EdgeKind::Virtual; }));
}

// ---------------------------------------------------------------------------
// Weight search
// ---------------------------------------------------------------------------

/// Validation loss of a downstream classifier trained on features fused with
/// the given weights. Lower is better.
struct FusionQualityScore {
  double score = 0.0;
};

using QualityEvaluator = std::function<FusionQualityScore(FusionWeights)>;

struct CandidateResult {
  FusionWeights weights;
  FusionQualityScore quality;
};

struct WeightSearchResult {
  FusionWeights weights;
  FusionQualityScore quality;
  std::vector<CandidateResult> candidates;
};

inline std::vector<double> alpha_grid(double step) {
  if (!(step > 0.0 && step <= 1.0)) throw Error(Errc::InvalidConfig, "grid step must lie in (0, 1]");
  std::vector<double> grid;
  const auto n = static_cast<std::size_t>(std::llround(1.0 / step));
  for (std::size_t i = 0; i <= n; ++i) grid.push_back(std::min(1.0, static_cast<double>(i) / static_cast<double>(n)));
  return grid;
}

/// True when candidate `a` should win over `b`: lower loss, then alpha nearer
/// 0.5, then smaller alpha.
inline bool better_candidate(const CandidateResult& a, const CandidateResult& b) {
  if (a.quality.score != b.quality.score) return a.quality.score < b.quality.score;
  const double da = std::abs(a.weights.alpha() - 0.5);
  const double db = std::abs(b.weights.alpha() - 0.5);
  if (da != db) return da < db;
  return a.weights.alpha() < b.weights.alpha();
}

/// Evaluates every grid point and returns the argmin. With `threads > 1`
/// candidates run concurrently; the evaluator must then be safe to call from
/// several threads and own its per-call state.
inline WeightSearchResult search_weights(std::span<const double> grid, const QualityEvaluator& evaluate,
                                         unsigned threads = 1) {
  if (grid.empty()) throw Error(Errc::InvalidConfig, "empty fusion weight grid");
  std::vector<FusionWeights> weights;
  for (double a : grid) weights.emplace_back(a);

  std::vector<CandidateResult> results(weights.size());
  auto run_one = [&](std::size_t i) {
    FusionQualityScore q;
    try {
      q = evaluate(weights[i]);
    } catch (const std::exception& e) {
      throw Error(Errc::CandidateFailed, "candidate alpha=" + std::to_string(weights[i].alpha()) + ": " + e.what());
    }
    if (!std::isfinite(q.score)) {
      throw Error(Errc::CandidateFailed, "candidate alpha=" + std::to_string(weights[i].alpha()) + " produced a non-finite loss");
    }
    results[i] = {weights[i], q};
  };

  if (threads <= 1) {
    for (std::size_t i = 0; i < weights.size(); ++i) run_one(i);
  } else {
    for (std::size_t begin = 0; begin < weights.size(); begin += threads) {
      std::vector<std::future<void>> batch;
      for (std::size_t i = begin; i < std::min(weights.size(), begin + threads); ++i) {
        batch.push_back(std::async(std::launch::async, run_one, i));
      }
      for (auto& f : batch) f.get();
    }
  }

  const auto best = std::min_element(results.begin(), results.end(),
                                     [](const CandidateResult& a, const CandidateResult& b) { return better_candidate(a, b); });
  return {best->weights, best->quality, results};
}

}  // namespace atomgraph::fusion
