#pragma once

// Graph-level GCN classifier: symmetric-normalized propagation with self
// loops, ReLU layers, pooled readout and a two-logit linear head, trained with
// class-weighted focal loss under AdamW.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "atomgraph/cfg.hpp"
#include "atomgraph/error.hpp"
#include "atomgraph/rng.hpp"

namespace atomgraph::gcn {

template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{0}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// out = a * b
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols != b.rows) throw Error(Errc::DimensionMismatch, "matmul shape mismatch");
  Matrix<T> out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    T* dst = out.data.data() + i * out.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const T aik = a(i, k);
      if (aik == T{0}) continue;
      const T* src = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

/// out = aᵀ * b
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows != b.rows) throw Error(Errc::DimensionMismatch, "matmul_tn shape mismatch");
  Matrix<T> out(a.cols, b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const T* brow = b.data.data() + r * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const T ari = a(r, i);
      if (ari == T{0}) continue;
      T* dst = out.data.data() + i * out.cols;
      for (std::size_t j = 0; j < b.cols; ++j) dst[j] += ari * brow[j];
    }
  }
  return out;
}

/// out = a * bᵀ
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols != b.cols) throw Error(Errc::DimensionMismatch, "matmul_nt shape mismatch");
  Matrix<T> out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const T* arow = a.data.data() + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const T* brow = b.data.data() + j * b.cols;
      T s{0};
      for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      out(i, j) = s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalized adjacency
// ---------------------------------------------------------------------------

/// D̃^{-1/2} (A + I) D̃^{-1/2} in row-sparse form.
template <typename T>
struct NormalizedAdjacency {
  std::size_t n = 0;
  std::vector<std::vector<std::pair<std::size_t, T>>> rows;

  T at(std::size_t i, std::size_t j) const {
    for (const auto& [c, v] : rows[i]) {
      if (c == j) return v;
    }
    return T{0};
  }

  Matrix<T> dense() const {
    Matrix<T> out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& [j, v] : rows[i]) out(i, j) = v;
    }
    return out;
  }

  /// Â * h
  Matrix<T> apply(const Matrix<T>& h) const {
    if (h.rows != n) throw Error(Errc::DimensionMismatch, "feature rows do not match node count");
    Matrix<T> out(n, h.cols);
    for (std::size_t i = 0; i < n; ++i) {
      T* dst = out.data.data() + i * h.cols;
      for (const auto& [j, v] : rows[i]) {
        const T* src = h.data.data() + j * h.cols;
        for (std::size_t k = 0; k < h.cols; ++k) dst[k] += v * src[k];
      }
    }
    return out;
  }
};

/// Edges are symmetrized; duplicates and self pairs collapse into the binary
/// adjacency before the identity is added.
template <typename T = double>
NormalizedAdjacency<T> normalize_adjacency(std::span<const std::pair<std::size_t, std::size_t>> edges, std::size_t n) {
  if (n == 0) throw Error(Errc::DimensionMismatch, "adjacency over zero nodes");
  std::vector<std::set<std::size_t>> nbrs(n);
  for (const auto& [a, b] : edges) {
    if (a >= n || b >= n) throw Error(Errc::DimensionMismatch, "edge endpoint out of range");
    if (a == b) continue;
    nbrs[a].insert(b);
    nbrs[b].insert(a);
  }
  std::vector<T> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) inv_sqrt_deg[i] = T{1} / std::sqrt(static_cast<T>(nbrs[i].size() + 1));
  NormalizedAdjacency<T> adj;
  adj.n = n;
  adj.rows.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    nbrs[i].insert(i);
    for (auto j : nbrs[i]) adj.rows[i].emplace_back(j, inv_sqrt_deg[i] * inv_sqrt_deg[j]);
  }
  return adj;
}

/// Dense-index edge list of a CFG (all kinds, including Virtual).
inline std::vector<std::pair<std::size_t, std::size_t>> edge_list(const cfg::Cfg& g) {
  const auto index = g.index();
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(g.edges.size());
  for (const auto& e : g.edges) out.emplace_back(index.at(e.from), index.at(e.to));
  return out;
}

template <typename T = double>
NormalizedAdjacency<T> normalize_adjacency(const cfg::Cfg& g) {
  const auto edges = edge_list(g);
  return normalize_adjacency<T>(edges, g.size());
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

enum class Readout { Mean, Sum, Max };

inline std::string_view to_string(Readout r) {
  switch (r) {
    case Readout::Mean: return "mean";
    case Readout::Sum: return "sum";
    case Readout::Max: return "max";
  }
  return "mean";
}

inline Readout parse_readout(std::string_view text) {
  for (auto r : {Readout::Mean, Readout::Sum, Readout::Max}) {
    if (to_string(r) == text) return r;
  }
  throw Error(Errc::InvalidConfig, "unknown readout '" + std::string(text) + "'");
}

struct Architecture {
  std::size_t input_dim = 64;
  std::vector<std::size_t> hidden{128, 64, 32};
  double dropout = 0.5;
  Readout readout = Readout::Mean;

  void validate() const {
    if (input_dim == 0 || hidden.empty() ||
        std::any_of(hidden.begin(), hidden.end(), [](std::size_t h) { return h == 0; })) {
      throw Error(Errc::InvalidConfig, "layer widths must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(Errc::InvalidConfig, "dropout must lie in [0, 1)");
  }
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Trainable tensors; gradients and optimizer moments reuse the same layout.
template <typename T>
struct Parameters {
  std::vector<Matrix<T>> conv;  // W^(l): d_l x d_{l+1}
  Matrix<T> head;               // pooled_dim x 2
  std::vector<T> bias;          // 2

  static Parameters zeros_like(const Parameters& p) {
    Parameters z;
    for (const auto& w : p.conv) z.conv.emplace_back(w.rows, w.cols);
    z.head = Matrix<T>(p.head.rows, p.head.cols);
    z.bias.assign(p.bias.size(), T{0});
    return z;
  }

  /// f(span, is_weight) over every tensor; biases are not weights.
  template <typename F>
  void for_each(F&& f) {
    for (auto& w : conv) f(std::span<T>(w.data), true);
    f(std::span<T>(head.data), true);
    f(std::span<T>(bias), false);
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& w : conv) f(std::span<const T>(w.data), true);
    f(std::span<const T>(head.data), true);
    f(std::span<const T>(bias), false);
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](auto s, bool) { n += s.size(); });
    return n;
  }

  /// Flat-index access across all tensors in for_each order.
  T& flat(std::size_t index) {
    for (auto& w : conv) {
      if (index < w.data.size()) return w.data[index];
      index -= w.data.size();
    }
    if (index < head.data.size()) return head.data[index];
    index -= head.data.size();
    return bias.at(index);
  }

  double global_norm() const {
    double sq = 0.0;
    for_each([&](auto s, bool) {
      for (T v : s) sq += static_cast<double>(v) * static_cast<double>(v);
    });
    return std::sqrt(sq);
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](auto s, bool) {
      for (T v : s) ok = ok && std::isfinite(v);
    });
    return ok;
  }

  void add_scaled(const Parameters& other, T scale) {
    for (std::size_t l = 0; l < conv.size(); ++l) {
      for (std::size_t i = 0; i < conv[l].data.size(); ++i) conv[l].data[i] += scale * other.conv[l].data[i];
    }
    for (std::size_t i = 0; i < head.data.size(); ++i) head.data[i] += scale * other.head.data[i];
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += scale * other.bias[i];
  }

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

template <typename T = double>
struct Model {
  Architecture arch;
  Parameters<T> params;

  std::size_t output_dim() const { return arch.hidden.back(); }

  /// Glorot-uniform weights, zero head bias.
  static Model init(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    Model m;
    m.arch = arch;
    Rng rng(mix_seed(seed, 0x67636eULL));
    auto glorot = [&](std::size_t in, std::size_t out) {
      Matrix<T> w(in, out);
      const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
      for (auto& v : w.data) v = static_cast<T>(rng.uniform(-limit, limit));
      return w;
    };
    std::size_t in = arch.input_dim;
    for (auto h : arch.hidden) {
      m.params.conv.push_back(glorot(in, h));
      in = h;
    }
    m.params.head = glorot(in, 2);
    m.params.bias.assign(2, T{0});
    return m;
  }
};

enum class Mode { Train, Eval };

template <typename T>
struct ForwardCache {
  std::vector<Matrix<T>> inputs;      // H^(l) as fed to layer l (after dropout)
  std::vector<Matrix<T>> propagated;  // Â H^(l)
  std::vector<Matrix<T>> pre;         // Â H^(l) W^(l)
  std::vector<Matrix<T>> masks;       // dropout scale applied to layer l's output; empty when none
  Matrix<T> last;                     // H^(L)
  std::vector<T> pooled;
  std::vector<std::size_t> argmax_rows;  // Max readout only
  std::array<T, 2> logits{};
};

/// Eq.-style propagation per layer, ReLU, readout, linear head. In Train mode
/// with dropout > 0, `rng` supplies the inverted-dropout masks between layers.
template <typename T>
ForwardCache<T> forward(const Model<T>& model, const NormalizedAdjacency<T>& adj, const Matrix<T>& features,
                        Mode mode = Mode::Eval, Rng* rng = nullptr) {
  if (features.rows != adj.n) throw Error(Errc::DimensionMismatch, "feature rows do not match node count");
  if (features.cols != model.arch.input_dim) {
    throw Error(Errc::DimensionMismatch, "feature width " + std::to_string(features.cols) + " != model input " +
                                             std::to_string(model.arch.input_dim));
  }
  const bool drop = mode == Mode::Train && model.arch.dropout > 0.0;
  if (drop && rng == nullptr) throw Error(Errc::InvalidConfig, "dropout needs an rng in train mode");
  const std::size_t layers = model.params.conv.size();
  ForwardCache<T> cache;
  Matrix<T> h = features;
  for (std::size_t l = 0; l < layers; ++l) {
    cache.inputs.push_back(h);
    cache.propagated.push_back(adj.apply(h));
    cache.pre.push_back(matmul(cache.propagated.back(), model.params.conv[l]));
    h = cache.pre.back();
    for (auto& v : h.data) v = std::max(v, T{0});
    if (drop && l + 1 < layers) {
      Matrix<T> mask(h.rows, h.cols);
      const T keep_scale = static_cast<T>(1.0 / (1.0 - model.arch.dropout));
      for (std::size_t i = 0; i < mask.data.size(); ++i) {
        mask.data[i] = rng->bernoulli(model.arch.dropout) ? T{0} : keep_scale;
        h.data[i] *= mask.data[i];
      }
      cache.masks.push_back(std::move(mask));
    } else {
      cache.masks.emplace_back();
    }
  }
  cache.last = h;

  const std::size_t n = h.rows;
  cache.pooled.assign(h.cols, T{0});
  switch (model.arch.readout) {
    case Readout::Mean:
    case Readout::Sum:
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < h.cols; ++k) cache.pooled[k] += h(i, k);
      }
      if (model.arch.readout == Readout::Mean) {
        for (auto& v : cache.pooled) v /= static_cast<T>(n);
      }
      break;
    case Readout::Max:
      cache.argmax_rows.assign(h.cols, 0);
      for (std::size_t k = 0; k < h.cols; ++k) {
        cache.pooled[k] = h(0, k);
        for (std::size_t i = 1; i < n; ++i) {
          if (h(i, k) > cache.pooled[k]) {
            cache.pooled[k] = h(i, k);
            cache.argmax_rows[k] = i;
          }
        }
      }
      break;
  }
  for (std::size_t c = 0; c < 2; ++c) {
    T s = model.params.bias[c];
    for (std::size_t k = 0; k < cache.pooled.size(); ++k) s += cache.pooled[k] * model.params.head(k, c);
    cache.logits[c] = s;
  }
  return cache;
}

/// Gradients of a scalar loss with respect to all parameters, given dL/dlogits.
template <typename T>
Parameters<T> backward(const Model<T>& model, const NormalizedAdjacency<T>& adj, const ForwardCache<T>& cache,
                       std::array<T, 2> dlogits) {
  Parameters<T> g = Parameters<T>::zeros_like(model.params);
  const std::size_t pooled_dim = cache.pooled.size();
  std::vector<T> dpooled(pooled_dim, T{0});
  for (std::size_t k = 0; k < pooled_dim; ++k) {
    for (std::size_t c = 0; c < 2; ++c) {
      g.head(k, c) = cache.pooled[k] * dlogits[c];
      dpooled[k] += model.params.head(k, c) * dlogits[c];
    }
  }
  g.bias[0] = dlogits[0];
  g.bias[1] = dlogits[1];

  const std::size_t n = cache.last.rows;
  Matrix<T> dh(n, pooled_dim);
  switch (model.arch.readout) {
    case Readout::Mean:
    case Readout::Sum: {
      const T scale = model.arch.readout == Readout::Mean ? T{1} / static_cast<T>(n) : T{1};
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < pooled_dim; ++k) dh(i, k) = dpooled[k] * scale;
      }
      break;
    }
    case Readout::Max:
      for (std::size_t k = 0; k < pooled_dim; ++k) dh(cache.argmax_rows[k], k) = dpooled[k];
      break;
  }

  for (std::size_t l = model.params.conv.size(); l-- > 0;) {
    // dh is the gradient wrt layer l's (post-dropout) output.
    Matrix<T> dz = std::move(dh);
    const auto& mask = cache.masks[l];
    for (std::size_t i = 0; i < dz.data.size(); ++i) {
      if (!mask.data.empty()) dz.data[i] *= mask.data[i];
      if (cache.pre[l].data[i] <= T{0}) dz.data[i] = T{0};
    }
    g.conv[l] = matmul_tn(cache.propagated[l], dz);
    if (l == 0) break;
    const Matrix<T> dprop = matmul_nt(dz, model.params.conv[l]);
    dh = adj.apply(dprop);  // Â is symmetric
  }
  return g;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

template <typename T>
struct LossResult {
  T loss{};
  std::array<T, 2> grad{};
};

template <typename T>
std::array<T, 2> softmax(std::array<T, 2> logits) {
  const T m = std::max(logits[0], logits[1]);
  const T e0 = std::exp(logits[0] - m);
  const T e1 = std::exp(logits[1] - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

/// -w_y (1 - p_y)^γ log p_y over a two-class softmax, with analytic gradient.
template <typename T>
LossResult<T> focal_loss(std::array<T, 2> logits, int label, double gamma, std::array<double, 2> class_weights = {1.0, 1.0}) {
  if (label != 0 && label != 1) throw Error(Errc::InvalidLabel, "label must be 0 or 1");
  const auto p = softmax(logits);
  const auto y = static_cast<std::size_t>(label);
  const T pt = p[y];
  const T w = static_cast<T>(class_weights[y]);
  const T g = static_cast<T>(gamma);
  const T log_pt = std::log(std::max(pt, static_cast<T>(1e-12)));
  const T one_minus = T{1} - pt;
  const T modulator = gamma == 0.0 ? T{1} : std::pow(one_minus, g);
  LossResult<T> out;
  out.loss = -w * modulator * log_pt;
  // dL/dp_t, then chain through dp_t/dz_k = p_t (δ_ky - p_k).
  T dl_dpt = -w * modulator / std::max(pt, static_cast<T>(1e-12));
  if (gamma != 0.0 && one_minus > T{0}) dl_dpt += w * g * std::pow(one_minus, g - T{1}) * log_pt;
  for (std::size_t k = 0; k < 2; ++k) {
    const T delta = k == y ? T{1} : T{0};
    out.grad[k] = dl_dpt * pt * (delta - p[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

template <typename T = double>
struct GraphSample {
  NormalizedAdjacency<T> adjacency;
  Matrix<T> features;
  int label = 0;
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double lr_decay = 0.5;
  std::size_t lr_patience = 10;
  double weight_decay = 1e-4;
  double focal_gamma = 2.0;
  std::optional<std::array<double, 2>> class_weights;  // default: inverse class frequency
  bool dynamic_class_weights = false;                   // re-estimate per epoch from the sampled set
  double clip_norm = 1.0;
  std::size_t early_stop_patience = 30;
  bool oversample = false;
  bool restore_best = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs == 0 || batch_size == 0 || !(learning_rate > 0.0) || !(lr_decay > 0.0 && lr_decay <= 1.0) ||
        lr_patience == 0 || weight_decay < 0.0 || focal_gamma < 0.0 || !(clip_norm > 0.0) ||
        early_stop_patience == 0) {
      throw Error(Errc::InvalidConfig, "invalid training configuration");
    }
    if (class_weights && !((*class_weights)[0] > 0.0 && (*class_weights)[1] > 0.0)) {
      throw Error(Errc::InvalidConfig, "class weights must be positive");
    }
  }
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> learning_rate;
  std::size_t best_epoch = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
  std::array<double, 2> class_weights{1.0, 1.0};
};

/// N / (2 N_c) per class; classes absent from the labels get weight 1.
inline std::array<double, 2> inverse_frequency_weights(std::span<const int> labels) {
  std::array<double, 2> counts{0.0, 0.0};
  for (int l : labels) counts[static_cast<std::size_t>(l)] += 1.0;
  const double total = counts[0] + counts[1];
  std::array<double, 2> w{1.0, 1.0};
  for (std::size_t c = 0; c < 2; ++c) {
    if (counts[c] > 0) w[c] = total / (2.0 * counts[c]);
  }
  return w;
}

/// Scales `grads` so its global L2 norm is at most max_norm; returns the pre-clip norm.
template <typename T>
double clip_global_norm(Parameters<T>& grads, double max_norm) {
  const double norm = grads.global_norm();
  if (norm > max_norm && norm > 0.0) {
    const T scale = static_cast<T>(max_norm / norm);
    grads.for_each([&](std::span<T> s, bool) {
      for (auto& v : s) v *= scale;
    });
  }
  return norm;
}

/// Adam moments with decoupled weight decay applied to weight tensors only.
template <typename T>
class AdamW {
 public:
  AdamW(const Parameters<T>& like, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(Parameters<T>::zeros_like(like)),
        v_(Parameters<T>::zeros_like(like)),
        weight_decay_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {}

  void step(Parameters<T>& params, const Parameters<T>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto update = [&](std::span<T> p, std::span<const T> g, std::span<T> m, std::span<T> v, bool decay) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (decay) p[i] -= static_cast<T>(lr * weight_decay_) * p[i];
        m[i] = static_cast<T>(beta1_) * m[i] + static_cast<T>(1.0 - beta1_) * g[i];
        v[i] = static_cast<T>(beta2_) * v[i] + static_cast<T>(1.0 - beta2_) * g[i] * g[i];
        const double mhat = static_cast<double>(m[i]) / c1;
        const double vhat = static_cast<double>(v[i]) / c2;
        p[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    };
    for (std::size_t l = 0; l < params.conv.size(); ++l) {
      update(params.conv[l].data, grads.conv[l].data, m_.conv[l].data, v_.conv[l].data, true);
    }
    update(params.head.data, grads.head.data, m_.head.data, v_.head.data, true);
    update(params.bias, grads.bias, m_.bias, v_.bias, false);
  }

 private:
  Parameters<T> m_;
  Parameters<T> v_;
  double weight_decay_;
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
};

/// Loss and gradient for one graph.
template <typename T>
std::pair<T, Parameters<T>> loss_and_gradient(const Model<T>& model, const GraphSample<T>& sample, double gamma,
                                              std::array<double, 2> class_weights, Mode mode = Mode::Eval,
                                              Rng* rng = nullptr) {
  const auto cache = forward(model, sample.adjacency, sample.features, mode, rng);
  const auto loss = focal_loss(cache.logits, sample.label, gamma, class_weights);
  return {loss.loss, backward(model, sample.adjacency, cache, loss.grad)};
}

/// Mean eval-mode focal loss over a set of graphs.
template <typename T>
double mean_loss(const Model<T>& model, std::span<const GraphSample<T>> samples, double gamma,
                 std::array<double, 2> class_weights) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) {
    const auto cache = forward(model, s.adjacency, s.features, Mode::Eval);
    total += static_cast<double>(focal_loss(cache.logits, s.label, gamma, class_weights).loss);
  }
  return total / static_cast<double>(samples.size());
}

/// Minibatch AdamW with global-norm clipping, plateau LR decay and early
/// stopping on validation loss (training loss when `val` is empty).
template <typename T>
TrainHistory train(Model<T>& model, std::span<const GraphSample<T>> train_set, std::span<const GraphSample<T>> val,
                   const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw Error(Errc::EmptyCorpus, "empty training split");
  TrainHistory history;
  std::vector<int> labels;
  for (const auto& s : train_set) labels.push_back(s.label);
  history.class_weights = config.class_weights.value_or(inverse_frequency_weights(labels));

  Rng rng(mix_seed(config.seed, 0x747261696eULL));
  AdamW<T> optimizer(model.params, config.weight_decay);
  double lr = config.learning_rate;
  Parameters<T> best = model.params;
  std::size_t plateau = 0;
  std::size_t since_best = 0;

  std::vector<std::size_t> minority;
  std::vector<std::size_t> majority_count(2, 0);
  for (int l : labels) ++majority_count[static_cast<std::size_t>(l)];
  const int minority_label = majority_count[1] < majority_count[0] ? 1 : 0;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    if (train_set[i].label == minority_label) minority.push_back(i);
  }

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    if (config.oversample && !minority.empty()) {
      const std::size_t deficit = static_cast<std::size_t>(std::abs(static_cast<long>(majority_count[0]) -
                                                                    static_cast<long>(majority_count[1])));
      for (std::size_t k = 0; k < deficit; ++k) order.push_back(minority[rng.below(minority.size())]);
    }
    rng.shuffle(std::span<std::size_t>(order));
    if (config.dynamic_class_weights && !config.class_weights) {
      std::vector<int> epoch_labels;
      for (auto i : order) epoch_labels.push_back(train_set[i].label);
      history.class_weights = inverse_frequency_weights(epoch_labels);
    }

    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const T inv_batch = T{1} / static_cast<T>(end - begin);
      Parameters<T> grads = Parameters<T>::zeros_like(model.params);
      for (std::size_t b = begin; b < end; ++b) {
        const auto& sample = train_set[order[b]];
        const auto cache = forward(model, sample.adjacency, sample.features, Mode::Train, &rng);
        auto loss = focal_loss(cache.logits, sample.label, config.focal_gamma, history.class_weights);
        if (!std::isfinite(loss.loss)) {
          throw Error(Errc::TrainingDiverged, "loss became non-finite at epoch " + std::to_string(epoch), epoch);
        }
        epoch_loss += static_cast<double>(loss.loss);
        loss.grad[0] *= inv_batch;
        loss.grad[1] *= inv_batch;
        grads.add_scaled(backward(model, sample.adjacency, cache, loss.grad), T{1});
      }
      clip_global_norm(grads, config.clip_norm);
      optimizer.step(model.params, grads, lr);
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!model.params.all_finite()) {
      throw Error(Errc::TrainingDiverged, "parameters became non-finite at epoch " + std::to_string(epoch), epoch);
    }
    history.train_loss.push_back(epoch_loss);
    history.learning_rate.push_back(lr);
    const double monitored =
        val.empty() ? epoch_loss : mean_loss(model, val, config.focal_gamma, history.class_weights);
    if (!val.empty()) history.val_loss.push_back(monitored);

    if (monitored < history.best_loss) {
      history.best_loss = monitored;
      history.best_epoch = epoch;
      best = model.params;
      plateau = 0;
      since_best = 0;
    } else {
      ++since_best;
      if (++plateau >= config.lr_patience) {
        lr *= config.lr_decay;
        plateau = 0;
      }
      if (since_best >= config.early_stop_patience) {
        history.early_stopped = true;
        break;
      }
    }
  }
  if (config.restore_best) model.params = best;
  return history;
}

struct Prediction {
  int label = 0;
  double probability = 0.5;  // probability of the predicted label
  std::array<double, 2> logits{};
};

inline Prediction prediction_from_logits(std::array<double, 2> logits) {
  const auto p = softmax(logits);
  Prediction out;
  out.logits = logits;
  out.label = p[1] > p[0] ? 1 : 0;
  out.probability = p[static_cast<std::size_t>(out.label)];
  return out;
}

template <typename T>
Prediction predict(const Model<T>& model, const NormalizedAdjacency<T>& adj, const Matrix<T>& features) {
  const auto cache = forward(model, adj, features, Mode::Eval);
  return prediction_from_logits({static_cast<double>(cache.logits[0]), static_cast<double>(cache.logits[1])});
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "ATOMGRAPH-GCN";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_values(std::ostream& os, std::span<const T> values) {
  char buf[48];
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto res = std::to_chars(buf, buf + sizeof(buf), values[i]);
    if (i) os << ' ';
    os << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
  }
  os << '\n';
}

template <typename T>
void read_values(std::istream& is, std::span<T> out, std::string_view what) {
  for (auto& v : out) {
    std::string token;
    if (!(is >> token) || std::from_chars(token.data(), token.data() + token.size(), v).ec != std::errc{}) {
      throw Error(Errc::Checkpoint, "bad value in " + std::string(what));
    }
  }
}

inline void expect_word(std::istream& is, std::string_view word) {
  std::string token;
  if (!(is >> token) || token != word) {
    throw Error(Errc::Checkpoint, "expected '" + std::string(word) + "', found '" + token + "'");
  }
}

}  // namespace detail

/// Text record: magic + version, architecture, then row-major matrices.
template <typename T>
void write_model(std::ostream& os, const Model<T>& model) {
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "input_dim " << model.arch.input_dim << '\n';
  os << "hidden " << model.arch.hidden.size();
  for (auto h : model.arch.hidden) os << ' ' << h;
  os << '\n';
  os << "dropout ";
  detail::write_values<double>(os, std::span<const double>(&model.arch.dropout, 1));
  os << "readout " << to_string(model.arch.readout) << '\n';
  for (std::size_t l = 0; l < model.params.conv.size(); ++l) {
    const auto& w = model.params.conv[l];
    os << "conv " << l << ' ' << w.rows << ' ' << w.cols << '\n';
    for (std::size_t r = 0; r < w.rows; ++r) detail::write_values(os, w.row(r));
  }
  os << "head " << model.params.head.rows << ' ' << model.params.head.cols << '\n';
  for (std::size_t r = 0; r < model.params.head.rows; ++r) detail::write_values(os, model.params.head.row(r));
  os << "bias 2\n";
  detail::write_values(os, std::span<const T>(model.params.bias));
  os << "end\n";
}

template <typename T = double>
Model<T> read_model(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kCheckpointMagic) throw Error(Errc::Checkpoint, "not a GCN checkpoint");
  if (version != kCheckpointVersion) throw Error(Errc::Checkpoint, "unsupported checkpoint version " + std::to_string(version));
  Model<T> m;
  std::size_t layers = 0;
  detail::expect_word(is, "input_dim");
  is >> m.arch.input_dim;
  detail::expect_word(is, "hidden");
  is >> layers;
  if (!is || layers == 0 || layers > 64) throw Error(Errc::Checkpoint, "bad layer count");
  m.arch.hidden.resize(layers);
  for (auto& h : m.arch.hidden) is >> h;
  detail::expect_word(is, "dropout");
  detail::read_values<double>(is, std::span<double>(&m.arch.dropout, 1), "dropout");
  detail::expect_word(is, "readout");
  std::string readout;
  is >> readout;
  m.arch.readout = parse_readout(readout);
  if (!is) throw Error(Errc::Checkpoint, "truncated header");
  std::size_t in = m.arch.input_dim;
  for (std::size_t l = 0; l < layers; ++l) {
    std::size_t idx = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    detail::expect_word(is, "conv");
    is >> idx >> rows >> cols;
    if (!is || idx != l || rows != in || cols != m.arch.hidden[l]) throw Error(Errc::Checkpoint, "conv dims do not chain");
    Matrix<T> w(rows, cols);
    detail::read_values(is, std::span<T>(w.data), "conv weights");
    m.params.conv.push_back(std::move(w));
    in = cols;
  }
  std::size_t rows = 0;
  std::size_t cols = 0;
  detail::expect_word(is, "head");
  is >> rows >> cols;
  if (!is || rows != in || cols != 2) throw Error(Errc::Checkpoint, "bad head dims");
  m.params.head = Matrix<T>(rows, cols);
  detail::read_values(is, std::span<T>(m.params.head.data), "head weights");
  detail::expect_word(is, "bias");
  std::size_t nb = 0;
  is >> nb;
  if (nb != 2) throw Error(Errc::Checkpoint, "bad bias size");
  m.params.bias.assign(2, T{0});
  detail::read_values(is, std::span<T>(m.params.bias), "bias");
  detail::expect_word(is, "end");
  m.arch.validate();
  return m;
}

}  // namespace atomgraph::gcn
