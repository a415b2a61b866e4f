#pragma once

// Flat `key = value` pipeline configuration covering every tunable default.

#include <charconv>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "atomgraph/embedding.hpp"
#include "atomgraph/error.hpp"
#include "atomgraph/fusion.hpp"
#include "atomgraph/gcn.hpp"

namespace atomgraph {

struct PipelineConfig {
  std::uint64_t seed = 1;
  unsigned threads = 1;

  embed::SkipGramConfig token{};  // opcode embeddings
  embed::WalkConfig walk{};       // structural walks + their skip-gram
  embed::Pooling pooling = embed::Pooling::Mean;

  double grid_step = 0.05;
  double search_budget = 0.3;  // fraction of train.epochs per weight-search candidate
  bool retrain_full = true;
  double aug_threshold = 0.9;
  std::optional<double> alpha;  // fixes the adaptive weight and skips the search

  gcn::Architecture arch{};
  gcn::TrainConfig train{};

  double train_fraction = 0.9;
  double val_fraction = 0.1;  // carved from the training split

  void validate() const {
    token.validate();
    walk.validate();
    arch.validate();
    train.validate();
    fusion::validate_aug_threshold(aug_threshold);
    fusion::alpha_grid(grid_step);
    if (!(search_budget > 0.0 && search_budget <= 1.0)) throw Error(Errc::InvalidConfig, "search_budget must lie in (0, 1]");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error(Errc::InvalidConfig, "train_fraction must lie in (0, 1)");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw Error(Errc::InvalidConfig, "val_fraction must lie in (0, 1)");
    if (alpha) fusion::FusionWeights{*alpha};
  }

  /// Seeds of every stochastic stage derive from one value.
  void set_seed(std::uint64_t s) {
    seed = s;
    token.seed = mix_seed(s, 1);
    walk.skipgram.seed = mix_seed(s, 2);
    train.seed = mix_seed(s, 3);
  }
};

namespace detail {

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw Error(Errc::InvalidConfig, "bad value for " + std::string(key) + ": '" + std::string(text) + "'");
  }
  return value;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw Error(Errc::InvalidConfig, "bad boolean for " + std::string(key) + ": '" + std::string(text) + "'");
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

using Setter = std::function<void(PipelineConfig&, std::string_view key, std::string_view value)>;

inline const std::map<std::string, Setter, std::less<>>& config_setters() {
  static const std::map<std::string, Setter, std::less<>> setters = [] {
    std::map<std::string, Setter, std::less<>> m;
    auto sz = [](std::size_t PipelineConfig::*, auto) {};
    (void)sz;
    m["seed"] = [](PipelineConfig& c, auto k, auto v) { c.set_seed(parse_number<std::uint64_t>(k, v)); };
    m["threads"] = [](PipelineConfig& c, auto k, auto v) { c.threads = parse_number<unsigned>(k, v); };
    m["embed.dim"] = [](PipelineConfig& c, auto k, auto v) {
      c.token.dim = c.walk.skipgram.dim = parse_number<std::size_t>(k, v);
      c.arch.input_dim = c.token.dim;
    };
    m["embed.window"] = [](PipelineConfig& c, auto k, auto v) { c.token.window = c.walk.skipgram.window = parse_number<std::size_t>(k, v); };
    m["embed.negatives"] = [](PipelineConfig& c, auto k, auto v) { c.token.negatives = c.walk.skipgram.negatives = parse_number<std::size_t>(k, v); };
    m["embed.epochs"] = [](PipelineConfig& c, auto k, auto v) { c.token.epochs = c.walk.skipgram.epochs = parse_number<std::size_t>(k, v); };
    m["embed.learning_rate"] = [](PipelineConfig& c, auto k, auto v) {
      c.token.learning_rate = c.walk.skipgram.learning_rate = parse_number<double>(k, v);
    };
    m["walk.length"] = [](PipelineConfig& c, auto k, auto v) { c.walk.walk_length = parse_number<std::size_t>(k, v); };
    m["walk.per_node"] = [](PipelineConfig& c, auto k, auto v) { c.walk.walks_per_node = parse_number<std::size_t>(k, v); };
    m["walk.p"] = [](PipelineConfig& c, auto k, auto v) { c.walk.return_param = parse_number<double>(k, v); };
    m["walk.q"] = [](PipelineConfig& c, auto k, auto v) { c.walk.inout_param = parse_number<double>(k, v); };
    m["semantic.pooling"] = [](PipelineConfig& c, auto k, auto v) {
      if (v == "mean") c.pooling = embed::Pooling::Mean;
      else if (v == "sum") c.pooling = embed::Pooling::Sum;
      else throw Error(Errc::InvalidConfig, "bad value for " + std::string(k));
    };
    m["fusion.grid_step"] = [](PipelineConfig& c, auto k, auto v) { c.grid_step = parse_number<double>(k, v); };
    m["fusion.search_budget"] = [](PipelineConfig& c, auto k, auto v) { c.search_budget = parse_number<double>(k, v); };
    m["fusion.retrain_full"] = [](PipelineConfig& c, auto k, auto v) { c.retrain_full = parse_bool(k, v); };
    m["fusion.aug_threshold"] = [](PipelineConfig& c, auto k, auto v) { c.aug_threshold = parse_number<double>(k, v); };
    m["fusion.alpha"] = [](PipelineConfig& c, auto k, auto v) { c.alpha = parse_number<double>(k, v); };
    m["gcn.hidden"] = [](PipelineConfig& c, auto k, auto v) {
      c.arch.hidden.clear();
      std::string_view rest = v;
      while (!rest.empty()) {
        const auto comma = rest.find(',');
        c.arch.hidden.push_back(parse_number<std::size_t>(k, trim(rest.substr(0, comma))));
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
      }
    };
    m["gcn.dropout"] = [](PipelineConfig& c, auto k, auto v) { c.arch.dropout = parse_number<double>(k, v); };
    m["gcn.readout"] = [](PipelineConfig& c, auto, auto v) { c.arch.readout = gcn::parse_readout(v); };
    m["train.epochs"] = [](PipelineConfig& c, auto k, auto v) { c.train.epochs = parse_number<std::size_t>(k, v); };
    m["train.batch_size"] = [](PipelineConfig& c, auto k, auto v) { c.train.batch_size = parse_number<std::size_t>(k, v); };
    m["train.learning_rate"] = [](PipelineConfig& c, auto k, auto v) { c.train.learning_rate = parse_number<double>(k, v); };
    m["train.lr_decay"] = [](PipelineConfig& c, auto k, auto v) { c.train.lr_decay = parse_number<double>(k, v); };
    m["train.lr_patience"] = [](PipelineConfig& c, auto k, auto v) { c.train.lr_patience = parse_number<std::size_t>(k, v); };
    m["train.weight_decay"] = [](PipelineConfig& c, auto k, auto v) { c.train.weight_decay = parse_number<double>(k, v); };
    m["train.focal_gamma"] = [](PipelineConfig& c, auto k, auto v) { c.train.focal_gamma = parse_number<double>(k, v); };
    m["train.class_weights"] = [](PipelineConfig& c, auto k, auto v) {
      if (v == "auto") {
        c.train.class_weights.reset();
        return;
      }
      const auto comma = v.find(',');
      if (comma == std::string_view::npos) throw Error(Errc::InvalidConfig, "class_weights expects 'w0,w1' or 'auto'");
      c.train.class_weights = std::array<double, 2>{parse_number<double>(k, trim(v.substr(0, comma))),
                                                    parse_number<double>(k, trim(v.substr(comma + 1)))};
    };
    m["train.dynamic_class_weights"] = [](PipelineConfig& c, auto k, auto v) { c.train.dynamic_class_weights = parse_bool(k, v); };
    m["train.clip_norm"] = [](PipelineConfig& c, auto k, auto v) { c.train.clip_norm = parse_number<double>(k, v); };
    m["train.early_stop_patience"] = [](PipelineConfig& c, auto k, auto v) {
      c.train.early_stop_patience = parse_number<std::size_t>(k, v);
    };
    m["train.oversample"] = [](PipelineConfig& c, auto k, auto v) { c.train.oversample = parse_bool(k, v); };
    m["split.train_fraction"] = [](PipelineConfig& c, auto k, auto v) { c.train_fraction = parse_number<double>(k, v); };
    m["split.val_fraction"] = [](PipelineConfig& c, auto k, auto v) { c.val_fraction = parse_number<double>(k, v); };
    return m;
  }();
  return setters;
}

}  // namespace detail

inline void apply_config_entry(PipelineConfig& config, std::string_view key, std::string_view value) {
  const auto& setters = detail::config_setters();
  const auto it = setters.find(key);
  if (it == setters.end()) throw Error(Errc::InvalidConfig, "unknown config key '" + std::string(key) + "'");
  it->second(config, key, value);
}

/// Applies `key = value` lines on top of `base`. `#` starts a comment.
inline PipelineConfig parse_config(std::istream& is, PipelineConfig base = {}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::InvalidConfig, "line " + std::to_string(line_no) + ": expected key = value", line_no);
    }
    try {
      apply_config_entry(base, detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(Errc::InvalidConfig, "line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  base.validate();
  return base;
}

inline PipelineConfig default_config() {
  PipelineConfig c;
  c.set_seed(1);
  return c;
}

/// Every key with its current value, in parse_config syntax.
inline std::string format_config(const PipelineConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "seed = " << c.seed << '\n';
  os << "threads = " << c.threads << '\n';
  os << "embed.dim = " << c.token.dim << '\n';
  os << "embed.window = " << c.token.window << '\n';
  os << "embed.negatives = " << c.token.negatives << '\n';
  os << "embed.epochs = " << c.token.epochs << '\n';
  os << "embed.learning_rate = " << c.token.learning_rate << '\n';
  os << "walk.length = " << c.walk.walk_length << '\n';
  os << "walk.per_node = " << c.walk.walks_per_node << '\n';
  os << "walk.p = " << c.walk.return_param << '\n';
  os << "walk.q = " << c.walk.inout_param << '\n';
  os << "semantic.pooling = " << (c.pooling == embed::Pooling::Mean ? "mean" : "sum") << '\n';
  os << "fusion.grid_step = " << c.grid_step << '\n';
  os << "fusion.search_budget = " << c.search_budget << '\n';
  os << "fusion.retrain_full = " << (c.retrain_full ? "true" : "false") << '\n';
  os << "fusion.aug_threshold = " << c.aug_threshold << '\n';
  if (c.alpha) os << "fusion.alpha = " << *c.alpha << '\n';
  os << "gcn.hidden = ";
  for (std::size_t i = 0; i < c.arch.hidden.size(); ++i) os << (i ? "," : "") << c.arch.hidden[i];
  os << '\n';
  os << "gcn.dropout = " << c.arch.dropout << '\n';
  os << "gcn.readout = " << gcn::to_string(c.arch.readout) << '\n';
  os << "train.epochs = " << c.train.epochs << '\n';
  os << "train.batch_size = " << c.train.batch_size << '\n';
  os << "train.learning_rate = " << c.train.learning_rate << '\n';
  os << "train.lr_decay = " << c.train.lr_decay << '\n';
  os << "train.lr_patience = " << c.train.lr_patience << '\n';
  os << "train.weight_decay = " << c.train.weight_decay << '\n';
  os << "train.focal_gamma = " << c.train.focal_gamma << '\n';
  if (c.train.class_weights) {
    os << "train.class_weights = " << (*c.train.class_weights)[0] << ',' << (*c.train.class_weights)[1] << '\n';
  } else {
    os << "train.class_weights = auto\n";
  }
  os << "train.dynamic_class_weights = " << (c.train.dynamic_class_weights ? "true" : "false") << '\n';
  os << "train.clip_norm = " << c.train.clip_norm << '\n';
  os << "train.early_stop_patience = " << c.train.early_stop_patience << '\n';
  os << "train.oversample = " << (c.train.oversample ? "true" : "false") << '\n';
  os << "split.train_fraction = " << c.train_fraction << '\n';
  os << "split.val_fraction = " << c.val_fraction << '\n';
  return os.str();
}

}  // namespace atomgraph
