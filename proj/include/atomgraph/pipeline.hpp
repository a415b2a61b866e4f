#pragma once

// End-to-end orchestration: corpus ingestion, per-contract features, GCN
// sample assembly, the ablation matrix, detector bundles and timing.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "atomgraph/cfg.hpp"
#include "atomgraph/config.hpp"
#include "atomgraph/dataset.hpp"
#include "atomgraph/embedding.hpp"
#include "atomgraph/evm.hpp"
#include "atomgraph/fusion.hpp"
#include "atomgraph/gcn.hpp"
#include "atomgraph/metrics.hpp"
#include "atomgraph/synthetic.hpp"
#include "json.hpp"

namespace atomgraph::pipeline {

using fusion::Strategy;

struct Contract {
  std::string id;
  cfg::Cfg graph;
  int label = 0;
};

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. Each index is
/// handled by exactly one worker, so results written per index are
/// independent of the thread count.
template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& fn) {
  threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> workers;
  for (unsigned t = 0; t < threads; ++t) {
    workers.push_back(std::async(std::launch::async, [&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    }));
  }
  for (auto& w : workers) w.get();
}

inline std::vector<Contract> load_contracts(const dataset::DatasetManifest& manifest, unsigned threads = 1) {
  std::vector<Contract> out(manifest.records.size());
  parallel_for(out.size(), threads, [&](std::size_t i) {
    const auto& r = manifest.records[i];
    const auto code = dataset::load_bytecode(r.path, dataset::BytecodeFormat::Auto, r.id);
    out[i] = {r.id, cfg::build_cfg(std::span<const std::uint8_t>(code.bytes)), r.label};
  });
  return out;
}

inline std::vector<Contract> from_synthetic(const std::vector<synthetic::SyntheticContract>& corpus) {
  std::vector<Contract> out;
  out.reserve(corpus.size());
  for (const auto& c : corpus) out.push_back({c.id, cfg::build_cfg(std::span<const std::uint8_t>(c.bytecode)), c.label});
  return out;
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

/// Both modalities of one contract; the augmented graph and its walk vectors
/// are only filled when GraphAug is requested.
struct ContractFeatures {
  embed::NodeVectors semantic;
  embed::NodeVectors structural;
  std::optional<cfg::Cfg> augmented;
  embed::NodeVectors augmented_structural;
};

inline ContractFeatures contract_features(const cfg::Cfg& g, const embed::EmbeddingTable& tokens,
                                          const PipelineConfig& config, bool with_augmentation) {
  ContractFeatures f;
  f.semantic = embed::semantic_node_vectors(g, tokens, config.pooling);
  f.structural = embed::structural_node_vectors(g, config.walk);
  if (with_augmentation) {
    f.augmented = fusion::augment_graph(g, f.semantic, config.aug_threshold);
    f.augmented_structural = embed::structural_node_vectors(*f.augmented, config.walk);
  }
  return f;
}

inline std::vector<ContractFeatures> compute_features(std::span<const Contract> contracts,
                                                      const embed::EmbeddingTable& tokens, const PipelineConfig& config,
                                                      bool with_augmentation) {
  std::vector<ContractFeatures> out(contracts.size());
  parallel_for(contracts.size(), config.threads, [&](std::size_t i) {
    out[i] = contract_features(contracts[i].graph, tokens, config, with_augmentation);
  });
  return out;
}

inline embed::EmbeddingTable train_token_table(std::span<const Contract> contracts, const PipelineConfig& config) {
  std::vector<cfg::Cfg> graphs;
  graphs.reserve(contracts.size());
  for (const auto& c : contracts) graphs.push_back(c.graph);
  return embed::train_token_embeddings(embed::build_token_corpus(graphs), config.token);
}

/// Node feature matrix (rows in block pc order) plus normalized adjacency for
/// one strategy. GraphAug swaps in the augmented graph and its walk vectors.
inline gcn::GraphSample<double> make_sample(const cfg::Cfg& graph, const ContractFeatures& f, Strategy strategy,
                                            fusion::FusionWeights weights, int label) {
  const bool aug = strategy == Strategy::GraphAug;
  if (aug && !f.augmented) throw Error(Errc::InvalidConfig, "GraphAug sample requested without augmented features");
  const cfg::Cfg& g = aug ? *f.augmented : graph;
  const auto& structural = aug ? f.augmented_structural : f.structural;
  const auto fused = fusion::fuse_nodes(structural, f.semantic, strategy, weights);
  gcn::GraphSample<double> s;
  s.label = label;
  s.adjacency = gcn::normalize_adjacency<double>(g);
  const std::size_t dim = fused.vectors.empty() ? 0 : fused.vectors.begin()->second.size();
  s.features = gcn::Matrix<double>(fused.vectors.size(), dim);
  std::size_t r = 0;
  for (const auto& [_, v] : fused.vectors) std::copy(v.begin(), v.end(), s.features.row(r++).begin());
  return s;
}

inline std::vector<gcn::GraphSample<double>> make_samples(std::span<const Contract> contracts,
                                                          std::span<const ContractFeatures> features,
                                                          std::span<const std::size_t> indices, Strategy strategy,
                                                          fusion::FusionWeights weights) {
  std::vector<gcn::GraphSample<double>> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(make_sample(contracts[i].graph, features[i], strategy, weights, contracts[i].label));
  return out;
}

inline gcn::Architecture architecture_for(const PipelineConfig& config, Strategy strategy) {
  auto arch = config.arch;
  arch.input_dim = fusion::fused_dim(config.token.dim, strategy);
  return arch;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct StrategyResult {
  Strategy strategy = Strategy::Adaptive;
  metrics::EvalReport report;
  std::optional<double> alpha;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
};

struct AblationReport {
  std::vector<StrategyResult> rows;
  std::uint64_t split_hash = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  std::optional<fusion::WeightSearchResult> search;
};

/// Three disjoint folds of contract indices.
struct Folds {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::uint64_t hash = 0;
};

inline Folds make_folds(std::span<const Contract> contracts, const PipelineConfig& config) {
  std::vector<dataset::detail::LabeledId> all;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < contracts.size(); ++i) {
    all.push_back({contracts[i].id, contracts[i].label});
    if (!index.emplace(contracts[i].id, i).second) throw Error(Errc::DuplicateId, "duplicate contract id " + contracts[i].id);
  }
  const auto outer = dataset::detail::stratified_split(all, config.train_fraction, config.seed);
  std::vector<dataset::detail::LabeledId> train_items;
  for (const auto& id : outer.train) train_items.push_back({id, contracts[index.at(id)].label});
  const auto inner = dataset::detail::stratified_split(train_items, 1.0 - config.val_fraction, mix_seed(config.seed, 0x76616cULL));
  Folds f;
  for (const auto& id : inner.train) f.train.push_back(index.at(id));
  for (const auto& id : inner.test) f.val.push_back(index.at(id));
  for (const auto& id : outer.test) f.test.push_back(index.at(id));
  f.hash = dataset::split_hash({inner.train, inner.test, outer.test});
  return f;
}

inline metrics::EvalReport evaluate(const gcn::Model<double>& model, std::span<const gcn::GraphSample<double>> samples) {
  std::vector<int> preds;
  std::vector<int> labels;
  for (const auto& s : samples) {
    preds.push_back(gcn::predict(model, s.adjacency, s.features).label);
    labels.push_back(s.label);
  }
  return metrics::compute_metrics(preds, labels);
}

/// Trains a fresh model (seeded identically for every strategy and candidate).
inline std::pair<gcn::Model<double>, gcn::TrainHistory> fit(const PipelineConfig& config, Strategy strategy,
                                                            std::span<const gcn::GraphSample<double>> train,
                                                            std::span<const gcn::GraphSample<double>> val,
                                                            std::size_t epochs) {
  auto model = gcn::Model<double>::init(architecture_for(config, strategy), mix_seed(config.seed, 4));
  auto tc = config.train;
  tc.epochs = epochs;
  tc.early_stop_patience = std::min(tc.early_stop_patience, epochs);
  auto history = gcn::train<double>(model, train, val, tc);
  return {std::move(model), std::move(history)};
}

inline std::size_t search_epochs(const PipelineConfig& config) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.search_budget * static_cast<double>(config.train.epochs))));
}

/// Grid search over alpha: each candidate trains on the train fold and is
/// scored by its restored-best validation loss.
inline fusion::WeightSearchResult search_alpha(std::span<const Contract> contracts,
                                               std::span<const ContractFeatures> features, const Folds& folds,
                                               const PipelineConfig& config) {
  const auto grid = fusion::alpha_grid(config.grid_step);
  const std::size_t epochs = search_epochs(config);
  auto evaluator = [&](fusion::FusionWeights w) {
    const auto train = make_samples(contracts, features, folds.train, Strategy::Adaptive, w);
    const auto val = make_samples(contracts, features, folds.val, Strategy::Adaptive, w);
    auto [model, history] = fit(config, Strategy::Adaptive, train, val, epochs);
    (void)history;
    return fusion::FusionQualityScore{
        gcn::mean_loss<double>(model, val, config.train.focal_gamma, history.class_weights)};
  };
  return fusion::search_weights(grid, evaluator, config.threads);
}

inline std::ostream& null_log() {
  static std::ostream sink(nullptr);
  return sink;
}

/// Trains and evaluates every requested strategy on one shared split.
inline AblationReport run_ablation(std::span<const Contract> contracts, const PipelineConfig& config,
                                   std::span<const Strategy> strategies = fusion::kAllStrategies,
                                   std::ostream& log = null_log()) {
  config.validate();
  if (contracts.empty()) throw Error(Errc::EmptyCorpus, "no contracts to evaluate");
  const Folds folds = make_folds(contracts, config);
  AblationReport report;
  report.split_hash = folds.hash;
  report.n_train = folds.train.size();
  report.n_val = folds.val.size();
  report.n_test = folds.test.size();
  log << "split: train=" << folds.train.size() << " val=" << folds.val.size() << " test=" << folds.test.size()
      << " hash=" << std::hex << folds.hash << std::dec << '\n';

  // Token embeddings see only the training and validation contracts.
  std::vector<Contract> fit_contracts;
  for (auto i : folds.train) fit_contracts.push_back(contracts[i]);
  for (auto i : folds.val) fit_contracts.push_back(contracts[i]);
  const auto tokens = train_token_table(fit_contracts, config);
  const bool need_aug = std::find(strategies.begin(), strategies.end(), Strategy::GraphAug) != strategies.end();
  const auto features = compute_features(contracts, tokens, config, need_aug);
  log << "features: " << contracts.size() << " contracts, token vocab " << tokens.size() << '\n';

  for (const auto strategy : strategies) {
    StrategyResult row;
    row.strategy = strategy;
    fusion::FusionWeights weights{0.5};
    if (strategy == Strategy::Adaptive) {
      if (config.alpha) {
        weights = fusion::FusionWeights{*config.alpha};
      } else {
        report.search = search_alpha(contracts, features, folds, config);
        weights = report.search->weights;
        log << "weight search: alpha*=" << weights.alpha() << " val_loss=" << report.search->quality.score << '\n';
      }
      row.alpha = weights.alpha();
    }
    const auto train = make_samples(contracts, features, folds.train, strategy, weights);
    const auto val = make_samples(contracts, features, folds.val, strategy, weights);
    const auto test = make_samples(contracts, features, folds.test, strategy, weights);
    const std::size_t epochs =
        strategy == Strategy::Adaptive && !config.retrain_full ? search_epochs(config) : config.train.epochs;
    auto [model, history] = fit(config, strategy, train, val, epochs);
    row.report = evaluate(model, test);
    row.report.strategy = std::string(fusion::to_string(strategy));
    row.epochs_run = history.train_loss.size();
    row.best_epoch = history.best_epoch;
    row.best_val_loss = history.best_loss;
    log << fusion::to_string(strategy) << ": f1=" << row.report.f1 << " epochs=" << row.epochs_run << '\n';
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline const StrategyResult* find_row(const AblationReport& r, Strategy s) {
  for (const auto& row : r.rows) {
    if (row.strategy == s) return &row;
  }
  return nullptr;
}

/// Fixed-width comparison table (percentages with two decimals). Contains no
/// timings so identical runs produce identical bytes.
inline std::string format_report(const AblationReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %8s %10s %8s %8s %8s\n", "strategy", "Acc(%)", "Precision", "Recall",
                "F1(%)", "FPR(%)");
  os << line;
  for (const auto& row : r.rows) {
    const auto& m = row.report;
    std::snprintf(line, sizeof(line), "%-12s %8.2f %10.2f %8.2f %8.2f %8.2f\n", m.strategy.c_str(), 100 * m.accuracy,
                  100 * m.precision, 100 * m.recall, 100 * m.f1, 100 * m.fpr);
    os << line;
  }
  std::snprintf(line, sizeof(line), "split: train=%zu val=%zu test=%zu hash=%016llx\n", r.n_train, r.n_val, r.n_test,
                static_cast<unsigned long long>(r.split_hash));
  os << line;
  if (const auto* a = find_row(r, Strategy::Adaptive); a && a->alpha) {
    std::snprintf(line, sizeof(line), "adaptive alpha=%.2f\n", *a->alpha);
    os << line;
  }
  return os.str();
}

inline nlohmann::ordered_json report_json(const AblationReport& r) {
  nlohmann::ordered_json j;
  j["split_hash"] = r.split_hash;
  j["n_train"] = r.n_train;
  j["n_val"] = r.n_val;
  j["n_test"] = r.n_test;
  auto& rows = j["strategies"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    const auto& m = row.report;
    nlohmann::ordered_json e;
    e["strategy"] = m.strategy;
    e["confusion"] = {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"tn", m.confusion.tn}, {"fn", m.confusion.fn}};
    e["accuracy"] = m.accuracy;
    e["precision"] = m.precision;
    e["recall"] = m.recall;
    e["f1"] = m.f1;
    e["fpr"] = m.fpr;
    e["undefined"] = {{"precision", m.precision_undefined},
                      {"recall", m.recall_undefined},
                      {"f1", m.f1_undefined},
                      {"fpr", m.fpr_undefined}};
    if (row.alpha) e["alpha"] = *row.alpha;
    e["epochs_run"] = row.epochs_run;
    e["best_epoch"] = row.best_epoch;
    e["best_val_loss"] = row.best_val_loss;
    rows.push_back(std::move(e));
  }
  if (r.search) {
    auto& cands = j["weight_search"] = nlohmann::ordered_json::array();
    for (const auto& c : r.search->candidates) cands.push_back({{"alpha", c.weights.alpha()}, {"val_loss", c.quality.score}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// Detector bundle (token table + feature settings + GCN)
// ---------------------------------------------------------------------------

inline constexpr std::string_view kDetectorMagic = "ATOMGRAPH-DETECTOR";
inline constexpr int kDetectorVersion = 1;

struct Detector {
  PipelineConfig config;
  Strategy strategy = Strategy::Adaptive;
  fusion::FusionWeights weights{0.5};
  embed::EmbeddingTable tokens;
  gcn::Model<double> model;
};

inline gcn::Prediction detect(const Detector& d, const cfg::Cfg& g) {
  const auto f = contract_features(g, d.tokens, d.config, d.strategy == Strategy::GraphAug);
  const auto s = make_sample(g, f, d.strategy, d.weights, 0);
  return gcn::predict(d.model, s.adjacency, s.features);
}

inline gcn::Prediction detect(const Detector& d, std::span<const std::uint8_t> bytecode) {
  return detect(d, cfg::build_cfg(bytecode));
}

/// Header, the flat configuration, then the token table and the model.
inline void write_detector(std::ostream& os, const Detector& d) {
  os << kDetectorMagic << ' ' << kDetectorVersion << '\n';
  os << "strategy " << fusion::to_string(d.strategy) << '\n';
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), d.weights.alpha());
  os << "alpha " << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf)) << '\n';
  const auto cfg_text = format_config(d.config);
  os << "config " << std::count(cfg_text.begin(), cfg_text.end(), '\n') << '\n' << cfg_text;
  os << "tokens\n";
  d.tokens.write(os);
  gcn::write_model(os, d.model);
}

inline Detector read_detector(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kDetectorMagic) throw Error(Errc::Checkpoint, "not a detector bundle");
  if (version != kDetectorVersion) throw Error(Errc::Checkpoint, "unsupported detector version " + std::to_string(version));
  Detector d;
  std::string word;
  std::string value;
  if (!(is >> word >> value) || word != "strategy") throw Error(Errc::Checkpoint, "missing strategy");
  d.strategy = fusion::parse_strategy(value);
  double alpha = 0.0;
  if (!(is >> word >> alpha) || word != "alpha") throw Error(Errc::Checkpoint, "missing alpha");
  d.weights = fusion::FusionWeights{alpha};
  std::size_t lines = 0;
  if (!(is >> word >> lines) || word != "config") throw Error(Errc::Checkpoint, "missing config");
  is.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
  std::string text;
  std::string line;
  for (std::size_t i = 0; i < lines && std::getline(is, line); ++i) text += line + '\n';
  std::istringstream cfg_stream(text);
  d.config = parse_config(cfg_stream);
  if (!std::getline(is, line) || line != "tokens") throw Error(Errc::Checkpoint, "missing token table");
  d.tokens = embed::EmbeddingTable::read(is);
  d.model = gcn::read_model<double>(is);
  if (d.model.arch.input_dim != fusion::fused_dim(d.tokens.dim(), d.strategy)) {
    throw Error(Errc::Checkpoint, "model input width does not match the token table");
  }
  return d;
}

inline void save_detector(const std::filesystem::path& path, const Detector& d) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::MissingFile, "cannot write " + path.string());
  write_detector(out, d);
}

inline Detector load_detector(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingFile, "cannot open " + path.string());
  return read_detector(in);
}

/// Trains a deployable detector for one strategy (Adaptive runs the weight
/// search unless config.alpha is set).
inline Detector train_detector(std::span<const Contract> contracts, const PipelineConfig& config,
                               Strategy strategy = Strategy::Adaptive, std::ostream& log = null_log()) {
  config.validate();
  const Folds folds = make_folds(contracts, config);
  std::vector<Contract> fit_contracts;
  for (auto i : folds.train) fit_contracts.push_back(contracts[i]);
  for (auto i : folds.val) fit_contracts.push_back(contracts[i]);
  Detector d;
  d.config = config;
  d.strategy = strategy;
  d.tokens = train_token_table(fit_contracts, config);
  const auto features = compute_features(contracts, d.tokens, config, strategy == Strategy::GraphAug);
  if (strategy == Strategy::Adaptive) {
    d.weights = config.alpha ? fusion::FusionWeights{*config.alpha} : search_alpha(contracts, features, folds, config).weights;
    log << "alpha*=" << d.weights.alpha() << '\n';
  }
  const auto train = make_samples(contracts, features, folds.train, strategy, d.weights);
  const auto val = make_samples(contracts, features, folds.val, strategy, d.weights);
  d.model = fit(config, strategy, train, val, config.train.epochs).first;
  return d;
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

struct ContractTiming {
  std::string id;
  double seconds = 0.0;
  gcn::Prediction prediction;
};

struct TimingReport {
  std::vector<ContractTiming> contracts;
  double total = 0.0;
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
};

inline TimingReport summarize_timings(std::vector<ContractTiming> items) {
  TimingReport r;
  r.contracts = std::move(items);
  if (r.contracts.empty()) return r;
  std::vector<double> s;
  for (const auto& c : r.contracts) s.push_back(c.seconds);
  r.total = std::accumulate(s.begin(), s.end(), 0.0);
  r.mean = r.total / static_cast<double>(s.size());
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  r.median = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
  r.max = s.back();
  return r;
}

/// Wall clock per contract for hex decode -> disassembly -> CFG -> features
/// (including the per-contract walk embedding) -> prediction.
inline TimingReport time_pipeline(const Detector& d, const dataset::DatasetManifest& manifest) {
  std::vector<ContractTiming> items(manifest.records.size());
  parallel_for(items.size(), d.config.threads, [&](std::size_t i) {
    const auto& r = manifest.records[i];
    const auto start = std::chrono::steady_clock::now();
    const auto code = dataset::load_bytecode(r.path, dataset::BytecodeFormat::Auto, r.id);
    const auto g = cfg::build_cfg(std::span<const std::uint8_t>(code.bytes));
    items[i].prediction = detect(d, g);
    items[i].seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    items[i].id = r.id;
  });
  return summarize_timings(std::move(items));
}

}  // namespace atomgraph::pipeline
