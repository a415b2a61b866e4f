// Command-line front end: one subcommand per pipeline stage.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "atomgraph/atomgraph.hpp"

namespace fs = std::filesystem;
using namespace atomgraph;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out;
};

PipelineConfig load_config(const Globals& g, std::optional<fs::path> base_file = std::nullopt) {
  PipelineConfig c = default_config();
  auto apply_file = [&](const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error(Errc::MissingFile, "cannot open config " + p.string());
    c = parse_config(in, c);
  };
  if (base_file && fs::exists(*base_file)) apply_file(*base_file);
  if (!g.config_path.empty()) apply_file(g.config_path);
  if (g.seed) c.set_seed(*g.seed);
  c.validate();
  return c;
}

fs::path out_dir(const Globals& g) {
  fs::path dir = g.out.empty() ? fs::path(".") : fs::path(g.out);
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error(Errc::MissingFile, "cannot write " + p.string());
  return out;
}

void write_table(const fs::path& p, const embed::EmbeddingTable& t) {
  auto out = open_out(p);
  t.write(out);
}

embed::EmbeddingTable read_table(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(Errc::MissingFile, "cannot open " + p.string());
  return embed::EmbeddingTable::read(in);
}

// `key value` lines describing how fused.vec was produced.
struct FusionRecord {
  fusion::Strategy strategy = fusion::Strategy::Adaptive;
  double alpha = 0.5;
};

void write_fusion_record(const fs::path& p, const FusionRecord& r) {
  auto out = open_out(p);
  out << "strategy " << fusion::to_string(r.strategy) << '\n' << "alpha " << r.alpha << '\n';
}

FusionRecord read_fusion_record(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(Errc::MissingFile, "cannot open " + p.string());
  FusionRecord r;
  std::string key;
  std::string value;
  while (in >> key >> value) {
    if (key == "strategy") r.strategy = fusion::parse_strategy(value);
    else if (key == "alpha") r.alpha = std::stod(value);
    else throw Error(Errc::MalformedRecord, "unknown key in fusion record: " + key);
  }
  return r;
}

evm::Bytecode read_contract(const std::string& path, const std::string& format) {
  auto f = dataset::BytecodeFormat::Auto;
  if (format == "hex") f = dataset::BytecodeFormat::Hex;
  if (format == "bin") f = dataset::BytecodeFormat::Binary;
  return dataset::load_bytecode(path, f);
}

// Per-contract modality vectors as written by `embed`.
struct FeatureDir {
  embed::EmbeddingTable tokens;
  embed::EmbeddingTable semantic;
  embed::EmbeddingTable structural;
};

FeatureDir read_feature_dir(const fs::path& dir) {
  return {read_table(dir / "tokens.vec"), read_table(dir / "semantic.vec"), read_table(dir / "structural.vec")};
}

std::vector<pipeline::ContractFeatures> features_from_dir(const FeatureDir& fd, std::span<const pipeline::Contract> contracts,
                                                          const PipelineConfig& config, bool augment) {
  std::vector<pipeline::ContractFeatures> out(contracts.size());
  for (std::size_t i = 0; i < contracts.size(); ++i) {
    out[i].semantic = embed::lookup_nodes(fd.semantic, contracts[i].id, contracts[i].graph);
    out[i].structural = embed::lookup_nodes(fd.structural, contracts[i].id, contracts[i].graph);
    if (augment) {
      out[i].augmented = fusion::augment_graph(contracts[i].graph, out[i].semantic, config.aug_threshold);
      out[i].augmented_structural = embed::structural_node_vectors(*out[i].augmented, config.walk);
    }
  }
  return out;
}

void print_metrics(std::ostream& os, const metrics::EvalReport& m) {
  os << "acc=" << m.accuracy << " precision=" << m.precision << " recall=" << m.recall << " f1=" << m.f1
     << " fpr=" << m.fpr << " (tp=" << m.confusion.tp << " fp=" << m.confusion.fp << " tn=" << m.confusion.tn
     << " fn=" << m.confusion.fn << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"atomgraph: EVM bytecode atomicity-defect detection"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Global seed; every stage derives its seed from it");
  app.add_option("--config", g.config_path, "Flat key = value configuration file");
  app.add_option("--out", g.out, "Output directory (a file path for `train`)");

  // disasm
  std::string input;
  std::string format = "auto";
  auto* disasm = app.add_subcommand("disasm", "Disassemble a contract");
  disasm->add_option("input", input, "Bytecode file (hex or raw)")->required();
  disasm->add_option("--format", format, "auto, hex or bin")->check(CLI::IsMember({"auto", "hex", "bin"}));

  // cfg
  auto* cfgcmd = app.add_subcommand("cfg", "Build the control-flow graph and emit DOT");
  cfgcmd->add_option("input", input, "Bytecode file")->required();
  cfgcmd->add_option("--format", format, "auto, hex or bin")->check(CLI::IsMember({"auto", "hex", "bin"}));

  // embed
  std::string manifest_path;
  auto* embedcmd = app.add_subcommand("embed", "Train opcode embeddings and per-block modality vectors");
  embedcmd->add_option("--manifest", manifest_path, "Corpus manifest")->required();

  // fuse
  std::string features_dir;
  std::string strategy_name = "adaptive";
  std::optional<double> alpha;
  auto* fuse = app.add_subcommand("fuse", "Fuse modality vectors (searching alpha for adaptive)");
  fuse->add_option("--features", features_dir, "Directory written by `embed`")->required();
  fuse->add_option("--manifest", manifest_path, "Corpus manifest")->required();
  fuse->add_option("--strategy", strategy_name, "adaptive, average, concat, semantic, structural, graphaug");
  fuse->add_option("--alpha", alpha, "Fixed structural weight; skips the search");

  // train
  auto* train = app.add_subcommand("train", "Train the GCN detector on fused features");
  train->add_option("--features", features_dir, "Directory written by `embed` and `fuse`")->required();
  train->add_option("--manifest", manifest_path, "Corpus manifest")->required();

  // predict
  std::string model_path;
  std::string contract_path;
  auto* predict = app.add_subcommand("predict", "Classify one contract");
  predict->add_option("--model", model_path, "Detector written by `train`")->required();
  predict->add_option("--contract", contract_path, "Bytecode file")->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate all six fusion strategies");
  ablate->add_option("--manifest", manifest_path, "Corpus manifest")->required();

  // gen-synth
  synthetic::SyntheticSpec spec;
  auto* gen = app.add_subcommand("gen-synth", "Generate a labeled synthetic corpus");
  gen->add_option("--n", spec.n_contracts, "Number of contracts");
  gen->add_option("--defect-fraction", spec.defect_fraction, "Fraction labeled defective");
  gen->add_option("--min-blocks", spec.min_blocks, "Minimum basic blocks per contract");
  gen->add_option("--max-blocks", spec.max_blocks, "Maximum basic blocks per contract");
  gen->add_option("--max-filler", spec.max_filler, "Maximum random opcodes per filler slot");

  // bench
  auto* bench = app.add_subcommand("bench", "Time end-to-end inference per contract");
  bench->add_option("--model", model_path, "Detector written by `train`")->required();
  bench->add_option("--manifest", manifest_path, "Corpus manifest")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorCategory::Config);
  }

  try {
    // Reject a broken --config up front, whichever subcommand was chosen.
    if (!g.config_path.empty()) (void)load_config(g);
    if (*disasm) {
      const auto code = read_contract(input, format);
      const auto d = evm::disassemble(code);
      std::ostringstream os;
      for (const auto& ins : d.instructions) os << evm::format_instruction(ins) << '\n';
      for (const auto& w : d.warnings) std::cerr << "warning: " << w << '\n';
      if (g.out.empty()) {
        std::cout << os.str();
      } else {
        open_out(out_dir(g) / (code.source_id + ".asm")) << os.str();
      }
    } else if (*cfgcmd) {
      const auto code = read_contract(input, format);
      const auto graph = cfg::build_cfg(std::span<const std::uint8_t>(code.bytes));
      const auto st = cfg::stats(graph);
      std::cerr << "blocks=" << st.blocks << " edges=" << st.edges << " unresolved=" << st.unresolved_jumps << '\n';
      if (g.out.empty()) {
        std::cout << cfg::to_dot(graph);
      } else {
        open_out(out_dir(g) / (code.source_id + ".dot")) << cfg::to_dot(graph);
      }
    } else if (*embedcmd) {
      const auto config = load_config(g);
      const auto manifest = dataset::load_manifest(manifest_path);
      const auto contracts = pipeline::load_contracts(manifest, config.threads);
      const auto folds = pipeline::make_folds(contracts, config);
      std::vector<pipeline::Contract> fit;
      for (auto i : folds.train) fit.push_back(contracts[i]);
      for (auto i : folds.val) fit.push_back(contracts[i]);
      const auto tokens = pipeline::train_token_table(fit, config);
      const auto features = pipeline::compute_features(contracts, tokens, config, false);
      std::vector<std::pair<std::string, embed::NodeVectors>> sem;
      std::vector<std::pair<std::string, embed::NodeVectors>> str;
      for (std::size_t i = 0; i < contracts.size(); ++i) {
        sem.emplace_back(contracts[i].id, features[i].semantic);
        str.emplace_back(contracts[i].id, features[i].structural);
      }
      const auto dir = out_dir(g);
      write_table(dir / "tokens.vec", tokens);
      write_table(dir / "semantic.vec", embed::to_table(sem, config.token.dim));
      write_table(dir / "structural.vec", embed::to_table(str, config.walk.skipgram.dim));
      open_out(dir / "pipeline.cfg") << format_config(config);
      std::cout << "embedded " << contracts.size() << " contracts (vocab " << tokens.size() << ") into " << dir << '\n';
    } else if (*fuse) {
      const fs::path fdir = features_dir;
      const auto config = load_config(g, fdir / "pipeline.cfg");
      const auto strategy = fusion::parse_strategy(strategy_name);
      const auto manifest = dataset::load_manifest(manifest_path);
      const auto contracts = pipeline::load_contracts(manifest, config.threads);
      const auto fd = read_feature_dir(fdir);
      const auto features = features_from_dir(fd, contracts, config, strategy == fusion::Strategy::GraphAug);
      FusionRecord rec{strategy, 0.5};
      if (strategy == fusion::Strategy::Adaptive) {
        if (alpha) {
          rec.alpha = fusion::FusionWeights{*alpha}.alpha();
        } else if (config.alpha) {
          rec.alpha = *config.alpha;
        } else {
          const auto folds = pipeline::make_folds(contracts, config);
          const auto search = pipeline::search_alpha(contracts, features, folds, config);
          for (const auto& c : search.candidates) std::cerr << "alpha=" << c.weights.alpha() << " val_loss=" << c.quality.score << '\n';
          rec.alpha = search.weights.alpha();
        }
      }
      std::vector<std::pair<std::string, embed::NodeVectors>> fused;
      for (std::size_t i = 0; i < contracts.size(); ++i) {
        const auto& f = features[i];
        const auto& structural = strategy == fusion::Strategy::GraphAug ? f.augmented_structural : f.structural;
        fused.emplace_back(contracts[i].id,
                           fusion::fuse_nodes(structural, f.semantic, strategy, fusion::FusionWeights{rec.alpha}).vectors);
      }
      const fs::path dir = g.out.empty() ? fdir : out_dir(g);
      write_table(dir / "fused.vec", embed::to_table(fused, fusion::fused_dim(config.token.dim, strategy)));
      write_fusion_record(dir / "fusion.cfg", rec);
      std::cout << "strategy=" << fusion::to_string(strategy) << " alpha=" << rec.alpha << '\n';
    } else if (*train) {
      const fs::path fdir = features_dir;
      const auto config = load_config(g, fdir / "pipeline.cfg");
      const auto manifest = dataset::load_manifest(manifest_path);
      const auto contracts = pipeline::load_contracts(manifest, config.threads);
      const auto rec = read_fusion_record(fdir / "fusion.cfg");
      const auto fused = read_table(fdir / "fused.vec");
      const auto fd = read_feature_dir(fdir);
      const bool aug = rec.strategy == fusion::Strategy::GraphAug;
      auto sample = [&](std::size_t i) {
        const auto& c = contracts[i];
        gcn::GraphSample<double> s;
        s.label = c.label;
        const auto vectors = embed::lookup_nodes(fused, c.id, c.graph);
        const auto graph = aug ? fusion::augment_graph(c.graph, embed::lookup_nodes(fd.semantic, c.id, c.graph), config.aug_threshold)
                               : c.graph;
        s.adjacency = gcn::normalize_adjacency<double>(graph);
        s.features = gcn::Matrix<double>(vectors.size(), fused.dim());
        std::size_t r = 0;
        for (const auto& [_, v] : vectors) std::copy(v.begin(), v.end(), s.features.row(r++).begin());
        return s;
      };
      const auto folds = pipeline::make_folds(contracts, config);
      std::vector<gcn::GraphSample<double>> tr, va, te;
      for (auto i : folds.train) tr.push_back(sample(i));
      for (auto i : folds.val) va.push_back(sample(i));
      for (auto i : folds.test) te.push_back(sample(i));
      auto [model, history] = pipeline::fit(config, rec.strategy, tr, va, config.train.epochs);
      std::cerr << "epochs=" << history.train_loss.size() << " best_epoch=" << history.best_epoch
                << " best_val_loss=" << history.best_loss << '\n';
      std::cout << "test: ";
      print_metrics(std::cout, pipeline::evaluate(model, te));
      pipeline::Detector d{config, rec.strategy, fusion::FusionWeights{rec.alpha}, fd.tokens, std::move(model)};
      const fs::path target = g.out.empty() ? fs::path("model.ckpt") : fs::path(g.out);
      if (target.has_parent_path()) fs::create_directories(target.parent_path());
      pipeline::save_detector(target, d);
      std::cout << "wrote " << target << '\n';
    } else if (*predict) {
      const auto d = pipeline::load_detector(model_path);
      const auto code = dataset::load_bytecode(contract_path);
      const auto p = pipeline::detect(d, std::span<const std::uint8_t>(code.bytes));
      std::cout << code.source_id << " label=" << p.label << " (" << (p.label ? "defective" : "normal")
                << ") probability=" << p.probability << '\n';
    } else if (*ablate) {
      const auto config = load_config(g);
      const auto manifest = dataset::load_manifest(manifest_path);
      const auto contracts = pipeline::load_contracts(manifest, config.threads);
      const auto report = pipeline::run_ablation(contracts, config, fusion::kAllStrategies, std::cerr);
      const auto text = pipeline::format_report(report);
      std::cout << text;
      if (!g.out.empty()) {
        const auto dir = out_dir(g);
        open_out(dir / "ablation.txt") << text;
        open_out(dir / "ablation.json") << pipeline::report_json(report).dump(2) << '\n';
      }
    } else if (*gen) {
      if (g.seed) spec.seed = *g.seed;
      const auto corpus = synthetic::generate_synthetic(spec);
      const auto dir = out_dir(g);
      synthetic::write_corpus(corpus, dir);
      std::cout << "wrote " << corpus.size() << " contracts to " << dir / "manifest.txt" << '\n';
    } else if (*bench) {
      auto d = pipeline::load_detector(model_path);
      if (!g.config_path.empty()) d.config.threads = load_config(g).threads;
      const auto manifest = dataset::load_manifest(manifest_path);
      const auto t = pipeline::time_pipeline(d, manifest);
      std::cout << "contracts=" << t.contracts.size() << " mean=" << t.mean << "s median=" << t.median
                << "s max=" << t.max << "s total=" << t.total << "s\n";
      if (!g.out.empty()) {
        nlohmann::ordered_json j;
        j["mean"] = t.mean;
        j["median"] = t.median;
        j["max"] = t.max;
        j["total"] = t.total;
        for (const auto& c : t.contracts) {
          j["contracts"].push_back({{"id", c.id}, {"seconds", c.seconds}, {"label", c.prediction.label}});
        }
        open_out(out_dir(g) / "timing.json") << j.dump(2) << '\n';
      }
    }
  } catch (const Error& e) {
    std::cerr << "error [" << errc_name(e.code()) << "]: " << e.what() << '\n';
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
