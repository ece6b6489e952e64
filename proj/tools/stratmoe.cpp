// stratmoe command-line driver: synth, train, analyze, report.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "stratmoe/analysis.hpp"
#include "stratmoe/data.hpp"
#include "stratmoe/model.hpp"
#include "stratmoe/report_io.hpp"
#include "stratmoe/run_config.hpp"
#include "stratmoe/training.hpp"

namespace fs = std::filesystem;
using namespace stratmoe;

namespace {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kBadConfig = 2,
  kMissingFile = 3,
  kDimMismatch = 4,
  kCorruptFile = 5,
  kOutputFailed = 6,
};

struct Failure {
  int code;
  std::string message;
};

void require_path(const fs::path& p, const char* key) {
  if (p.empty()) throw Failure{kBadConfig, std::string("config is missing paths.") + key};
}

void require_input(const fs::path& p, const char* key) {
  require_path(p, key);
  if (!fs::is_regular_file(p)) throw Failure{kMissingFile, std::string(key) + " not found: " + p.string()};
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  out.close();
  if (!out) throw Failure{kOutputFailed, "failed writing " + p.string()};
}

int cmd_synth(const RunConfig& cfg, bool quiet) {
  if (!cfg.synth) throw Failure{kBadConfig, "config has no synth section"};
  require_path(cfg.paths.dataset, "dataset");
  require_path(cfg.paths.ground_truth, "ground_truth");
  const auto result = synth_generate(*cfg.synth);
  ensure_parent(cfg.paths.dataset);
  save_dataset(result.dataset, cfg.paths.dataset);
  write_text(cfg.paths.ground_truth, ground_truth_csv(result.ground_truth));
  if (load_dataset(cfg.paths.dataset) != result.dataset)
    throw Failure{kOutputFailed, "dataset re-read does not match what was written"};
  if (!quiet)
    std::cout << "wrote " << result.dataset.size() << " x " << result.dataset.dim() << " dataset to "
              << cfg.paths.dataset.string() << "\n";
  return kOk;
}

int cmd_train(const RunConfig& cfg, bool quiet) {
  require_input(cfg.paths.dataset, "dataset");
  require_path(cfg.paths.checkpoint, "checkpoint");
  require_path(cfg.paths.history, "history");
  const auto dataset = load_dataset(cfg.paths.dataset);

  ModelDims dims = cfg.model;
  dims.embed_dim = dataset.dim();
  auto model = init_model(dims, cfg.sparsity_menu, cfg.seed);
  const auto history = train(model, dataset, cfg.train, [&](const EpochStats& e) {
    if (!quiet && (e.epoch + 1) % 10 == 0)
      std::fprintf(stderr, "epoch %zu  loss %.6g  entropy %.4f\n", e.epoch + 1, e.mean_loss, e.mean_entropy);
  });

  ensure_parent(cfg.paths.checkpoint);
  save_checkpoint(model, cfg.paths.checkpoint);
  std::ostringstream csv;
  write_history_csv(history, csv);
  write_text(cfg.paths.history, csv.str());
  if (load_checkpoint(cfg.paths.checkpoint) != model)
    throw Failure{kOutputFailed, "checkpoint re-read does not match what was written"};

  std::printf("final loss %.17g\n", evaluate_loss(model, dataset));
  return kOk;
}

int cmd_analyze(const RunConfig& cfg, bool plots, bool quiet) {
  require_input(cfg.paths.dataset, "dataset");
  require_input(cfg.paths.checkpoint, "checkpoint");
  require_path(cfg.paths.report_dir, "report_dir");
  const auto dataset = load_dataset(cfg.paths.dataset);
  const auto model = load_checkpoint(cfg.paths.checkpoint);
  if (model.dims.embed_dim != dataset.dim())
    throw Failure{kDimMismatch, "checkpoint embed dim " + std::to_string(model.dims.embed_dim) +
                                    " does not match dataset dim " + std::to_string(dataset.dim())};

  const auto report = build_report(model, dataset, cfg.variance_fraction);
  write_report(report, cfg.run_name, cfg.paths.report_dir, plots);

  const auto doc = nlohmann::json::parse(read_text(cfg.paths.report_dir / "report.json"));
  const auto problems = report_schema_problems(doc);
  if (!problems.empty()) throw Failure{kOutputFailed, "report.json fails validation: " + problems.front()};

  if (!quiet) {
    std::cout << "stratum  samples  intrinsic_dim  weighted_sparsity  entropy_nats\n";
    for (std::size_t s = 0; s < report.strata.size(); ++s) {
      const auto& st = report.strata[s];
      std::printf("%7zu  %7zu  %13zu  %17s  %12s\n", s, st.samples, st.intrinsic_dim,
                  st.weighted_sparsity ? std::to_string(*st.weighted_sparsity).c_str() : "-",
                  st.mean_gating_entropy ? std::to_string(*st.mean_gating_entropy).c_str() : "-");
    }
  }
  if (!cfg.paths.ground_truth.empty() && fs::is_regular_file(cfg.paths.ground_truth)) {
    const auto truth = parse_ground_truth_csv(read_text(cfg.paths.ground_truth));
    if (truth.size() != dataset.size())
      throw Failure{kDimMismatch, "ground truth has " + std::to_string(truth.size()) + " rows, dataset has " +
                                      std::to_string(dataset.size())};
    std::printf("ARI vs ground truth %.6f\n", adjusted_rand_index(report.stratum_ids, truth));
  }
  return kOk;
}

int run(const std::string& command, const fs::path& config_path, bool quiet) {
  if (!fs::is_regular_file(config_path)) throw Failure{kMissingFile, "config not found: " + config_path.string()};
  const RunConfig cfg = load_run_config(config_path);
  if (command == "synth") return cmd_synth(cfg, quiet);
  if (command == "train") return cmd_train(cfg, quiet);
  if (command == "analyze") return cmd_analyze(cfg, true, quiet);
  return cmd_analyze(cfg, false, quiet);
}

int exit_code_for(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kIo: return kOutputFailed;
    case FormatErrorKind::kDimensionMismatch: return kDimMismatch;
    default: return kCorruptFile;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dictionary-learning mixture-of-experts probe for stratified embedding spaces"};
  app.require_subcommand(1);

  fs::path config;
  bool quiet = false;
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"synth", "Generate a synthetic stratified dataset and its ground-truth sidecar"},
      {"train", "Train a model on the configured dataset; writes checkpoint and history"},
      {"analyze", "Build the stratum report with CSV tables and SVG plots"},
      {"report", "Build the stratum report without plots"},
  };
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("-c,--config", config, "Run configuration (JSON)")->required();
    sub->add_flag("-q,--quiet", quiet, "Only print errors and the final loss");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kBadConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, config, quiet);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kBadConfig;
  } catch (const FormatError& e) {
    std::cerr << "file error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const DimensionError& e) {
    std::cerr << "dimension mismatch: " << e.what() << "\n";
    return kDimMismatch;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "filesystem error: " << e.what() << "\n";
    return kOutputFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
}
