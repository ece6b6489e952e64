#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stratmoe/data.hpp"
#include "stratmoe/model.hpp"
#include "stratmoe/training.hpp"

namespace stratmoe {

/// Malformed or inconsistent run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunPaths {
  std::filesystem::path dataset;
  std::filesystem::path ground_truth;
  std::filesystem::path checkpoint;
  std::filesystem::path history;
  std::filesystem::path report_dir;
};

/// Everything one reproducible run needs. Parsed from a JSON document;
/// `//` and `/* */` comments are allowed and unknown keys are rejected.
struct RunConfig {
  std::string run_name = "run";
  std::uint64_t seed = 0;
  RunPaths paths;
  std::optional<SynthSpec> synth;
  /// embed_dim is taken from the dataset at train time.
  ModelDims model;
  std::vector<std::size_t> sparsity_menu{8, 12, 16, 20, 24, 28, 32};
  TrainConfig train;
  double variance_fraction = 0.75;
};

/// Relative paths are resolved against `base_dir`.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Checks value ranges; throws ConfigError.
void validate(const RunConfig& config);

}  // namespace stratmoe
