#include "stratmoe/run_config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

namespace stratmoe {

namespace {

using json = nlohmann::json;

void allow_only(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : keys) known = known || item.key() == k;
    if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, const std::string& where, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) throw ConfigError(where + "." + key + ": expected a nonnegative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError(where + "." + key + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError(where + "." + key + ": expected a string");
    }
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

void read_path(const json& obj, const char* key, const std::filesystem::path& base, std::filesystem::path& out) {
  std::string raw;
  read(obj, key, "paths", raw);
  if (raw.empty()) return;
  std::filesystem::path p(raw);
  out = p.is_relative() && !base.empty() ? base / p : p;
}

std::vector<std::size_t> read_menu(const json& value, const std::string& where) {
  if (!value.is_array()) throw ConfigError(where + ": expected an array of counts");
  std::vector<std::size_t> out;
  for (const auto& v : value) {
    if (!v.is_number_unsigned()) throw ConfigError(where + ": entries must be nonnegative integers");
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

SynthSpec read_synth(const json& obj, std::uint64_t default_seed) {
  allow_only(obj, "synth", {"ambient_dim", "noise_sigma", "seed", "strata"});
  SynthSpec spec;
  spec.seed = default_seed;
  read(obj, "ambient_dim", "synth", spec.ambient_dim);
  read(obj, "noise_sigma", "synth", spec.noise_sigma);
  read(obj, "seed", "synth", spec.seed);
  auto it = obj.find("strata");
  if (it == obj.end() || !it->is_array() || it->empty()) throw ConfigError("synth.strata: expected a nonempty array");
  for (std::size_t i = 0; i < it->size(); ++i) {
    const auto& s = (*it)[i];
    const std::string where = "synth.strata[" + std::to_string(i) + "]";
    allow_only(s, where, {"dim", "samples", "offset_scale", "coeff_scale"});
    StratumSpec st;
    read(s, "dim", where, st.dim);
    read(s, "samples", where, st.samples);
    read(s, "coeff_scale", where, st.coeff_scale);
    st.offset_scale = 5.0 * st.coeff_scale;
    read(s, "offset_scale", where, st.offset_scale);
    spec.strata.push_back(st);
  }
  return spec;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  allow_only(root, "config", {"run_name", "seed", "paths", "synth", "model", "train", "analysis"});

  RunConfig cfg;
  read(root, "run_name", "config", cfg.run_name);
  read(root, "seed", "config", cfg.seed);
  cfg.train.seed = cfg.seed;

  if (auto it = root.find("paths"); it != root.end()) {
    allow_only(*it, "paths", {"dataset", "ground_truth", "checkpoint", "history", "report_dir"});
    read_path(*it, "dataset", base_dir, cfg.paths.dataset);
    read_path(*it, "ground_truth", base_dir, cfg.paths.ground_truth);
    read_path(*it, "checkpoint", base_dir, cfg.paths.checkpoint);
    read_path(*it, "history", base_dir, cfg.paths.history);
    read_path(*it, "report_dir", base_dir, cfg.paths.report_dir);
  }

  if (auto it = root.find("synth"); it != root.end()) cfg.synth = read_synth(*it, cfg.seed);

  if (auto it = root.find("model"); it != root.end()) {
    allow_only(*it, "model", {"atoms", "query_dim", "strata", "lista_steps", "sparsity_menu"});
    read(*it, "atoms", "model", cfg.model.atoms);
    read(*it, "query_dim", "model", cfg.model.query_dim);
    read(*it, "strata", "model", cfg.model.strata);
    read(*it, "lista_steps", "model", cfg.model.lista_steps);
    if (auto m = it->find("sparsity_menu"); m != it->end()) cfg.sparsity_menu = read_menu(*m, "model.sparsity_menu");
  }
  cfg.model.experts = cfg.sparsity_menu.size();

  if (auto it = root.find("train"); it != root.end()) {
    allow_only(*it, "train",
               {"learning_rate", "epochs", "batch_size", "gradient_clip", "beta1", "beta2", "epsilon", "entropy_coef",
                "stratum_sharpen_coef", "stratum_balance_coef", "expert_balance_coef"});
    auto& t = cfg.train;
    read(*it, "learning_rate", "train", t.learning_rate);
    read(*it, "epochs", "train", t.epochs);
    read(*it, "batch_size", "train", t.batch_size);
    read(*it, "gradient_clip", "train", t.gradient_clip);
    read(*it, "beta1", "train", t.adam.beta1);
    read(*it, "beta2", "train", t.adam.beta2);
    read(*it, "epsilon", "train", t.adam.epsilon);
    read(*it, "entropy_coef", "train", t.entropy_coef);
    read(*it, "stratum_sharpen_coef", "train", t.stratum_sharpen_coef);
    read(*it, "stratum_balance_coef", "train", t.stratum_balance_coef);
    read(*it, "expert_balance_coef", "train", t.expert_balance_coef);
  }

  if (auto it = root.find("analysis"); it != root.end()) {
    allow_only(*it, "analysis", {"variance_fraction"});
    read(*it, "variance_fraction", "analysis", cfg.variance_fraction);
  }

  validate(cfg);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.parent_path());
}

void validate(const RunConfig& config) {
  try {
    validate(config.train);
    if (config.synth) validate(*config.synth);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(config.variance_fraction > 0.0 && config.variance_fraction <= 1.0))
    throw ConfigError("analysis.variance_fraction must lie in (0, 1]");
  if (config.model.atoms == 0 || config.model.query_dim == 0 || config.model.strata == 0)
    throw ConfigError("model.atoms, model.query_dim and model.strata must be positive");
  if (config.sparsity_menu.empty()) throw ConfigError("model.sparsity_menu is empty");
  for (std::size_t i = 0; i < config.sparsity_menu.size(); ++i) {
    const auto s = config.sparsity_menu[i];
    if (s == 0 || s > config.model.atoms)
      throw ConfigError("model.sparsity_menu: level " + std::to_string(s) + " outside [1, atoms]");
    if (i > 0 && s <= config.sparsity_menu[i - 1])
      throw ConfigError("model.sparsity_menu must be strictly increasing");
  }
}

}  // namespace stratmoe
