#include <gtest/gtest.h>

#include <filesystem>

#include "stratmoe/run_config.hpp"

using namespace stratmoe;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text, "/base");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RunConfig, EmptyObjectGivesDefaults) {
  const auto cfg = parse_run_config("{}");
  EXPECT_EQ(cfg.run_name, "run");
  EXPECT_EQ(cfg.sparsity_menu, (std::vector<std::size_t>{8, 12, 16, 20, 24, 28, 32}));
  EXPECT_EQ(cfg.model.experts, 7u);
  EXPECT_EQ(cfg.variance_fraction, 0.75);
  EXPECT_FALSE(cfg.synth.has_value());
  EXPECT_EQ(cfg.train.learning_rate, 1e-3);
  EXPECT_EQ(cfg.train.epochs, 100u);
}

TEST(RunConfig, ParsesEverySectionWithComments) {
  const auto cfg = parse_run_config(R"({
    // line comment
    "run_name": "demo", "seed": 42,
    /* block
       comment */
    "paths": {"dataset": "data/x.strd", "ground_truth": "/abs/truth.csv", "checkpoint": "out/m.sprb",
              "history": "out/h.csv", "report_dir": "out/report"},
    "synth": {"ambient_dim": 32, "noise_sigma": 0.02,
              "strata": [{"dim": 3, "samples": 10}, {"dim": 5, "samples": 12, "offset_scale": 2, "coeff_scale": 0.5}]},
    "model": {"atoms": 12, "query_dim": 4, "strata": 2, "lista_steps": 3, "sparsity_menu": [2, 6, 12]},
    "train": {"learning_rate": 0.01, "epochs": 7, "batch_size": 8, "gradient_clip": 2.5, "beta1": 0.8,
              "beta2": 0.99, "epsilon": 1e-6, "entropy_coef": 0.1, "stratum_sharpen_coef": 0.2,
              "stratum_balance_coef": 0.3, "expert_balance_coef": 0.4},
    "analysis": {"variance_fraction": 0.9}
  })",
                                    "/base/dir");
  EXPECT_EQ(cfg.run_name, "demo");
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_EQ(cfg.train.seed, 42u);
  EXPECT_EQ(cfg.paths.dataset, fs::path("/base/dir/data/x.strd"));
  EXPECT_EQ(cfg.paths.ground_truth, fs::path("/abs/truth.csv"));
  EXPECT_EQ(cfg.paths.report_dir, fs::path("/base/dir/out/report"));
  ASSERT_TRUE(cfg.synth.has_value());
  EXPECT_EQ(cfg.synth->ambient_dim, 32u);
  EXPECT_EQ(cfg.synth->seed, 42u);
  ASSERT_EQ(cfg.synth->strata.size(), 2u);
  EXPECT_EQ(cfg.synth->strata[0].offset_scale, 5.0);
  EXPECT_EQ(cfg.synth->strata[1].offset_scale, 2.0);
  EXPECT_EQ(cfg.synth->strata[1].coeff_scale, 0.5);
  EXPECT_EQ(cfg.model.atoms, 12u);
  EXPECT_EQ(cfg.model.experts, 3u);
  EXPECT_EQ(cfg.model.lista_steps, 3u);
  EXPECT_EQ(cfg.train.batch_size, 8u);
  EXPECT_EQ(cfg.train.adam.beta1, 0.8);
  EXPECT_EQ(cfg.train.adam.epsilon, 1e-6);
  EXPECT_EQ(cfg.train.expert_balance_coef, 0.4);
  EXPECT_EQ(cfg.variance_fraction, 0.9);
}

TEST(RunConfig, OffsetScaleDefaultsToFiveTimesCoefficientScale) {
  const auto cfg = parse_run_config(
      R"({"synth": {"ambient_dim": 8, "seed": 3, "strata": [{"dim": 2, "samples": 5, "coeff_scale": 0.4}]}})");
  EXPECT_DOUBLE_EQ(cfg.synth->strata[0].offset_scale, 2.0);
  EXPECT_EQ(cfg.synth->seed, 3u);
}

TEST(RunConfig, RejectsUnknownKeysAtEveryLevel) {
  EXPECT_NE(error_of(R"({"epochs": 3})").find("unknown key 'epochs'"), std::string::npos);
  EXPECT_NE(error_of(R"({"train": {"lr": 1}})").find("train"), std::string::npos);
  EXPECT_NE(error_of(R"({"paths": {"data": "x"}})").find("paths"), std::string::npos);
  EXPECT_NE(error_of(R"({"model": {"experts": 3}})").find("model"), std::string::npos);
  EXPECT_NE(error_of(R"({"analysis": {"fraction": 0.5}})").find("analysis"), std::string::npos);
  EXPECT_NE(error_of(R"({"synth": {"ambient_dim": 8, "strata": [{"dim": 1, "samples": 3, "noise": 1}]}})")
                .find("synth.strata[0]"),
            std::string::npos);
}

TEST(RunConfig, RejectsBadValues) {
  EXPECT_NE(error_of("{").find("not valid JSON"), std::string::npos);
  EXPECT_NE(error_of("[]").find("expected an object"), std::string::npos);
  EXPECT_NE(error_of(R"({"seed": -1})").find("seed"), std::string::npos);
  EXPECT_NE(error_of(R"({"run_name": 3})").find("run_name"), std::string::npos);
  EXPECT_NE(error_of(R"({"train": {"learning_rate": "fast"}})").find("learning_rate"), std::string::npos);
  EXPECT_FALSE(error_of(R"({"train": {"learning_rate": 0}})").empty());
  EXPECT_FALSE(error_of(R"({"train": {"batch_size": 0}})").empty());
  EXPECT_FALSE(error_of(R"({"analysis": {"variance_fraction": 0}})").empty());
  EXPECT_FALSE(error_of(R"({"analysis": {"variance_fraction": 1.5}})").empty());
  EXPECT_FALSE(error_of(R"({"model": {"atoms": 0}})").empty());
  EXPECT_FALSE(error_of(R"({"model": {"sparsity_menu": []}})").empty());
  EXPECT_NE(error_of(R"({"model": {"atoms": 8, "sparsity_menu": [4, 4]}})").find("increasing"), std::string::npos);
  EXPECT_NE(error_of(R"({"model": {"atoms": 8, "sparsity_menu": [4, 9]}})").find("9"), std::string::npos);
  EXPECT_NE(error_of(R"({"synth": {"ambient_dim": 8, "strata": []}})").find("synth.strata"), std::string::npos);
}

TEST(RunConfig, SynthStratumTooWideNamesTheStratum) {
  const auto msg = error_of(R"({"synth": {"ambient_dim": 8, "strata": [{"dim": 2, "samples": 5},
                                                                      {"dim": 9, "samples": 20}]}})");
  EXPECT_NE(msg.find("stratum 1"), std::string::npos) << msg;
}

TEST(RunConfig, LoadsShippedExampleAndResolvesAgainstItsDirectory) {
  const fs::path path = fs::path(STRATMOE_SOURCE_DIR) / "configs" / "synthetic.json";
  const auto cfg = load_run_config(path);
  EXPECT_TRUE(cfg.paths.dataset.is_absolute());
  EXPECT_TRUE(fs::equivalent(cfg.paths.dataset.parent_path().parent_path().parent_path(), STRATMOE_SOURCE_DIR));
  ASSERT_TRUE(cfg.synth.has_value());
  EXPECT_EQ(cfg.synth->ambient_dim, 64u);
  EXPECT_EQ(cfg.sparsity_menu, (std::vector<std::size_t>{4, 8, 12, 16}));
  EXPECT_THROW(load_run_config(path.parent_path() / "missing.json"), ConfigError);
}
