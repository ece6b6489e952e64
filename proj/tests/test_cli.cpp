// Runs the stratmoe binary end to end on small temporary configs.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stratmoe/data.hpp"
#include "stratmoe/model.hpp"
#include "stratmoe/report_io.hpp"

using namespace stratmoe;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("stratmoe_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  // Small synthetic run whose outputs all live under `tag`/.
  fs::path small_config(const std::string& name, const std::string& tag, int epochs = 3,
                        const std::string& ambient = "12") {
    return write_config(name, R"({
      "run_name": "cli", "seed": 5,
      "paths": {"dataset": ")" + tag + R"(/data.strd", "ground_truth": ")" + tag + R"(/truth.csv",
                "checkpoint": ")" + tag + R"(/model.sprb", "history": ")" + tag + R"(/history.csv",
                "report_dir": ")" + tag + R"(/report"},
      "synth": {"ambient_dim": )" + ambient + R"(, "noise_sigma": 0.01,
                "strata": [{"dim": 2, "samples": 20}, {"dim": 4, "samples": 20}]},
      "model": {"atoms": 6, "query_dim": 4, "strata": 2, "lista_steps": 2, "sparsity_menu": [2, 4, 6]},
      "train": {"epochs": )" + std::to_string(epochs) + R"(, "batch_size": 8, "learning_rate": 0.01}})");
  }

  Outcome run(const std::string& args) {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string("'") + STRATMOE_CLI + "' " + args + " >'" + out.string() + "' 2>'" +
                            err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  Outcome cmd(const char* sub, const fs::path& config) {
    return run(std::string(sub) + " -q -c '" + config.string() + "'");
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SynthIsLoadableAndByteIdenticalOnRepeat) {
  const auto a = small_config("a.json", "a"), b = small_config("b.json", "b");
  ASSERT_EQ(cmd("synth", a).code, 0);
  ASSERT_EQ(cmd("synth", b).code, 0);
  EXPECT_EQ(slurp(dir_ / "a/data.strd"), slurp(dir_ / "b/data.strd"));
  EXPECT_EQ(slurp(dir_ / "a/truth.csv"), slurp(dir_ / "b/truth.csv"));
  const auto ds = load_dataset(dir_ / "a/data.strd");
  EXPECT_EQ(ds.size(), 40u);
  EXPECT_EQ(ds.dim(), 12u);
  EXPECT_EQ(parse_ground_truth_csv(slurp(dir_ / "a/truth.csv")).size(), 40u);
}

TEST_F(Cli, SynthStratumWiderThanAmbientExitsTwoNamingIt) {
  const auto cfg = write_config("bad.json", R"({"paths": {"dataset": "d.strd", "ground_truth": "t.csv"},
    "synth": {"ambient_dim": 6, "strata": [{"dim": 2, "samples": 10}, {"dim": 7, "samples": 10}]}})");
  const auto r = cmd("synth", cfg);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("stratum 1"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "d.strd"));
}

TEST_F(Cli, ConfigProblemsExitTwo) {
  EXPECT_EQ(cmd("synth", write_config("unknown.json", R"({"epochs": 3})")).code, 2);
  EXPECT_EQ(cmd("synth", write_config("nosynth.json", R"({"paths": {"dataset": "d"}})")).code, 2);
  EXPECT_EQ(cmd("train", write_config("nopaths.json", "{}")).code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train").code, 2);
  EXPECT_EQ(run("frobnicate -c x").code, 2);
}

TEST_F(Cli, MissingInputsExitThree) {
  EXPECT_EQ(cmd("synth", dir_ / "nope.json").code, 3);
  const auto cfg = small_config("c.json", "c");
  const auto r = cmd("train", cfg);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("dataset"), std::string::npos);
  ASSERT_EQ(cmd("synth", cfg).code, 0);
  EXPECT_EQ(cmd("analyze", cfg).code, 3);
}

TEST_F(Cli, CheckpointDatasetMismatchExitsFourNamingBothDims) {
  const auto narrow = small_config("n.json", "n", 1, "12");
  ASSERT_EQ(cmd("synth", narrow).code, 0);
  ASSERT_EQ(cmd("train", narrow).code, 0);
  const auto wide = small_config("w.json", "w", 1, "14");
  ASSERT_EQ(cmd("synth", wide).code, 0);
  fs::copy_file(dir_ / "n/model.sprb", dir_ / "w/model.sprb");
  const auto r = cmd("analyze", wide);
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("12"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("14"), std::string::npos) << r.err;
}

TEST_F(Cli, CorruptFilesExitFive) {
  const auto cfg = small_config("x.json", "x", 1);
  ASSERT_EQ(cmd("synth", cfg).code, 0);
  auto bytes = slurp(dir_ / "x/data.strd");
  bytes[0] = 'Z';
  std::ofstream(dir_ / "x/data.strd", std::ios::binary) << bytes;
  const auto r = cmd("train", cfg);
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.err.find("bad magic"), std::string::npos) << r.err;

  ASSERT_EQ(cmd("synth", cfg).code, 0);
  ASSERT_EQ(cmd("train", cfg).code, 0);
  const auto ckpt = slurp(dir_ / "x/model.sprb");
  std::ofstream(dir_ / "x/model.sprb", std::ios::binary) << ckpt.substr(0, ckpt.size() - 3);
  EXPECT_EQ(cmd("report", cfg).code, 5);
}

TEST_F(Cli, UnwritableOutputExitsSix) {
  const auto cfg = small_config("o.json", "o", 1);
  ASSERT_EQ(cmd("synth", cfg).code, 0);
  ASSERT_EQ(cmd("train", cfg).code, 0);
  std::ofstream(dir_ / "o/report") << "a file where a directory should be";
  EXPECT_EQ(cmd("report", cfg).code, 6);
}

TEST_F(Cli, ZeroEpochsCheckpointEqualsInitialization) {
  const auto cfg = small_config("z.json", "z", 0);
  ASSERT_EQ(cmd("synth", cfg).code, 0);
  const auto r = cmd("train", cfg);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("final loss ", 0), 0u);
  const auto init = init_model(ModelDims{12, 6, 4, 3, 2, 2}, {2, 4, 6}, 5);
  EXPECT_EQ(load_checkpoint(dir_ / "z/model.sprb"), init);
  EXPECT_EQ(slurp(dir_ / "z/history.csv"), "epoch,loss,entropy,seconds\n");
}

TEST_F(Cli, PipelineIsDeterministicAndReportValidates) {
  const auto a = small_config("a.json", "a", 4), b = small_config("b.json", "b", 4);
  for (const auto& cfg : {a, b}) {
    ASSERT_EQ(cmd("synth", cfg).code, 0);
    const auto t = cmd("train", cfg);
    ASSERT_EQ(t.code, 0) << t.err;
    const auto r = run("analyze -c '" + cfg.string() + "'");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("ARI vs ground truth"), std::string::npos);
  }
  EXPECT_EQ(slurp(dir_ / "a/model.sprb"), slurp(dir_ / "b/model.sprb"));
  for (const auto& entry : fs::directory_iterator(dir_ / "a/report")) {
    const auto name = entry.path().filename();
    EXPECT_EQ(slurp(entry.path()), slurp(dir_ / "b/report" / name)) << name;
  }
  EXPECT_TRUE(fs::exists(dir_ / "a/report/scatter.svg"));
  EXPECT_TRUE(fs::exists(dir_ / "a/report/mixture_heatmap.svg"));
  const auto doc = nlohmann::json::parse(slurp(dir_ / "a/report/report.json"));
  EXPECT_TRUE(report_schema_problems(doc).empty());
  EXPECT_EQ(doc["sample_count"], 40);

  // Rerunning over the same outputs reproduces them byte for byte.
  const auto before = slurp(dir_ / "a/report/scatter.svg");
  const auto ckpt = slurp(dir_ / "a/model.sprb");
  ASSERT_EQ(cmd("train", a).code, 0);
  ASSERT_EQ(cmd("analyze", a).code, 0);
  EXPECT_EQ(slurp(dir_ / "a/model.sprb"), ckpt);
  EXPECT_EQ(slurp(dir_ / "a/report/scatter.svg"), before);
}

TEST_F(Cli, ReportSubcommandSkipsPlots) {
  const auto cfg = small_config("r.json", "r", 1);
  ASSERT_EQ(cmd("synth", cfg).code, 0);
  ASSERT_EQ(cmd("train", cfg).code, 0);
  ASSERT_EQ(cmd("report", cfg).code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "r/report/report.json"));
  EXPECT_TRUE(fs::exists(dir_ / "r/report/weighted_sparsity.csv"));
  EXPECT_FALSE(fs::exists(dir_ / "r/report/scatter.svg"));
}
