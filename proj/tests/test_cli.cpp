#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "hstgnn_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(HSTGNN_CLI_PATH) + " " + args + " > " + (kWork / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string output() {
  std::ifstream f(kWork / "last.log");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string write_file(const std::string& name, const std::string& text) {
  std::ofstream(kWork / name) << text;
  return (kWork / name).string();
}

const char* kTinyConfig = R"({
  "train": {"batch_size": 64, "max_epochs": 1, "patience": 0, "window_stride": 8, "val_stride": 8, "seeds": [0]},
  "hstgnn": {"d": 4, "d_h": 4, "window": 8, "k": 3},
  "baseline": {"window": 8, "lstm_hidden": 8, "cnn_filters": 8, "node_dim": 4, "gru_hidden": 4, "k": 3}
})";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    ASSERT_EQ(run("simulate --out " + data() + " --steps 700 --warmup 100 --seed 3"), 0) << output();
    write_file("tiny.json", kTinyConfig);
  }
  static std::string data() { return (kWork / "data").string(); }
  static std::string path(const std::string& name) { return (kWork / name).string(); }
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("train --data " + data()), 1);  // --out missing
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("train --data " + data() + " --out x.json --model transformer"), 1);
  EXPECT_EQ(run("train --data " + data() + " --out x.json --test-dataset 9 --config " + path("tiny.json")), 1);
  EXPECT_NE(output().find("--test-dataset"), std::string::npos);
  EXPECT_EQ(run("ablate --variant no_everything --data " + data() + " --report r.csv"), 1);
}

TEST_F(Cli, BadConfigIsUsageError) {
  const auto cfg = write_file("bad.json", R"({"train": {"learning_rate": 0.1}})");
  EXPECT_EQ(run("train --data " + data() + " --out " + path("x.json") + " --config " + cfg), 1);
  EXPECT_NE(output().find("learning_rate"), std::string::npos);
  const auto broken = write_file("broken.json", "{ not json");
  EXPECT_EQ(run("train --data " + data() + " --out " + path("x.json") + " --config " + broken), 1);
}

TEST_F(Cli, DataErrors) {
  EXPECT_EQ(run("train --data " + path("nowhere") + " --out " + path("x.json")), 2);
  fs::create_directories(kWork / "nan");
  fs::copy_file(kWork / "data" / "schema.csv", kWork / "nan" / "schema.csv", fs::copy_options::overwrite_existing);
  std::ifstream in(kWork / "data" / "data_1.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  row.replace(row.rfind(',') + 1, std::string::npos, "nan");
  std::ofstream(kWork / "nan" / "data_1.csv") << header << "\n" << row << "\n";
  EXPECT_EQ(run("train --data " + path("nan") + " --out " + path("x.json")), 2);
  EXPECT_NE(output().find("row 0"), std::string::npos);
  const auto junk = write_file("junk.json", R"({"format": "zip"})");
  EXPECT_EQ(run("evaluate --ckpt " + junk + " --data " + data() + " --report " + path("r.csv")), 2);
}

TEST_F(Cli, NumericFailure) {
  const auto cfg = write_file("explode.json", R"({"train": {"lr": 1e200, "batch_size": 64, "max_epochs": 3,
    "window_stride": 8, "patience": 0}, "hstgnn": {"d": 4, "d_h": 4, "window": 8}})");
  EXPECT_EQ(run("train --data " + data() + " --model simplified --out " + path("x.json") + " --config " + cfg), 3);
  EXPECT_NE(output().find("non-finite"), std::string::npos);
}

TEST_F(Cli, TrainEvaluateRoundTrip) {
  ASSERT_EQ(run("train --data " + data() + " --model gcn --test-dataset 2 --seed 1 --out " + path("gcn.json") +
                " --config " + path("tiny.json")),
            0)
      << output();
  ASSERT_EQ(run("evaluate --ckpt " + path("gcn.json") + " --data " + data() + " --test-dataset 2 --report " +
                path("eval/gcn.csv") + " --trace " + path("eval/trace.csv")),
            0)
      << output();
  EXPECT_NE(output().find("Test dataset 2"), std::string::npos);
  EXPECT_TRUE(fs::exists(kWork / "eval" / "gcn.csv"));
  EXPECT_TRUE(fs::exists(kWork / "eval" / "gcn_runs.csv"));
  std::ifstream t(kWork / "eval" / "trace.csv");
  std::string first;
  std::getline(t, first);
  EXPECT_EQ(first, "step,target_id,y_true,y_hat");
}

TEST_F(Cli, ExperimentAndAblation) {
  EXPECT_EQ(run("experiment --data " + data() + " --models hstgnn,lstm --splits 1 --seeds 0,1 --config " +
                path("tiny.json") + " --report " + path("exp/report.csv")),
            0)
      << output();
  std::ifstream f(kWork / "exp" / "report.csv");
  int lines = 0;
  for (std::string l; std::getline(f, l);) ++lines;
  EXPECT_EQ(lines, 1 + 2 * 6);
  EXPECT_EQ(run("ablate --variant no_flow --data " + data() + " --splits 3 --seeds 0 --config " + path("tiny.json") +
                " --report " + path("abl/no_flow.csv")),
            0)
      << output();
  EXPECT_TRUE(fs::exists(kWork / "abl" / "no_flow.txt"));
}
