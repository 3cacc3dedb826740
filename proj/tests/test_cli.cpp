#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "shakedrop/cli.hpp"

namespace shakedrop {
namespace {

int run(std::vector<std::string> args) {
  std::vector<const char*> argv{"shakedrop"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  EXPECT_TRUE(static_cast<bool>(f)) << path;
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<std::string> tiny_train_args(const std::string& out, const std::string& seed) {
  return {"train",
          "--set", "schedule.total_epochs=2",
          "--set", "schedule.milestones=",
          "--set", "data.synth_train_n=48",
          "--set", "data.synth_eval_n=12",
          "--set", "optimizer.batch_size=16",
          "--set", "arch.base_width=4",
          "--set", "metrics.wall_time=zero",
          "--out", out,
          "--seed", seed};
}

TEST(Cli, TrainWritesOutputsAndIsReproducible) {
  const std::string out1 = temp_dir("cli_out1");
  const std::string out2 = temp_dir("cli_out2");
  EXPECT_EQ(run(tiny_train_args(out1, "21")), 0);
  EXPECT_EQ(run(tiny_train_args(out2, "21")), 0);
  for (const char* f : {"config.resolved", "metrics.csv", "params.bin"}) {
    EXPECT_TRUE(std::filesystem::exists(out1 + "/" + f)) << f;
  }
  EXPECT_EQ(slurp(out1 + "/metrics.csv"), slurp(out2 + "/metrics.csv"));
  EXPECT_EQ(slurp(out1 + "/params.bin"), slurp(out2 + "/params.bin"));
  // metrics.csv has one row per epoch plus the header.
  const std::string csv = slurp(out1 + "/metrics.csv");
  EXPECT_EQ(static_cast<int>(std::count(csv.begin(), csv.end(), '\n')), 3);

  // A different seed changes the artifacts.
  const std::string out3 = temp_dir("cli_out3");
  EXPECT_EQ(run(tiny_train_args(out3, "22")), 0);
  EXPECT_NE(slurp(out1 + "/params.bin"), slurp(out3 + "/params.bin"));
}

TEST(Cli, ResolvedConfigReproducesTheRun) {
  const std::string out1 = temp_dir("cli_res1");
  EXPECT_EQ(run(tiny_train_args(out1, "33")), 0);
  const std::string out2 = temp_dir("cli_res2");
  EXPECT_EQ(run({"train", "--config", out1 + "/config.resolved", "--out", out2}), 0);
  EXPECT_EQ(slurp(out1 + "/metrics.csv"), slurp(out2 + "/metrics.csv"));
  EXPECT_EQ(slurp(out1 + "/params.bin"), slurp(out2 + "/params.bin"));
}

TEST(Cli, EvalReadsBackParams) {
  const std::string out = temp_dir("cli_eval");
  ASSERT_EQ(run(tiny_train_args(out, "44")), 0);
  auto args = tiny_train_args(out, "44");
  args[0] = "eval";
  EXPECT_EQ(run(args), 0);
}

TEST(Cli, ValidationFailuresExitTwo) {
  EXPECT_EQ(run({"train", "--set", "reg.p_l=1.3"}), 2);
  EXPECT_EQ(run({"train", "--set", "bogus.key=1"}), 2);
  EXPECT_EQ(run({"train", "--set", "no-equals"}), 2);
  EXPECT_EQ(run({"eval", "--set", "eval.params=/nonexistent/params.bin"}), 1);
}

TEST(Cli, SweepGridRowsAndEmptyGrid) {
  const std::string out = temp_dir("cli_sweep");
  auto args = tiny_train_args(out, "55");
  args[0] = "sweep";
  args.push_back("--set");
  args.push_back("sweep.p_l=0.5,0.9");
  args.push_back("--set");
  args.push_back("sweep.depths=8,20");
  args.push_back("--set");
  args.push_back("reg.preset=shakedrop-original");
  EXPECT_EQ(run(args), 0);
  const std::string csv = slurp(out + "/sweep.csv");
  EXPECT_EQ(static_cast<int>(std::count(csv.begin(), csv.end(), '\n')), 5);  // header + 4 cells
  EXPECT_EQ(csv.rfind("depth,p_L,final_eval_top1\n", 0), 0u);

  // Rerunning the identical sweep reproduces the summary bitwise.
  EXPECT_EQ(run(args), 0);
  EXPECT_EQ(slurp(out + "/sweep.csv"), csv);

  const std::string out_empty = temp_dir("cli_sweep_empty");
  auto empty_args = tiny_train_args(out_empty, "55");
  empty_args[0] = "sweep";
  EXPECT_EQ(run(empty_args), 0);
  EXPECT_EQ(slurp(out_empty + "/sweep.csv"), "depth,p_L,final_eval_top1\n");
}

TEST(Cli, GradcheckAndExpectationCommands) {
  EXPECT_EQ(run({"gradcheck", "--seed", "123"}), 0);
  EXPECT_EQ(run({"expectation-test", "--set", "reg.kind=randomdrop", "--set",
                 "expectation.draws=5000", "--seed", "9"}),
            0);
  EXPECT_EQ(run({"expectation-test", "--set", "reg.kind=none"}), 2);
  EXPECT_EQ(run({"expectation-test", "--set", "reg.kind=randomdrop", "--set",
                 "expectation.draws=10"}),
            2);
}

TEST(Cli, LogEnvValidation) {
  setenv("SHAKEDROP_LOG", "loud", 1);
  EXPECT_EQ(run({"gradcheck"}), 2);
  setenv("SHAKEDROP_LOG", "quiet", 1);
  EXPECT_EQ(run({"expectation-test", "--set", "reg.kind=randomdrop", "--set",
                 "expectation.draws=2000"}),
            0);
  unsetenv("SHAKEDROP_LOG");
}

}  // namespace
}  // namespace shakedrop
