#include "dif/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::initializer_list<std::string> args) {
  std::vector<std::string> store{"dif"};
  store.insert(store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : store) argv.push_back(s.data());
  std::ostringstream out, err;
  const int code = dif::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dif_cli_" + name);
  fs::remove_all(p);
  return p;
}

const std::initializer_list<std::string> kTinyModel = {"--encoder-layers", "1", "--encoder-heads", "2", "--model-dim",
                                                       "8", "--ffn-dim", "8", "--embed-dim", "4", "--head-hidden",
                                                       "6", "--decoder-hidden", "6", "--deriv-width", "4",
                                                       "--disc-width", "5", "--batch", "8"};

Result run_with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTinyModel.begin(), kTinyModel.end());
  std::vector<std::string> store{"dif"};
  store.insert(store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : store) argv.push_back(s.data());
  std::ostringstream out, err;
  const int code = dif::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  const Result r = run({"gen", "--system", "pendulum", "--out", "x", "--bogus"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos);
  EXPECT_EQ(run({"gen", "--system", "double_pendulum", "--out", "x"}).code, 1);
  EXPECT_EQ(run({"gen", "--system", "sir", "--out", "x", "--envs", "nope"}).code, 1);
  EXPECT_EQ(run({"train", "--dataset", "x", "--out", "y", "--method", "sgd"}).code, 1);
  EXPECT_EQ(run({"train", "--dataset", "x", "--out", "y", "--iters", "many"}).code, 1);
  EXPECT_EQ(run({"bench-hypernet", "--modes", "fast"}).code, 1);
  EXPECT_EQ(run({"export-plots", "--out", "z"}).code, 1);
}

TEST(Cli, RuntimeFailuresExitTwo) {
  const Result r = run({"train", "--dataset", scratch("missing").string(), "--out", scratch("missing_run").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, GenIsByteDeterministic) {
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  for (const auto& dir : {a, b})
    ASSERT_EQ(run({"gen", "--system", "lotka_volterra", "--seed", "5", "--n-train", "8", "--n-test", "4", "--steps",
                   "20", "--out", dir.string()})
                  .code,
              0);
  for (const char* f : {"meta.txt", "train.ndrec", "test.ndrec"}) {
    EXPECT_FALSE(slurp(a / f).empty()) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const fs::path c = scratch("gen_c");
  ASSERT_EQ(run({"gen", "--system", "lotka_volterra", "--seed", "6", "--n-train", "8", "--n-test", "4", "--steps",
                 "20", "--out", c.string()})
                .code,
            0);
  EXPECT_NE(slurp(a / "train.ndrec"), slurp(c / "train.ndrec"));
}

TEST(Cli, GenTrainEvalExportPipeline) {
  const fs::path data = scratch("pipe_data"), run_a = scratch("pipe_run_a"), run_b = scratch("pipe_run_b"),
                 plots = scratch("pipe_plots");
  ASSERT_EQ(run({"gen", "--system", "sir", "--seed", "2", "--n-train", "15", "--n-test", "3", "--steps", "30", "--envs",
                 "0,1,2", "--out", data.string()})
                .code,
            0);
  for (const auto& dir : {run_a, run_b}) {
    const Result r = run_with_tiny({"train", "--dataset", data.string(), "--out", dir.string(), "--method", "dif",
                                    "--iters", "4", "--seed", "9", "--lambda-c", "0.5", "--ckpt-every", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(run_a / "train.log"), slurp(run_b / "train.log"));
  EXPECT_TRUE(fs::exists(run_a / "ckpt_2.ckpt"));
  EXPECT_EQ(slurp(run_a / "model.ckpt"), slurp(run_b / "model.ckpt"));

  const Result e = run({"eval", "--ckpt", (run_a / "model.ckpt").string(), "--dataset", data.string(), "--out",
                        (run_a / "eval.txt").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("nrmse_fc_on_Xc="), std::string::npos);
  EXPECT_EQ(slurp(run_a / "eval.txt"), e.out);

  const Result x = run({"export-sr", "--ckpt", (run_a / "model.ckpt").string(), "--dataset", data.string(), "--out",
                        (run_a / "sr.csv").string()});
  ASSERT_EQ(x.code, 0) << x.err;
  EXPECT_NE(x.out.find("wrote 90 rows"), std::string::npos);

  const Result p = run({"export-plots", "--ckpt", (run_a / "model.ckpt").string(), "--dataset", data.string(),
                        "--max-samples", "2", "--out", plots.string()});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_TRUE(fs::exists(plots / "trajectories.csv"));
}

TEST(Cli, ConfigFileAndFlagOverride) {
  const fs::path data = scratch("cfg_data"), dir = scratch("cfg_run");
  ASSERT_EQ(run({"gen", "--system", "pendulum", "--seed", "1", "--n-train", "8", "--n-test", "4", "--steps", "12",
                 "--out", data.string()})
                .code,
            0);
  const fs::path cfg = fs::temp_directory_path() / "dif_cli_cfg.txt";
  std::ofstream(cfg) << "# tiny run\nmethod=vrex\niters=2\nlambda_vrex=3\n";
  const Result r = run_with_tiny({"train", "--dataset", data.string(), "--out", dir.string(), "--config", cfg.string(),
                                  "--iters", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("iter=3 "), std::string::npos);
  EXPECT_NE(slurp(dir / "model.ckpt").find("method=vrex"), std::string::npos);
  std::ofstream(cfg) << "no equals sign here\n";
  EXPECT_EQ(run({"train", "--dataset", data.string(), "--out", dir.string(), "--config", cfg.string()}).code, 2);
}

TEST(Cli, SweepAndBench) {
  const fs::path data = scratch("sw_data"), dir = scratch("sw_out");
  ASSERT_EQ(run({"gen", "--system", "pendulum", "--seed", "3", "--n-train", "8", "--n-test", "4", "--steps", "12",
                 "--out", data.string()})
                .code,
            0);
  const Result s = run_with_tiny({"sweep", "--dataset", data.string(), "--out", dir.string(), "--method", "irm",
                                  "--candidates", "2", "--iters", "2"});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_NE(s.out.find("median nrmse_f_on_Xc="), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "candidates.csv"));
  EXPECT_EQ(run({"sweep", "--dataset", data.string(), "--out", dir.string(), "--lambda-c", "1"}).code, 1);

  const Result b = run({"bench-hypernet", "--iters", "10", "--batch", "4", "--out", (dir / "bench.csv").string()});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_NE(b.out.find("reference_based"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "bench.csv"));
}
