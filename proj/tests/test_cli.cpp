#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "csv_table.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(AFM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override { dir_ = scratch_dir(std::string("cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name()); }
  void TearDown() override { fs::remove_all(dir_); }
  std::string out() const { return "--out-dir " + dir_.string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpAndVersion) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("--version"), 0);
  EXPECT_EQ(run("simulate --help"), 0);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("simulate --steps nine"), 2);
  EXPECT_EQ(run(out() + " simulate --sigma0 1 --sigma1 3"), 2);
  EXPECT_EQ(run(out() + " --set lambda=-1 simulate"), 2);
  EXPECT_EQ(run(out() + " analyze"), 2);
}

TEST_F(Cli, SimulateIsDeterministic) {
  ASSERT_EQ(run(out() + " simulate --steps 8 --seed 5 -o a.afmt"), 0);
  ASSERT_EQ(run(out() + " simulate --steps 8 --seed 5 -o b.afmt"), 0);
  EXPECT_EQ(slurp(dir_ / "a.afmt"), slurp(dir_ / "b.afmt"));
  EXPECT_TRUE(fs::exists(dir_ / "simulate_manifest.json"));
}

TEST_F(Cli, FullPipeline) {
  ASSERT_EQ(run(out() + " simulate --steps 10 -o fixture.afmt"), 0);
  const std::string fixture = (dir_ / "fixture.afmt").string();
  {
    std::ofstream cfg(dir_ / "afm.cfg");
    cfg << "lambda = 0.3\nentropy_gating = true\n";
  }
  ASSERT_EQ(run(out() + " --config " + (dir_ / "afm.cfg").string() + " edit " + fixture + " -o edited.afmt"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "schedule.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "edit_manifest.json"));
  ASSERT_EQ(run(out() + " analyze " + fixture + " --rc 0.2 --rc 0.3 --heatmap"), 0);
  EXPECT_EQ(read_csv(dir_ / "hf_series.csv").header.back(), "rho_0.30");
  EXPECT_TRUE(fs::exists(dir_ / "timefreq_encoder.pgm"));
  ASSERT_EQ(run(out() + " --threads 2 compare --ref " + fixture + " --target " + (dir_ / "edited.afmt").string()), 0);
  EXPECT_TRUE(fs::exists(dir_ / "compare_summary.json"));
  EXPECT_TRUE(fs::exists(dir_ / "log_ratio_encoder.csv"));
}

TEST_F(Cli, DataErrors) {
  {
    std::ofstream bad(dir_ / "bad.afmt", std::ios::binary);
    bad << "NOPE and some more bytes";
  }
  EXPECT_EQ(run(out() + " analyze " + (dir_ / "bad.afmt").string()), 3);
  EXPECT_EQ(run(out() + " analyze " + (dir_ / "missing.afmt").string()), 3);
  ASSERT_EQ(run(out() + " simulate --steps 4 -o f.afmt"), 0);
  const std::string full = slurp(dir_ / "f.afmt");
  {
    std::ofstream cut(dir_ / "cut.afmt", std::ios::binary);
    cut << full.substr(0, full.size() / 2);
  }
  EXPECT_EQ(run(out() + " edit " + (dir_ / "cut.afmt").string()), 3);
  {
    std::ofstream cfg(dir_ / "bad.cfg");
    cfg << "lambda = shiny\n";
  }
  EXPECT_EQ(run(out() + " --config " + (dir_ / "bad.cfg").string() + " simulate"), 3);
}

TEST_F(Cli, FlatFixtureAnalyzesCleanly) {
  // uniform attention gives a constant map: all energy at DC
  ASSERT_EQ(run(out() + " simulate --steps 4 --contrast 0 --noise 0 -o flat.afmt"), 0);
  EXPECT_EQ(run(out() + " analyze " + (dir_ / "flat.afmt").string()), 0);
  EXPECT_EQ(read_csv(dir_ / "hf_series.csv").number(0, "rho"), 0.0);
}
