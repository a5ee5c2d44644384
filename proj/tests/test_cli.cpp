#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run cli(const ndtest::TempDir& dir, const std::string& args) {
  const auto err_file = dir / "stderr.txt";
  const std::string cmd =
      std::string(NDARCHIVE_CLI) + " --data-dir " + dir.path().string() + " " + args + " 2>" + err_file.string();
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err_file);
  return r;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto r = cli(dir_, "synth --groups 10 --size 32 --seed 3");
    ASSERT_EQ(r.code, 0) << r.err;
  }
  ndtest::TempDir dir_;
};

}  // namespace

TEST_F(Cli, EvaluateHashPrintsTable) {
  const auto r = cli(dir_, "evaluate --method blockmean");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("mAP@4"), std::string::npos) << r.out;
}

TEST_F(Cli, EmbedThenQuery) {
  ASSERT_EQ(cli(dir_, "embed --method phash").code, 0);
  const auto r = cli(dir_, "query --image g00000_0 --k 5");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0], "rank,image_id,distance");
  EXPECT_EQ(rows[1], "1,g00000_0,0.000000");
  EXPECT_EQ(cli(dir_, "query --image nope").code, 1);
}

TEST_F(Cli, ClusterListsGroups) {
  ASSERT_EQ(cli(dir_, "embed --method phash").code, 0);
  const auto r = cli(dir_, "cluster --threshold 0 --singletons");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(r.out);
  ASSERT_GE(rows.size(), 2u);
  EXPECT_EQ(rows[0], "cluster_id,size,members");
}

TEST_F(Cli, TrainedEvaluationIsReproducible) {
  {
    std::ofstream cfg(dir_ / "quick.conf");
    cfg << "epochs = 2\nhidden_dim = 16\nrepr_dim = 16\nproj_dim = 8\n";
  }
  const std::string args = "evaluate --method simclr --mode transductive --seed 7 --config " + (dir_ / "quick.conf").string();
  const auto a = cli(dir_, args), b = cli(dir_, args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("seed"), std::string::npos);
}

TEST_F(Cli, TrainWritesArtifactsAndEmbedUsesThem) {
  {
    std::ofstream cfg(dir_ / "quick.conf");
    cfg << "epochs = 1\nhidden_dim = 16\nrepr_dim = 16\nproj_dim = 8\n";
  }
  const auto t = cli(dir_, "train --mode transductive --config " + (dir_ / "quick.conf").string());
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_TRUE(std::filesystem::exists(dir_ / "model/checkpoint.ndck"));
  EXPECT_EQ(cli(dir_, "embed --method simclr").code, 0);
  EXPECT_EQ(cli(dir_, "query --image g00001_1 --k 2").code, 0);
}

TEST_F(Cli, UsageErrorsExitOne) {
  const auto r = cli(dir_, "evaluate --bogus");
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(cli(dir_, "evaluate --method sift").code, 1);
  EXPECT_EQ(cli(dir_, "--help").code, 0);
}

TEST_F(Cli, MissingIndexFails) {
  const auto r = cli(dir_, "query --image g00000_0 --index " + (dir_ / "absent.ndix").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("absent.ndix"), std::string::npos) << r.err;
}

TEST_F(Cli, ServeRejectsBadBind) {
  ASSERT_EQ(cli(dir_, "embed --method phash").code, 0);
  EXPECT_EQ(cli(dir_, "serve --bind not-a-port:x").code, 1);
  EXPECT_EQ(cli(dir_, "serve --bind 203.0.113.7:1").code, 2);  // address not on this host
}
