#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "c2fnas/arch_builder.hpp"
#include "c2fnas/evaluation.hpp"
#include "c2fnas/run_config.hpp"

namespace fs = std::filesystem;
using namespace c2fnas;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(C2FNAS_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("c2fnas_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

std::size_t count_events(const fs::path& journal, const std::string& event) {
  std::size_t n = 0;
  for (const auto& l : lines(journal)) n += nlohmann::json::parse(l).at("event") == event;
  return n;
}

}  // namespace

TEST_F(CliTest, EnumerateDefaults) {
  const auto r = cli("enumerate --list " + path("codes.txt"));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("pruned=924"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("full=28657"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("op_space=531441"), std::string::npos) << r.out;
  EXPECT_EQ(lines(path("codes.txt")).size(), 924u);
}

TEST_F(CliTest, EnumerateSmallestSpace) {
  const auto r = cli("enumerate --cells 2 --downs 1 --ups 1");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("pruned=1\n"), std::string::npos) << r.out;
}

TEST_F(CliTest, BadConfigExitsTwo) {
  EXPECT_EQ(cli("enumerate --cells 4 --downs 3 --ups 3").code, 2);
  EXPECT_EQ(cli("enumerate --no.such.key 3").code, 2);
  EXPECT_EQ(cli("enumerate --config " + path("missing.json")).code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
}

TEST_F(CliTest, CoarseWritesOutputs) {
  const auto r = cli("coarse --seed 7 --out " + path("run"));
  ASSERT_EQ(r.code, 0) << r.out;
  const fs::path run = path("run");
  EXPECT_EQ(count_events(run / "journal.jsonl", "complete"), 50u);
  EXPECT_EQ(count_events(run / "journal.jsonl", "dispatch"), 50u);
  const auto header = nlohmann::json::parse(lines(run / "journal.jsonl").front());
  EXPECT_EQ(header["evolution"]["seed"], 7);
  EXPECT_EQ(header["clustering"]["seed"], 7);

  const auto csv = lines(run / "cluster_proportions.csv");
  ASSERT_EQ(csv.size(), 51u);
  EXPECT_EQ(csv.front(), "eval_index,cluster_0,cluster_1,cluster_2,cluster_3,cluster_4,cluster_5,cluster_6,cluster_7");
  const auto best = nlohmann::json::parse(slurp(run / "best_topology.json"));
  EXPECT_EQ(best["code"].size(), 12u);
  EXPECT_TRUE(validate_code(best["code"].get<TopologyCode>(), SpaceSpec{}).valid);

  const auto rep = cli("report --out " + run.string());
  EXPECT_EQ(rep.code, 0) << rep.out;
  EXPECT_NE(rep.out.find("best topology"), std::string::npos) << rep.out;
  EXPECT_NE(rep.out.find("cluster_7"), std::string::npos) << rep.out;
}

TEST_F(CliTest, CoarseRerunIsByteIdentical) {
  ASSERT_EQ(cli("coarse --seed 7 --out " + path("a")).code, 0);
  ASSERT_EQ(cli("coarse --seed 7 --out " + path("b")).code, 0);
  for (const char* f : {"journal.jsonl", "cluster_proportions.csv", "best_topology.json"})
    EXPECT_EQ(slurp(fs::path(path("a")) / f), slurp(fs::path(path("b")) / f)) << f;
}

TEST_F(CliTest, CoarseResumeMatchesUninterruptedRun) {
  ASSERT_EQ(cli("coarse --seed 7 --out " + path("full")).code, 0);
  ASSERT_EQ(cli("coarse --seed 7 --out " + path("part") + " --stop-after 20").code, 0);
  const fs::path part = path("part");
  EXPECT_EQ(count_events(part / "journal.jsonl", "complete"), 20u);
  const std::string prefix = slurp(part / "journal.jsonl");
  // simulate a crash mid-write
  {
    std::ofstream out(part / "journal.jsonl", std::ios::app | std::ios::binary);
    out << "{\"seq\":40,\"event\":\"disp";
  }
  const auto r = cli("coarse --resume " + part.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string resumed = slurp(part / "journal.jsonl");
  EXPECT_EQ(resumed.substr(0, prefix.size()), prefix);
  EXPECT_EQ(resumed, slurp(fs::path(path("full")) / "journal.jsonl"));
  EXPECT_EQ(count_events(part / "journal.jsonl", "complete"), 50u);
}

TEST_F(CliTest, CoarseThroughExternalEvaluator) {
  const std::string mock = std::string(MOCK_EVALUATOR_PATH) + " --mode surrogate";
  const auto ext = cli("coarse --seed 3 --evolution.budget 20 --out " + path("ext") + " --evaluator '" + mock + "'");
  ASSERT_EQ(ext.code, 0) << ext.out;
  const auto sur = cli("coarse --seed 3 --evolution.budget 20 --out " + path("sur"));
  ASSERT_EQ(sur.code, 0) << sur.out;
  EXPECT_EQ(slurp(fs::path(path("ext")) / "journal.jsonl"), slurp(fs::path(path("sur")) / "journal.jsonl"));
  EXPECT_TRUE(fs::exists(fs::path(path("ext")) / "cache" / "results.jsonl"));
}

TEST_F(CliTest, CoarseEvaluatorFailureExitsThree) {
  const std::string mock = std::string(MOCK_EVALUATOR_PATH) + " --mode range";
  const auto r = cli("coarse --seed 3 --out " + path("bad") + " --evaluator '" + mock + "'");
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_TRUE(fs::exists(fs::path(path("bad")) / "journal.jsonl"));
}

TEST_F(CliTest, FineRanksTwoThousandCandidates) {
  ASSERT_EQ(cli("coarse --seed 7 --out " + path("run")).code, 0);
  const fs::path run = path("run");
  const auto r = cli("fine --topology " + (run / "best_topology.json").string() + " --iterations 2000 --out " +
                     run.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(lines(run / "ranked.jsonl").size(), 2000u);
  EXPECT_EQ(lines(run / "supernet_paths.jsonl").size(), 2000u);
  const auto best = nlohmann::json::parse(slurp(run / "best_ops.json"));
  EXPECT_EQ(best["ops"].size(), 12u);
  EXPECT_EQ(nlohmann::json::parse(lines(run / "ranked.jsonl").front())["score"], best["score"]);
}

TEST_F(CliTest, FineTwoCellsEqualsExhaustiveSort) {
  std::ofstream(path("topo.json")) << "[1,0]\n";
  const auto r = cli("fine --cells 2 --downs 1 --ups 1 --candidates 9 --iterations 10 --topology " +
                     path("topo.json") + " --out " + path("fine"));
  ASSERT_EQ(r.code, 0) << r.out;
  const SpaceSpec space = SpaceSpec::symmetric(2, 1, 1);
  const auto spec = default_surrogate(space);
  std::vector<double> expected;
  for (std::uint64_t v = 0; v < 9; ++v)
    expected.push_back(surrogate_evaluate(spec, space, TopologyCode{{1, 0}}, OpConfig::from_index(v, 2)).score);
  std::sort(expected.rbegin(), expected.rend());
  const auto ranked = lines(fs::path(path("fine")) / "ranked.jsonl");
  ASSERT_EQ(ranked.size(), 9u);
  for (std::size_t i = 0; i < 9; ++i) {
    const auto j = nlohmann::json::parse(ranked[i]);
    EXPECT_EQ(j["rank"], i + 1);
    EXPECT_EQ(j["score"].get<double>(), expected[i]);
  }
}

TEST_F(CliTest, FineMissingTopologyNamesPath) {
  const auto r = cli("fine --topology " + path("nope.json") + " --out " + path("x"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find(path("nope.json")), std::string::npos) << r.out;
}

TEST_F(CliTest, ExportReportsPositiveCosts) {
  const std::string code = "'[1,2,3,3,3,3,3,3,2,1,0,0]'";
  const auto r = cli("export --format json --code " + code + " --out " + path("e1"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto costs = nlohmann::json::parse(slurp(fs::path(path("e1")) / "costs.json"));
  EXPECT_GT(costs["params"].get<std::uint64_t>(), 0u);
  EXPECT_GT(costs["flops"].get<std::uint64_t>(), 0u);
  const auto arch = nlohmann::json::parse(slurp(fs::path(path("e1")) / "architecture.json"));
  EXPECT_FALSE(arch["layers"].empty());
  EXPECT_FALSE(arch["edges"].empty());
  EXPECT_TRUE(fs::exists(fs::path(path("e1")) / "architecture.dot"));

  ASSERT_EQ(cli("export --code " + code + " --multiplier 0.25 --out " + path("e2")).code, 0);
  const auto quarter = nlohmann::json::parse(slurp(fs::path(path("e2")) / "costs.json"));
  const double ratio = quarter["params"].get<double>() / costs["params"].get<double>();
  EXPECT_NEAR(ratio, 1.0 / 16.0, 0.1 / 16.0);
}

TEST_F(CliTest, ExportInvalidOpsIsValidationError) {
  const auto r = cli("export --code '[1,2,3,3,3,3,3,3,2,1,0,0]' --ops '[\"3d\",\"3d\"]' --out " + path("e"));
  EXPECT_EQ(r.code, 4) << r.out;
  EXPECT_EQ(cli("export --code '[1,2,3,3,3,3,3,3,2,1,0,0]' --ops '[\"5d\"]' --out " + path("e")).code, 4);
  EXPECT_EQ(cli("export --code '[0,0,0,0,0,0,0,0,0,0,0,0]' --out " + path("e")).code, 4);
}

TEST_F(CliTest, ScaleDefaultGrid) {
  const auto r = cli("scale --code '[1,2,3,3,3,3,3,3,2,1,0,0]' --out " + path("s"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto rows = lines(fs::path(path("s")) / "scaling.csv");
  ASSERT_EQ(rows.size(), 9u);
  EXPECT_EQ(rows[0], "multiplier,params,flops,score,error");
  double prev_m = 0;
  unsigned long long prev_p = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::stringstream ss(rows[i]);
    std::string m, p;
    std::getline(ss, m, ',');
    std::getline(ss, p, ',');
    EXPECT_GT(std::stod(m), prev_m);
    EXPECT_GT(std::stoull(p), prev_p);
    prev_m = std::stod(m);
    prev_p = std::stoull(p);
  }
}
