#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tenslim/bundle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code;
  std::string output;
};

CliRun run(const std::string& args, const std::string& env = "") {
  const fs::path log = fs::temp_directory_path() / "tenslim_cli_out.txt";
  const std::string cmd = env + " " + TENSLIM_BIN + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "tenslim_cli";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write(dir_ / "teach.json", R"({"seed": 1, "distill": {"epochs": 4}, "optimizer": {"lr": 0.05}})");
    ASSERT_EQ(run("make-data --out " + p("data.tsw") + " --seed 2 --train-per-class 12 --val-per-class 6").code, 0);
    ASSERT_EQ(run("train --data " + p("data.tsw") + " --config " + p("teach.json") + " --out " + p("teacher.tsw")).code, 0);
  }
  static std::string p(const std::string& name) { return (dir_ / name).string(); }
  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, SelftestPasses) {
  const CliRun r = run("selftest");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(r.output.find("FAIL"), std::string::npos);
}

TEST_F(Cli, CompressKeepsEveryLayerWithinBudget) {
  write(dir_ / "c.json", R"({"compress": {"format": "ttm", "budget_fraction": 0.1}})");
  ASSERT_EQ(run("compress --in " + p("teacher.tsw") + " --config " + p("c.json") + " --out " + p("c.tsw")).code, 0);
  std::ifstream csv(p("c.tsw.report.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "layer_name,format,err,param_count_L,nnz_S,numel,ratio");
  int compressed = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    ASSERT_EQ(f.size(), 7u);
    if (f[1] == "dense" || f[0] == "TOTAL") continue;
    ++compressed;
    EXPECT_LE(std::stod(f[3]), 0.1 * std::stod(f[5])) << line;
  }
  EXPECT_EQ(compressed, 3);
  EXPECT_TRUE(fs::exists(p("c.tsw.config.json")));
}

TEST_F(Cli, EffectiveConfigIsEchoed) {
  write(dir_ / "e.json", R"({"seed": 5, "compress": {"format": "cp"}})");
  ASSERT_EQ(run("compress --in " + p("teacher.tsw") + " --config " + p("e.json") + " --out " + p("e.tsw")).code, 0);
  const json echoed = json::parse(slurp(p("e.tsw.config.json")));
  EXPECT_EQ(echoed["seed"], 5);
  EXPECT_EQ(echoed["compress"]["format"], "cp");
  EXPECT_EQ(echoed["distill"]["alpha"], 0.9);
  // The echo is itself a valid config.
  EXPECT_EQ(run("compress --in " + p("teacher.tsw") + " --config " + p("e.tsw.config.json") + " --out " + p("e2.tsw")).code, 0);
  EXPECT_EQ(slurp(p("e.tsw")), slurp(p("e2.tsw")));
}

TEST_F(Cli, FinetuneEndsAtTargetSparsity) {
  write(dir_ / "f.json", R"({"prune": {"target_sparsity": 0.8}, "distill": {"epochs": 50, "batch_size": 64},
                            "optimizer": {"lr": 0.01}})");
  ASSERT_EQ(run("compress --in " + p("teacher.tsw") + " --config " + p("f.json") + " --out " + p("fs.tsw")).code, 0);
  const CliRun r = run("finetune --student " + p("fs.tsw") + " --teacher " + p("teacher.tsw") + " --data " + p("data.tsw") +
                    " --config " + p("f.json") + " --out " + p("ft.tsw"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream log(p("ft.tsw.log.jsonl"));
  std::string line, last;
  int lines = 0;
  while (std::getline(log, line)) {
    last = line;
    ++lines;
  }
  EXPECT_EQ(lines, 50);
  const json rec = json::parse(last);
  // Pooled S entries of conv1, conv2 and fc1.
  const double pooled = 576 + 256 + 64 * 576;
  EXPECT_LE(std::abs(rec["sparsity"].get<double>() - 0.8) * pooled, 1.0);
  EXPECT_TRUE(fs::exists(p("ft.tsw.opt")));
  EXPECT_EQ(tenslim::read_bundle(p("ft.tsw.opt")).metadata["kind"], "optimizer_state");
}

TEST_F(Cli, IdenticalRunsGiveIdenticalBytes) {
  write(dir_ / "d.json", R"({"seed": 3, "compress": {"mode": "masking"}, "prune": {"target_sparsity": 0.5},
                            "distill": {"epochs": 2}, "optimizer": {"lr": 0.01}})");
  for (const char* tag : {"a", "b"}) {
    const std::string env = std::string("TENSLIM_THREADS=") + (tag[0] == 'a' ? "1" : "4");
    ASSERT_EQ(run("compress --in " + p("teacher.tsw") + " --config " + p("d.json") + " --out " + p(std::string("d") + tag + ".tsw"), env).code, 0);
    ASSERT_EQ(run("finetune --student " + p(std::string("d") + tag + ".tsw") + " --teacher " + p("teacher.tsw") + " --data " +
                  p("data.tsw") + " --config " + p("d.json") + " --out " + p(std::string("dt") + tag + ".tsw"), env).code, 0);
  }
  EXPECT_EQ(slurp(p("da.tsw")), slurp(p("db.tsw")));
  EXPECT_EQ(slurp(p("dta.tsw")), slurp(p("dtb.tsw")));
  EXPECT_EQ(slurp(p("dta.tsw.log.jsonl")), slurp(p("dtb.tsw.log.jsonl")));
}

TEST_F(Cli, AnalyzeUncompressedGivesUnitRatios) {
  const CliRun r = run("analyze --in " + p("teacher.tsw") + " --out " + p("an") + " --svg");
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream csv(p("an/layers.csv"));
  std::string line;
  std::getline(csv, line);
  int rows = 0;
  while (std::getline(csv, line)) {
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "1") << line;
    ++rows;
  }
  EXPECT_EQ(rows, 5);
  EXPECT_TRUE(fs::exists(p("an/errors.svg")));
  EXPECT_TRUE(fs::exists(p("an/fc1.hist.svg")));
  EXPECT_TRUE(fs::exists(p("an/fc1.residual.csv")));
}

TEST_F(Cli, AnalyzeAcceptsPlainWeightBundles) {
  tenslim::WeightBundle b;
  std::mt19937_64 rng(1);
  b.add("layer.pw", tenslim::Role::Dense, tenslim::random_normal<double>(tenslim::Shape{32, 32}, rng));
  b.add("bias", tenslim::Role::Dense, tenslim::random_normal<double>(tenslim::Shape{32}, rng));
  tenslim::write_bundle(b, p("plain.tsw"));
  const CliRun r = run("analyze --in " + p("plain.tsw") + " --out " + p("plain") + " --format cp");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("layer.pw,dense,"), std::string::npos);
  EXPECT_EQ(r.output.find("bias"), std::string::npos);
}

TEST_F(Cli, Baselines) {
  write(dir_ / "b.json", R"({"distill": {"epochs": 2}, "optimizer": {"lr": 0.01}})");
  EXPECT_EQ(run("prune-only --in " + p("teacher.tsw") + " --data " + p("data.tsw") + " --config " + p("b.json") +
                " --sparsity 0.7 --out " + p("po.tsw")).code, 0);
  EXPECT_EQ(run("lowrank-only --in " + p("teacher.tsw") + " --config " + p("b.json") + " --out " + p("lo.tsw")).code, 0);
  const std::string report = slurp(p("lo.tsw.report.csv"));
  EXPECT_NE(report.find("fc1,tt,"), std::string::npos);
}

TEST_F(Cli, ExitCodesByFailureClass) {
  write(dir_ / "bad.json", R"({"compress": {"format": "tt", "budjet": 0.1}})");
  const CliRun config = run("compress --in " + p("teacher.tsw") + " --config " + p("bad.json") + " --out " + p("x.tsw"));
  EXPECT_EQ(config.code, 2);
  EXPECT_NE(config.output.find("compress.budjet"), std::string::npos);
  EXPECT_EQ(run("compress --in").code, 2);
  write(dir_ / "strict.json", R"({"compress": {"budget_fraction": 0.0005, "strict_budget": true}})");
  EXPECT_EQ(run("compress --in " + p("teacher.tsw") + " --config " + p("strict.json") + " --out " + p("x.tsw")).code, 2);
  write(dir_ / "garbage.tsw", "definitely not a bundle");
  EXPECT_EQ(run("analyze --in " + p("garbage.tsw") + " --out " + p("g")).code, 3);
  EXPECT_EQ(run("compress --in " + p("missing.tsw") + " --out " + p("x.tsw")).code, 3);
  EXPECT_EQ(run("finetune --student " + p("teacher.tsw") + " --data " + p("teacher.tsw") + " --out " + p("x.tsw")).code, 3);
  write(dir_ / "hot.json", R"({"distill": {"epochs": 3}, "optimizer": {"lr": 1e30}})");
  EXPECT_EQ(run("train --data " + p("data.tsw") + " --config " + p("hot.json") + " --out " + p("x.tsw")).code, 4);
}
