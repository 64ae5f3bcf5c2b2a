#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "../tools/config.hpp"

namespace fs = std::filesystem;
using namespace saflex;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the tool with stderr folded into stdout.
Result run(const std::string& args, const std::string& env = "") {
  const char* bin = std::getenv("SAFLEX_CLI");
  if (!bin) return {};
  Result r;
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" + bin + "' " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    if (!std::getenv("SAFLEX_CLI")) GTEST_SKIP() << "SAFLEX_CLI not set";
    dir_ = fs::temp_directory_path() / ("saflex_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

const char* kSmallRun = R"({"data": {"n": 300}, "model": {"hidden": [8]}, "run": {"epochs": 2, "batch_size": 32}})";

} // namespace

TEST_F(Cli, GenDataIsDeterministicAndLoads) {
  ASSERT_EQ(run("gen-data --kind two_moons --n 120 --seed 3 --out " + path("a.csv") + " --schema " + path("a.schema")).code, 0);
  ASSERT_EQ(run("gen-data --kind two_moons --n 120 --seed 3 --out " + path("b.csv") + " --schema " + path("b.schema")).code, 0);
  EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
  Dataset ds = load_csv(path("a.csv"), path("a.schema"), false);
  EXPECT_EQ(ds.size(), 120u);
  EXPECT_EQ(ds.K, 2u);
  Dataset ref = gen_two_moons(120, 0.2, 3);
  for (std::size_t i = 0; i < 120; ++i) EXPECT_EQ(ds.X(i, 0), ref.X(i, 0));
}

TEST_F(Cli, GenDataRejectsEmptyAndUnknownKind) {
  Result r = run("gen-data --n 0 --out " + path("a.csv") + " --schema " + path("a.schema"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("--n"), std::string::npos);
  EXPECT_EQ(run("gen-data --kind spirals --out " + path("a.csv") + " --schema " + path("a.schema")).code, 2);
  EXPECT_EQ(run("gen-data --bogus").code, 2);
}

TEST_F(Cli, PrintConfigRoundTrips) {
  Result r = run("--print-config");
  ASSERT_EQ(r.code, 0);
  std::istringstream is(r.out);
  cli::Config c = cli::parse_config(is, "stdout");
  EXPECT_EQ(cli::dump(c), r.out);
  EXPECT_EQ(c.run.hidden, (std::vector<std::size_t>{32, 32}));
}

TEST_F(Cli, ConfigErrorsNameTheProblem) {
  spit(path("a.json"), R"({"saflex": {"temperature": 0.1}})");
  Result r = run("--print-config --config " + path("a.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("saflex.temperature"), std::string::npos);

  spit(path("b.json"), "{\n  \"run\": {\"epochs\": }\n}");
  r = run("train --config " + path("b.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("line 2"), std::string::npos);

  spit(path("c.json"), R"({"data": {"kind": "csv"}})");
  r = run("train --config " + path("c.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("data.path"), std::string::npos);

  spit(path("d.json"), R"({"run": {"epochs": "many"}})");
  r = run("train --config " + path("d.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("run.epochs"), std::string::npos);
}

TEST_F(Cli, ResolvedConfigRerunIsBitwiseIdentical) {
  spit(path("c.json"), kSmallRun);
  ASSERT_EQ(run("train --config " + path("c.json") + " --output-dir " + path("a"), "SAFLEX_THREADS=1").code, 0);
  const std::string resolved = path("a/config.json");
  ASSERT_EQ(run("train --config " + resolved + " --output-dir " + path("b"), "SAFLEX_THREADS=4").code, 0);
  for (const char* f : {"metrics.csv", "model.ckpt"})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  EXPECT_NE(slurp(resolved).find(path("a")), std::string::npos);
}

TEST_F(Cli, EvalMatchesFinalTestAccuracy) {
  spit(path("c.json"), kSmallRun);
  ASSERT_EQ(run("train --config " + path("c.json") + " --output-dir " + path("a")).code, 0);
  Result r = run("eval --config " + path("c.json") + " --checkpoint " + path("a/model.ckpt"));
  ASSERT_EQ(r.code, 0);
  const std::string metrics = slurp(dir_ / "a" / "metrics.csv");
  std::istringstream ls(metrics.substr(metrics.rfind('\n', metrics.size() - 2) + 1));
  std::string field;
  for (int i = 0; i < 4; ++i) std::getline(ls, field, ',');
  const std::size_t at = r.out.find("test: loss ");
  ASSERT_NE(at, std::string::npos);
  const std::size_t acc = r.out.find("accuracy ", at);
  EXPECT_NEAR(std::stod(r.out.substr(acc + 9)), std::stod(field), 1e-5);
}

TEST_F(Cli, SweepWritesOneRunPerSigma) {
  spit(path("c.json"), kSmallRun);
  ASSERT_EQ(run("train --config " + path("c.json") + " --output-dir " + path("s") + " --sweep-sigma 0,0.5,1").code, 0);
  for (const char* d : {"sigma_0", "sigma_0.5", "sigma_1"}) {
    EXPECT_TRUE(fs::exists(dir_ / "s" / d / "metrics.csv")) << d;
    EXPECT_TRUE(fs::exists(dir_ / "s" / d / "config.json")) << d;
  }
  EXPECT_NE(slurp(dir_ / "s" / "sigma_0.5" / "config.json").find("\"sigma\": 0.5"), std::string::npos);
  EXPECT_NE(slurp(dir_ / "s" / "sigma_0" / "metrics.csv"), slurp(dir_ / "s" / "sigma_1" / "metrics.csv"));
  const std::string summary = slurp(dir_ / "s" / "sweep.csv");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 4);
}

TEST_F(Cli, NumericalFailureExitCode) {
  spit(path("c.json"), R"({"data": {"n": 200}, "model": {"hidden": [4]}, "optimizer": {"lr": 1e300}, "run": {"epochs": 2, "mode": "none"}})");
  Result r = run("train --config " + path("c.json") + " --output-dir " + path("a"));
  EXPECT_EQ(r.code, 3);
}

TEST_F(Cli, OracleCheckPassesAndRejectsSingleClass) {
  Result r = run("oracle-check --instances 200 --seed 11");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("value matches 200/200"), std::string::npos);
  EXPECT_NE(r.out.find("sum rule"), std::string::npos);
  spit(path("k1.json"), R"({"oracle": {"min_classes": 1, "max_classes": 1}})");
  r = run("oracle-check --instances 5 --config " + path("k1.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("K must be >= 2"), std::string::npos);
  spit(path("big.json"), R"({"oracle": {"max_samples": 9}})");
  EXPECT_EQ(run("oracle-check --config " + path("big.json")).code, 2);
}

TEST_F(Cli, EvalRejectsTruncatedCheckpoint) {
  spit(path("c.json"), kSmallRun);
  ASSERT_EQ(run("train --config " + path("c.json") + " --output-dir " + path("a")).code, 0);
  spit(path("m.json"), R"({"data": {"kind": "two_moons", "n": 300}, "model": {"hidden": [8]}})");
  // Same input and output widths, so it loads; a truncated file does not.
  EXPECT_EQ(run("eval --config " + path("m.json") + " --checkpoint " + path("a/model.ckpt")).code, 0);
  const std::string ck = slurp(dir_ / "a" / "model.ckpt");
  spit(path("t.ckpt"), ck.substr(0, ck.size() / 2));
  EXPECT_EQ(run("eval --config " + path("c.json") + " --checkpoint " + path("t.ckpt")).code, 1);
}
