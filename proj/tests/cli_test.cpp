#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "feddah/metrics.hpp"

namespace feddah {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("feddah_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    unsetenv("FEDDAH_OUT");
  }
  void TearDown() override {
    unsetenv("FEDDAH_OUT");
    fs::remove_all(dir_);
  }

  fs::path write_config(const std::string& text) {
    const fs::path p = dir_ / "config.json";
    std::ofstream(p) << text;
    return p;
  }

  // Tiny experiment: two clients, three tasks each, two rounds per task.
  fs::path tiny_config() {
    return write_config(R"({
      "tasks": {"clients": 2, "shared_initial": ["a"], "shared": ["b"], "unique": [["c"], ["d"]], "samples": 20},
      "client": {"hidden": [4], "epochs": 1},
      "federation": {"rounds_per_task": 2},
      "hypernet": {"n_z": 3, "hidden": 4},
      "server": {"n_server": 2}
    })");
  }

  fs::path dir_;
};

TEST_F(CliTest, FlagBeatsFileBeatsDefault) {
  const fs::path cfg = write_config(R"({"server": {"beta": 0.01, "beta1": 0.02}})");
  cli::Overrides o;
  o.beta = 0.05;
  const ExperimentConfig c = cli::resolve_config(cfg, o);
  EXPECT_EQ(c.beta, 0.05);
  EXPECT_EQ(c.beta1, 0.02);
  EXPECT_EQ(c.beta2, 0.01);
}

TEST_F(CliTest, EnvironmentSetsOutputBelowFlags) {
  const fs::path cfg = write_config(R"({"output_dir": "from_file"})");
  setenv("FEDDAH_OUT", "from_env", 1);
  EXPECT_EQ(cli::resolve_config(cfg, {}).output_dir, "from_env");
  cli::Overrides o;
  o.output_dir = "from_flag";
  EXPECT_EQ(cli::resolve_config(cfg, o).output_dir, "from_flag");
}

TEST_F(CliTest, BadModeGivesJsonError) {
  const Outcome r = invoke({"run", "--mode", "bogus"});
  EXPECT_EQ(r.code, 2);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j["error"]["command"], "run");
  EXPECT_EQ(j["error"]["kind"], "config");
  EXPECT_NE(j["error"]["message"].get<std::string>().find("fedavg_cl"), std::string::npos);
}

TEST_F(CliTest, UnknownKeyGivesJsonError) {
  const Outcome r = invoke({"run", "--config", write_config(R"({"sever": {}})").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(nlohmann::json::parse(r.err)["error"]["message"].get<std::string>().find("sever"), std::string::npos);
}

TEST_F(CliTest, MissingConfigFileIsUsageError) {
  const Outcome r = invoke({"run", "--config", (dir_ / "missing.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(nlohmann::json::parse(r.err)["error"]["kind"], "usage");
}

TEST_F(CliTest, ReportOnEmptyDirectoryFails) {
  const Outcome r = invoke({"report", "--dir", dir_.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(nlohmann::json::parse(r.err)["error"]["kind"], "io");
}

TEST_F(CliTest, RunTwiceGivesIdenticalMetrics) {
  const fs::path cfg = tiny_config();
  ASSERT_EQ(invoke({"run", "-c", cfg.string(), "-o", (dir_ / "a").string()}).code, 0);
  ASSERT_EQ(invoke({"run", "-c", cfg.string(), "-o", (dir_ / "b").string()}).code, 0);
  std::stringstream a, b;
  a << std::ifstream(dir_ / "a" / "metrics.csv").rdbuf();
  b << std::ifstream(dir_ / "b" / "metrics.csv").rdbuf();
  EXPECT_FALSE(a.str().empty());
  EXPECT_EQ(a.str(), b.str());
  EXPECT_TRUE(fs::exists(dir_ / "a" / "config.json"));
}

TEST_F(CliTest, AblateThenReport) {
  const fs::path cfg = tiny_config();
  const fs::path out = dir_ / "grid";
  const Outcome ablate = invoke({"ablate", "-c", cfg.string(), "-o", out.string()});
  ASSERT_EQ(ablate.code, 0) << ablate.err;
  std::size_t subdirs = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    ASSERT_TRUE(e.is_directory());
    ++subdirs;
    for (const char* f : {"metrics.csv", "rounds.jsonl", "checkpoint.fdah"}) EXPECT_TRUE(fs::exists(e.path() / f));
  }
  EXPECT_EQ(subdirs, 5u);

  const Outcome report = invoke({"report", "--dir", out.string()});
  ASSERT_EQ(report.code, 0) << report.err;
  const auto j = nlohmann::json::parse(report.out);
  const std::vector<std::string> order = {"full", "no_lr", "no_ws", "no_dahyper", "fedavg_cl"};
  ASSERT_EQ(j["modes"].size(), order.size());
  for (std::size_t m = 0; m < order.size(); ++m) {
    EXPECT_EQ(j["modes"][m]["mode"], order[m]);
    const double recomputed = final_average(trajectories(read_metrics_csv(out / order[m] / "metrics.csv")));
    EXPECT_DOUBLE_EQ(j["modes"][m]["final_average"].get<double>(), recomputed);
  }
}

TEST_F(CliTest, AblateWithSeedsNestsDirectories) {
  const fs::path out = dir_ / "seeded";
  const Outcome r =
      invoke({"ablate", "-c", tiny_config().string(), "--seeds", "3,4", "-o", out.string(), "--rounds-per-task", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* mode : {"full", "no_lr", "no_ws", "no_dahyper", "fedavg_cl"}) {
    EXPECT_TRUE(fs::exists(out / mode / "seed_3" / "metrics.csv"));
    EXPECT_TRUE(fs::exists(out / mode / "seed_4" / "metrics.csv"));
  }
  EXPECT_EQ(cli::ablation_dir("r", Mode::kNoWs, 7), fs::path("r/no_ws/seed_7"));
}

TEST_F(CliTest, NoSubcommandIsUsageError) {
  const Outcome r = invoke({});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(nlohmann::json::parse(r.err)["error"]["kind"], "usage");
}

}  // namespace
}  // namespace feddah
