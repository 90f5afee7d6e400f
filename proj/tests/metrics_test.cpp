#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "feddah/error.hpp"
#include "feddah/federation.hpp"
#include "feddah/metrics.hpp"

namespace feddah {
namespace {

namespace fs = std::filesystem;

TrajectorySet single(const std::vector<double>& losses, std::size_t client = 0, const std::string& task = "t") {
  TrajectorySet s;
  for (std::size_t r = 0; r < losses.size(); ++r) s.add(client, task, r, losses[r]);
  return s;
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig cfg;
  cfg.clients = 2;
  cfg.shared_initial = {"a"};
  cfg.shared = {"b"};
  cfg.unique = {{"c"}, {"d"}};
  cfg.hidden = {4};
  cfg.rounds_per_task = 2;
  cfg.epochs = 1;
  cfg.n_z = 3;
  cfg.hidden_size = 4;
  cfg.n_server = 2;
  cfg.task_options.n = 20;
  cfg.output_dir = out.string();
  return cfg;
}

TEST(Forgetting, MonotoneSeriesIsZero) {
  EXPECT_EQ(forgetting(single({1.0, 0.8, 0.5, 0.1})).at("t"), 0.0);
}

TEST(Forgetting, DropThenRecovery) {
  EXPECT_NEAR(forgetting(single({1.0, 0.2, 0.9})).at("t"), 0.7, 1e-15);
}

TEST(Forgetting, AveragesClientsThenTasks) {
  TrajectorySet s;
  s.add(0, "x", 0, 1.0);
  s.add(0, "x", 1, 2.0);  // 1.0
  s.add(1, "x", 0, 1.0);
  s.add(1, "x", 1, 1.0);  // 0.0
  s.add(0, "y", 0, 0.5);
  s.add(0, "y", 1, 0.8);  // 0.3
  const auto f = forgetting(s);
  EXPECT_DOUBLE_EQ(f.at("x"), 0.5);
  EXPECT_DOUBLE_EQ(f.at("y"), 0.3);
  EXPECT_DOUBLE_EQ(mean_forgetting(s), 0.4);
}

TEST(Forgetting, IsNeverNegative) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + trial % 13);
    for (double& x : v) x = u(rng);
    EXPECT_GE(series_forgetting(v), 0.0);
  }
}

TEST(FinalAverage, SingleSeries) { EXPECT_DOUBLE_EQ(final_average(single({0.9, 0.3})), 0.3); }

TEST(FinalAverage, TwoSeries) {
  TrajectorySet s;
  s.add(0, "a", 0, 0.2);
  s.add(1, "b", 0, 0.4);
  EXPECT_DOUBLE_EQ(final_average(s), 0.3);
}

TEST(FinalAverage, EmptyIsUsageError) {
  EXPECT_THROW((void)final_average(TrajectorySet{}), UsageError);
  EXPECT_THROW((void)mean_forgetting(TrajectorySet{}), UsageError);
}

TEST(FinalAverage, IsPermutationInvariant) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<MetricsRow> rows;
  for (std::size_t c = 0; c < 3; ++c) {
    for (const char* t : {"p", "q", "r", "s"}) rows.push_back({0, c, t, u(rng), std::nullopt});
  }
  const double base = final_average(trajectories(rows));
  for (int k = 0; k < 20; ++k) {
    std::shuffle(rows.begin(), rows.end(), rng);
    EXPECT_NEAR(final_average(trajectories(rows)), base, 1e-15);
  }
}

TEST(Trajectories, RoundsMustIncrease) {
  TrajectorySet s;
  s.add(0, "a", 3, 1.0);
  EXPECT_THROW(s.add(0, "a", 3, 1.0), UsageError);
  EXPECT_NO_THROW(s.add(1, "a", 0, 1.0));
}

TEST(MetricsCsv, RoundTrips) {
  const std::vector<MetricsRow> rows = {{0, 1, "a", 0.1 + 0.2, std::nullopt}, {3, 0, "b", 1e-300, 0.75}};
  const std::string text = metrics_csv(rows);
  EXPECT_EQ(text.substr(0, text.find('\n')), "round,client_id,eval_task_id,test_loss,test_accuracy");
  EXPECT_EQ(parse_metrics_csv(text), rows);
}

TEST(MetricsCsv, MalformedLineIsIoError) {
  EXPECT_THROW((void)parse_metrics_csv("round,client_id,eval_task_id,test_loss,test_accuracy\n1,x,a,0.1,\n"), IoError);
}

// Recomputes final_average from the CSV text with nothing but string
// splitting: the last row per (client, task) wins.
TEST(FinalAverage, MatchesIndependentCsvRecomputation) {
  const fs::path out = fs::temp_directory_path() / "feddah_metrics_fixture";
  fs::remove_all(out);
  (void)run_experiment(tiny_config(out));

  std::ifstream in(out / "metrics.csv");
  std::string line;
  std::getline(in, line);
  std::map<std::string, double> last;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    last[cells[1] + "/" + cells[2]] = std::stod(cells[3]);
  }
  double sum = 0.0;
  for (const auto& [key, v] : last) sum += v;
  const double expected = sum / static_cast<double>(last.size());

  const TrajectorySet traj = trajectories(read_metrics_csv(out / "metrics.csv"));
  EXPECT_EQ(traj.series().size(), last.size());
  EXPECT_NEAR(final_average(traj), expected, 1e-12 * expected);
  fs::remove_all(out);
}

TEST(Report, SummarizesAblationTree) {
  const fs::path root = fs::temp_directory_path() / "feddah_report_tree";
  fs::remove_all(root);
  auto write = [&](const fs::path& dir, double final_loss) {
    fs::create_directories(dir);
    std::ofstream(dir / "metrics.csv") << metrics_csv({{0, 0, "a", 1.0, std::nullopt}, {1, 0, "a", final_loss, std::nullopt}});
  };
  write(root / "no_lr" / "seed_1", 0.5);
  write(root / "no_lr" / "seed_2", 0.7);
  write(root / "full" / "seed_1", 0.2);
  write(root / "full" / "seed_2", 1.4);

  const auto modes = write_report(root);
  ASSERT_EQ(modes.size(), 2u);
  EXPECT_EQ(modes[0].mode, "full");
  EXPECT_EQ(modes[1].mode, "no_lr");
  EXPECT_DOUBLE_EQ(modes[0].final_average(), 0.8);
  EXPECT_DOUBLE_EQ(modes[0].mean_forgetting(), 0.2);
  EXPECT_DOUBLE_EQ(modes[1].final_average(), 0.6);

  const auto j = nlohmann::json::parse(std::ifstream(root / "summary.json"));
  EXPECT_EQ(j["lower_is_better"], true);
  EXPECT_EQ(j["modes"][0]["mode"], "full");
  EXPECT_DOUBLE_EQ(j["modes"][0]["final_average"].get<double>(), 0.8);
  EXPECT_TRUE(fs::exists(root / "full" / "seed_1" / "trajectories" / "a.csv"));
  fs::remove_all(root);
}

TEST(Report, MissingMetricsIsIoError) {
  const fs::path root = fs::temp_directory_path() / "feddah_report_empty";
  fs::create_directories(root);
  EXPECT_THROW((void)write_report(root), IoError);
  fs::remove_all(root);
}

}  // namespace
}  // namespace feddah
