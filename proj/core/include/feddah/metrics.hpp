#ifndef FEDDAH_METRICS_HPP
#define FEDDAH_METRICS_HPP

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "feddah/federation.hpp"

namespace feddah {

// All metrics here are test losses: lower is better.

struct TrajectoryPoint {
  std::size_t round = 0;
  double test_loss = 0.0;

  friend bool operator==(const TrajectoryPoint&, const TrajectoryPoint&) = default;
};

/// (client_id, task_id) -> loss per round, rounds strictly increasing.
class TrajectorySet {
 public:
  using Key = std::pair<std::size_t, std::string>;

  /// Throws UsageError when `round` does not follow the series' last round.
  void add(std::size_t client_id, const std::string& task_id, std::size_t round, double test_loss);

  [[nodiscard]] const std::map<Key, std::vector<TrajectoryPoint>>& series() const noexcept { return series_; }
  [[nodiscard]] bool empty() const noexcept { return series_.empty(); }

 private:
  std::map<Key, std::vector<TrajectoryPoint>> series_;
};

[[nodiscard]] TrajectorySet trajectories(std::span<const MetricsRow> rows);

/// Parses the federation metrics CSV. Throws IoError on a malformed line.
[[nodiscard]] std::vector<MetricsRow> parse_metrics_csv(const std::string& text);
[[nodiscard]] std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

/// max(0, final - best), the largest drop from the best loss seen so far to
/// the final loss. Zero for an empty series.
[[nodiscard]] double series_forgetting(std::span<const double> losses);

/// Per task: mean over clients of series_forgetting.
[[nodiscard]] std::map<std::string, double> forgetting(const TrajectorySet& traj);
/// Mean of forgetting() over tasks. Throws UsageError when traj is empty.
[[nodiscard]] double mean_forgetting(const TrajectorySet& traj);
/// Mean final loss over every (client, task) series. Throws UsageError when
/// traj is empty.
[[nodiscard]] double final_average(const TrajectorySet& traj);

struct RunSummary {
  std::string label;
  double final_average = 0.0;
  double mean_forgetting = 0.0;
  std::map<std::string, double> forgetting;
};

[[nodiscard]] RunSummary summarize(std::string label, const TrajectorySet& traj);

/// task_id -> "round,client_id,test_loss" CSV text.
[[nodiscard]] std::map<std::string, std::string> trajectory_csvs(const TrajectorySet& traj);

struct ModeSummary {
  std::string mode;
  /// One entry per seed directory, or a single unlabeled run.
  std::vector<RunSummary> runs;

  [[nodiscard]] double final_average() const;
  [[nodiscard]] double mean_forgetting() const;
};

/// Summaries for an output directory: either a single run (metrics.csv at the
/// top) or an ablation tree <mode>/metrics.csv or <mode>/seed_<s>/metrics.csv.
/// Modes come in ablation order, then any others by name.
[[nodiscard]] std::vector<ModeSummary> summarize_directory(const std::filesystem::path& dir);
[[nodiscard]] std::string summary_json(const std::vector<ModeSummary>& modes);

/// Writes summary.json into `dir` and trajectories/<task>.csv next to every
/// metrics.csv found. Throws IoError when no metrics.csv exists.
std::vector<ModeSummary> write_report(const std::filesystem::path& dir);

}  // namespace feddah

#endif  // FEDDAH_METRICS_HPP
