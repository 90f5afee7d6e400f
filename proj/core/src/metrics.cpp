#include "feddah/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "feddah/config.hpp"
#include "feddah/error.hpp"

namespace feddah {

void TrajectorySet::add(std::size_t client_id, const std::string& task_id, std::size_t round, double test_loss) {
  auto& s = series_[{client_id, task_id}];
  if (!s.empty() && s.back().round >= round) {
    throw UsageError("trajectory for client " + std::to_string(client_id) + " task '" + task_id +
                     "': round " + std::to_string(round) + " does not follow " + std::to_string(s.back().round));
  }
  s.push_back({round, test_loss});
}

TrajectorySet trajectories(std::span<const MetricsRow> rows) {
  TrajectorySet traj;
  for (const MetricsRow& r : rows) traj.add(r.client_id, r.eval_task_id, r.round, r.test_loss);
  return traj;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& field, std::size_t line_no) {
  T value{};
  const char* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw IoError("metrics.csv line " + std::to_string(line_no) + ": bad number '" + field + "'");
  }
  return value;
}

}  // namespace

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("round,client_id,eval_task_id,test_loss", 0) != 0) {
    throw IoError("metrics.csv: missing header");
  }
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 5) throw IoError("metrics.csv line " + std::to_string(line_no) + ": expected 5 fields");
    MetricsRow r;
    r.round = parse_number<std::size_t>(f[0], line_no);
    r.client_id = parse_number<std::size_t>(f[1], line_no);
    r.eval_task_id = f[2];
    r.test_loss = parse_number<double>(f[3], line_no);
    if (!f[4].empty()) r.test_accuracy = parse_number<double>(f[4], line_no);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_metrics_csv(text.str());
}

double series_forgetting(std::span<const double> losses) {
  if (losses.empty()) return 0.0;
  const double best = *std::min_element(losses.begin(), losses.end());
  return std::max(0.0, losses.back() - best);
}

std::map<std::string, double> forgetting(const TrajectorySet& traj) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& [key, points] : traj.series()) {
    std::vector<double> losses;
    losses.reserve(points.size());
    for (const auto& p : points) losses.push_back(p.test_loss);
    auto& [sum, n] = acc[key.second];
    sum += series_forgetting(losses);
    n += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [task, a] : acc) out[task] = a.first / static_cast<double>(a.second);
  return out;
}

double mean_forgetting(const TrajectorySet& traj) {
  if (traj.empty()) throw UsageError("mean_forgetting of an empty trajectory set");
  const auto per_task = forgetting(traj);
  double sum = 0.0;
  for (const auto& [task, f] : per_task) sum += f;
  return sum / static_cast<double>(per_task.size());
}

double final_average(const TrajectorySet& traj) {
  if (traj.empty()) throw UsageError("final_average of an empty trajectory set");
  double sum = 0.0;
  for (const auto& [key, points] : traj.series()) {
    if (points.empty()) throw UsageError("final_average: empty series");
    sum += points.back().test_loss;
  }
  return sum / static_cast<double>(traj.series().size());
}

RunSummary summarize(std::string label, const TrajectorySet& traj) {
  return {std::move(label), final_average(traj), mean_forgetting(traj), forgetting(traj)};
}

std::map<std::string, std::string> trajectory_csvs(const TrajectorySet& traj) {
  std::map<std::string, std::string> out;
  char buf[40];
  for (const auto& [key, points] : traj.series()) {
    std::string& text = out[key.second];
    if (text.empty()) text = "round,client_id,test_loss\n";
    for (const auto& p : points) {
      std::snprintf(buf, sizeof buf, "%.17g", p.test_loss);
      text += std::to_string(p.round) + "," + std::to_string(key.first) + "," + buf + "\n";
    }
  }
  return out;
}

double ModeSummary::final_average() const {
  double sum = 0.0;
  for (const auto& r : runs) sum += r.final_average;
  return runs.empty() ? 0.0 : sum / static_cast<double>(runs.size());
}

double ModeSummary::mean_forgetting() const {
  double sum = 0.0;
  for (const auto& r : runs) sum += r.mean_forgetting;
  return runs.empty() ? 0.0 : sum / static_cast<double>(runs.size());
}

namespace {

namespace fs = std::filesystem;

RunSummary summarize_file(const fs::path& metrics, std::string label) {
  return summarize(std::move(label), trajectories(read_metrics_csv(metrics)));
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int mode_rank(const std::string& name) {
  int rank = 0;
  for (Mode m : ablation_modes()) {
    if (name == to_string(m)) return rank;
    ++rank;
  }
  return name == to_string(Mode::kLocalOnly) ? rank : rank + 1;
}

std::vector<fs::path> metrics_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (fs::exists(dir / "metrics.csv")) out.push_back(dir / "metrics.csv");
  for (const auto& sub : sorted_subdirs(dir)) {
    for (auto& f : metrics_files(sub)) out.push_back(std::move(f));
  }
  return out;
}

}  // namespace

std::vector<ModeSummary> summarize_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<ModeSummary> out;
  if (fs::exists(dir / "metrics.csv")) {
    out.push_back({dir.filename().string(), {summarize_file(dir / "metrics.csv", "")}});
    return out;
  }
  for (const auto& sub : sorted_subdirs(dir)) {
    ModeSummary mode{sub.filename().string(), {}};
    if (fs::exists(sub / "metrics.csv")) {
      mode.runs.push_back(summarize_file(sub / "metrics.csv", ""));
    } else {
      for (const auto& seed_dir : sorted_subdirs(sub)) {
        if (fs::exists(seed_dir / "metrics.csv")) {
          mode.runs.push_back(summarize_file(seed_dir / "metrics.csv", seed_dir.filename().string()));
        }
      }
    }
    if (!mode.runs.empty()) out.push_back(std::move(mode));
  }
  std::stable_sort(out.begin(), out.end(), [](const ModeSummary& a, const ModeSummary& b) {
    return mode_rank(a.mode) < mode_rank(b.mode);
  });
  if (out.empty()) throw IoError("no metrics.csv under " + dir.string());
  return out;
}

std::string summary_json(const std::vector<ModeSummary>& modes) {
  nlohmann::ordered_json j;
  j["metric"] = "test_loss";
  j["lower_is_better"] = true;
  auto& table = j["modes"] = nlohmann::ordered_json::array();
  for (const ModeSummary& m : modes) {
    nlohmann::ordered_json row;
    row["mode"] = m.mode;
    row["final_average"] = m.final_average();
    row["mean_forgetting"] = m.mean_forgetting();
    auto& runs = row["runs"] = nlohmann::ordered_json::array();
    for (const RunSummary& r : m.runs) {
      nlohmann::ordered_json run;
      run["label"] = r.label;
      run["final_average"] = r.final_average;
      run["mean_forgetting"] = r.mean_forgetting;
      run["forgetting"] = r.forgetting;
      runs.push_back(std::move(run));
    }
    table.push_back(std::move(row));
  }
  return j.dump(2) + "\n";
}

std::vector<ModeSummary> write_report(const fs::path& dir) {
  auto modes = summarize_directory(dir);
  for (const fs::path& metrics : metrics_files(dir)) {
    const fs::path out_dir = metrics.parent_path() / "trajectories";
    fs::create_directories(out_dir);
    for (const auto& [task, text] : trajectory_csvs(trajectories(read_metrics_csv(metrics)))) {
      std::ofstream out(out_dir / (task + ".csv"), std::ios::binary);
      if (!out) throw IoError("cannot write " + (out_dir / (task + ".csv")).string());
      out << text;
    }
  }
  std::ofstream out(dir / "summary.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "summary.json").string());
  out << summary_json(modes);
  return modes;
}

}  // namespace feddah
