#ifndef FEDDAH_FEDERATION_HPP
#define FEDDAH_FEDERATION_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "feddah/amr.hpp"
#include "feddah/checkpoint.hpp"
#include "feddah/client.hpp"
#include "feddah/config.hpp"

namespace feddah {

struct StreamEntry {
  std::string task_id;
  std::size_t start_round = 0;

  friend bool operator==(const StreamEntry&, const StreamEntry&) = default;
};

struct TaskStream {
  std::size_t client_id = 0;
  std::vector<StreamEntry> entries;
  std::vector<std::string> shared_initial;
  std::vector<std::string> unique;

  friend bool operator==(const TaskStream&, const TaskStream&) = default;
};

/// Shared-initial tasks first, in config order, then a permutation of the
/// shared pool and the client's unique pool drawn from a substream keyed by
/// (seed, client). Entry k starts at round k * rounds_per_task.
[[nodiscard]] std::vector<TaskStream> build_streams(const ExperimentConfig& cfg, std::uint64_t seed);

struct MetricsRow {
  std::size_t round = 0;
  std::size_t client_id = 0;
  std::string eval_task_id;
  double test_loss = 0.0;
  std::optional<double> test_accuracy;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

/// "round,client_id,eval_task_id,test_loss,test_accuracy" plus one line per
/// row. Numbers use 17 significant digits; a missing accuracy is empty.
[[nodiscard]] std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct BasicModelLoss {
  std::size_t round = 0;
  std::string task_id;
  /// Mean test loss of the registry entry over every client's test split.
  double loss = 0.0;
};

struct ClientProgress {
  /// Index into the client's stream; equal to its length once exhausted.
  std::size_t entry = 0;
  std::size_t rounds_on_task = 0;
  ModelWeights weights;

  friend bool operator==(const ClientProgress&, const ClientProgress&) = default;
};

/// Synchronous rounds over asynchronous task streams.
class Simulation {
 public:
  explicit Simulation(ExperimentConfig cfg);

  [[nodiscard]] bool finished() const;
  /// One communication round. Either every client and the server advance or,
  /// when an error escapes, nothing changes.
  RoundReport run_round();
  /// Rounds until every stream is exhausted.
  void run();

  [[nodiscard]] const ExperimentConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const ModelSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] std::size_t round() const noexcept { return state_.round; }
  [[nodiscard]] const std::vector<TaskStream>& streams() const noexcept { return streams_; }
  [[nodiscard]] const std::vector<TaskDefinition>& tasks() const noexcept { return defs_; }
  [[nodiscard]] const ClientProgress& client(std::size_t c) const { return state_.clients.at(c); }
  /// Task the client trains next round, if any.
  [[nodiscard]] std::optional<std::string> current_task(std::size_t c) const;
  /// The client's private copy of a task.
  [[nodiscard]] const SyntheticTask& data(std::size_t c, const std::string& task_id) const;

  /// Present in the hypernetwork modes.
  [[nodiscard]] const std::optional<ServerState>& server() const noexcept { return state_.server; }
  /// The weights used to evaluate client c on task t this round.
  [[nodiscard]] ModelWeights evaluation_model(std::size_t c, const std::string& task_id) const;

  [[nodiscard]] const std::vector<MetricsRow>& metrics() const noexcept { return state_.metrics; }
  [[nodiscard]] const std::vector<RoundReport>& reports() const noexcept { return state_.reports; }
  [[nodiscard]] const std::vector<BasicModelLoss>& basic_model_losses() const noexcept { return state_.basic_losses; }
  /// Number of rounds in which each (client, task) pair uploaded.
  [[nodiscard]] const std::map<std::pair<std::size_t, std::string>, std::size_t>& upload_counts() const noexcept {
    return state_.upload_counts;
  }

  [[nodiscard]] Checkpoint checkpoint() const;

 private:
  struct State {
    std::size_t round = 0;
    std::vector<ClientProgress> clients;
    std::optional<ServerState> server;
    /// Per-task averages (no_dahyper).
    std::map<std::string, ModelWeights> store;
    /// Single averaged model (fedavg_cl).
    ModelWeights global;
    std::vector<MetricsRow> metrics;
    std::vector<RoundReport> reports;
    std::vector<BasicModelLoss> basic_losses;
    std::map<std::pair<std::size_t, std::string>, std::size_t> upload_counts;
  };

  [[nodiscard]] ModelWeights allocation(const State& s, std::size_t c, const std::string& task_id) const;
  /// Unseen tasks start from a random init keyed by (client, start_round).
  [[nodiscard]] ModelWeights warm_start(const State& s, std::size_t c, const std::string& task_id,
                                        std::size_t start_round) const;
  [[nodiscard]] ModelWeights evaluation_model(const State& s, std::size_t c, const std::string& task_id) const;
  RoundReport server_phase(State& s, const std::vector<ClientUpdate>& uploads) const;
  void record_metrics(State& s) const;

  ExperimentConfig cfg_;
  ModelSpec spec_;
  std::vector<TaskDefinition> defs_;
  std::vector<TaskStream> streams_;
  /// data_[c][task_id]
  std::vector<std::map<std::string, SyntheticTask>> data_;
  State state_;
};

struct FinalEvaluation {
  std::size_t client_id = 0;
  std::string task_id;
  double test_loss = 0.0;
  std::optional<double> test_accuracy;
};

struct ExperimentResult {
  std::size_t rounds = 0;
  std::vector<FinalEvaluation> final_evaluations;
  std::filesystem::path metrics_path;
  std::filesystem::path rounds_path;
  std::filesystem::path checkpoint_path;
};

/// Runs `cfg` to completion and writes metrics.csv, rounds.jsonl,
/// checkpoint.fdah and config.json into cfg.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace feddah

#endif  // FEDDAH_FEDERATION_HPP
