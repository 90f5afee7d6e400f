#ifndef FEDDAH_CONFIG_HPP
#define FEDDAH_CONFIG_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "feddah/amr.hpp"
#include "feddah/client.hpp"
#include "feddah/hypernet.hpp"
#include "feddah/model.hpp"

namespace feddah {

enum class Mode { kFull, kNoLr, kNoWs, kNoDaHyper, kFedAvgCl, kLocalOnly };

[[nodiscard]] const char* to_string(Mode mode) noexcept;
/// Accepts full, no_lr, no_ws, no_dahyper, fedavg_cl, local_only.
[[nodiscard]] Mode parse_mode(const std::string& name);
/// The five modes an ablation grid runs, in report order.
[[nodiscard]] std::vector<Mode> ablation_modes();
[[nodiscard]] bool uses_hypernet(Mode mode) noexcept;

/// Declarative description of one experiment. Defaults describe the 4-client
/// toy benchmark: 2 shared-initial tasks, 5 shared tasks and 2 unique tasks
/// per client.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  Mode mode = Mode::kFull;
  std::string output_dir = "out";

  // Task streams and synthetic data.
  std::size_t clients = 4;
  std::vector<std::string> shared_initial = {"t00", "t01"};
  std::vector<std::string> shared = {"t02", "t03", "t04", "t05", "t06"};
  std::vector<std::vector<std::string>> unique = {{"t07", "t08"}, {"t09", "t10"}, {"t11", "t12"}, {"t13", "t14"}};
  /// Families assigned round-robin over the task list.
  std::vector<TaskFamily> families = {TaskFamily::kSineMixture, TaskFamily::kPolynomial};
  TaskOptions task_options;

  // Client.
  std::vector<std::size_t> hidden = {32, 32};
  std::size_t epochs = 5;
  double lr_client = 1e-3;

  // Federation.
  std::size_t rounds_per_task = 20;

  // Hypernetwork.
  std::size_t n_z = 32;
  std::size_t hidden_size = 64;
  double mu_spacing = 2.0;
  double sigma = 0.5;

  // Server.
  double lr_server = 1e-3;
  double beta = 0.01;
  double beta1 = 0.01;
  double beta2 = 0.01;
  std::size_t n_inner = 1;
  std::size_t n_server = 20;
  std::size_t bins = 64;
  double smoothing = 1e-8;
  SimilarityReference similarity_reference = SimilarityReference::kGenerated;
  RecalibrationScope recalibration_scope = RecalibrationScope::kCrossSession;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Throws ConfigError naming the offending key.
void validate(const ExperimentConfig& cfg);

/// Strict JSON parsing: unknown keys and wrong types are rejected with the
/// key path in the message. Missing keys keep their defaults. The result is
/// validated.
[[nodiscard]] ExperimentConfig parse_config_json(const std::string& text);
/// Throws ConfigError when the file cannot be read.
[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path);
/// Every field, in the layout parse_config_json() reads.
[[nodiscard]] std::string serialize_config(const ExperimentConfig& cfg);

struct TaskDefinition {
  std::string task_id;
  TaskFamily family = TaskFamily::kPolynomial;
  std::uint64_t seed = 0;

  friend bool operator==(const TaskDefinition&, const TaskDefinition&) = default;
};

/// Every task in the config: shared-initial, shared, then unique pools in
/// client order.
[[nodiscard]] std::vector<TaskDefinition> task_definitions(const ExperimentConfig& cfg);
[[nodiscard]] ModelSpec model_spec(const ExperimentConfig& cfg);
/// Server settings with the mode's ablation applied.
[[nodiscard]] AmrConfig amr_config(const ExperimentConfig& cfg);
[[nodiscard]] IdentityOptions identity_options(const ExperimentConfig& cfg);

}  // namespace feddah

#endif  // FEDDAH_CONFIG_HPP
