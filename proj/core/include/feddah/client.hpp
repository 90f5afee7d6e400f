#ifndef FEDDAH_CLIENT_HPP
#define FEDDAH_CLIENT_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "feddah/model.hpp"
#include "feddah/optim.hpp"
#include "feddah/rng.hpp"
#include "feddah/tensor.hpp"

namespace feddah {

enum class TaskFamily { kSineMixture, kPolynomial, kRadial };

[[nodiscard]] const char* to_string(TaskFamily family) noexcept;
/// Accepts "sine", "poly" and "radial". Throws ConfigError otherwise.
[[nodiscard]] TaskFamily parse_task_family(const std::string& name);
[[nodiscard]] bool is_classification(TaskFamily family) noexcept;
/// Output width a client model needs for `family`.
[[nodiscard]] std::size_t family_output_size(TaskFamily family) noexcept;

struct TaskOptions {
  std::size_t n = 100;
  std::size_t d_in = 2;
  /// Standard deviation of additive label noise (regression only).
  double noise = 0.05;
  std::size_t poly_degree = 3;

  friend bool operator==(const TaskOptions&, const TaskOptions&) = default;
};

struct Dataset {
  Tensor inputs;   // [n, d_in]
  Tensor targets;  // [n, d_out]; one-hot rows for classification

  [[nodiscard]] std::size_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// A synthetic learning task. The target function is fixed by `seed`; the
/// samples come from a separate substream keyed by `data_stream`, so several
/// clients can hold their own samples of the same task.
struct SyntheticTask {
  std::string task_id;
  TaskFamily family = TaskFamily::kPolynomial;
  std::uint64_t seed = 0;
  std::uint64_t data_stream = 0;
  std::vector<double> coefficients;
  Dataset train;
  Dataset test;

  friend bool operator==(const SyntheticTask&, const SyntheticTask&) = default;
};

/// Splits n samples 4:1 into train and test.
[[nodiscard]] SyntheticTask make_task(TaskFamily family, std::uint64_t seed, const TaskOptions& options = {},
                                      std::string task_id = {}, std::uint64_t data_stream = 0);

/// Weights handed from a client to the server after local training.
struct ClientUpdate {
  std::size_t client_id = 0;
  std::string task_id;
  ModelWeights weights;
  std::size_t round = 0;
  double local_train_loss = 0.0;
};

struct TrainOptions {
  std::size_t epochs = 5;
  double lr = 1e-3;
  /// Seeds the per-epoch shuffling.
  std::uint64_t seed = 0;
};

struct TrainResult {
  ModelWeights weights;
  /// Train-set loss after each epoch.
  std::vector<double> epoch_losses;
  /// Train-set loss after the last epoch, or of `init` when epochs == 0.
  double final_loss = 0.0;
};

/// Adam with batch size 1 over shuffled train samples. Throws DivergedError
/// when the loss stops being finite.
[[nodiscard]] TrainResult local_train(const ModelSpec& spec, const ModelWeights& init, const SyntheticTask& task,
                                      const TrainOptions& options);

[[nodiscard]] ClientUpdate make_update(std::size_t client_id, std::size_t round, const SyntheticTask& task,
                                       TrainResult result);

struct EvalResult {
  double loss = 0.0;
  std::optional<double> accuracy;
};

/// Mean per-example loss over `data`: squared error averaged over outputs
/// for regression, softmax cross-entropy for classification.
[[nodiscard]] EvalResult evaluate_on(const ModelSpec& spec, const ModelWeights& weights, TaskFamily family,
                                     const Dataset& data);
/// Test-split evaluation.
[[nodiscard]] EvalResult evaluate(const ModelSpec& spec, const ModelWeights& weights, const SyntheticTask& task);

/// Client-model initialization: kernel ~ N(0, 1/n_in), zero bias.
[[nodiscard]] ModelWeights random_init(const ModelSpec& spec, Rng& rng);

}  // namespace feddah

#endif  // FEDDAH_CLIENT_HPP
