#ifndef FEDDAH_OPTIM_HPP
#define FEDDAH_OPTIM_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "feddah/tensor.hpp"

namespace feddah {

enum class OptimizerKind { kAdam, kGradientDescent };

struct OptimizerOptions {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam (bias-corrected) or plain gradient descent over a list of tensors.
/// Moments are allocated lazily on the first step.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerOptions options) : options_(options) {}

  void step(std::span<Tensor> params, std::span<const Tensor> grads);
  /// The change step() would apply, without touching the optimizer state.
  [[nodiscard]] std::vector<Tensor> preview(std::span<const Tensor> grads) const;

  [[nodiscard]] std::uint64_t steps() const noexcept { return steps_; }
  [[nodiscard]] const OptimizerOptions& options() const noexcept { return options_; }

 private:
  void ensure_state(std::span<const Tensor> grads);

  OptimizerOptions options_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t steps_ = 0;
};

}  // namespace feddah

#endif  // FEDDAH_OPTIM_HPP
