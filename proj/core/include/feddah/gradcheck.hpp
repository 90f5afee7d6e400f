#ifndef FEDDAH_GRADCHECK_HPP
#define FEDDAH_GRADCHECK_HPP

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "feddah/tape.hpp"

namespace feddah {

/// Builds a scalar on `tape` from parameter leaves bound in the order given
/// to grad_check.
using ScalarFunction = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckEntry {
  std::string name;
  /// max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|);
  /// zero when both gradients vanish.
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst_rel_error = 0.0;
  bool passed = true;
};

/// Compares reverse-mode gradients of `f` against central differences with
/// step `h`. Errors are relative to the gradient scale of each parameter
/// tensor, so near-zero entries are not amplified by round-off.
[[nodiscard]] GradCheckReport grad_check(const ScalarFunction& f, std::span<const Tensor> params, double h = 1e-5,
                                         double tol = 1e-6, std::span<const std::string> names = {});

}  // namespace feddah

#endif  // FEDDAH_GRADCHECK_HPP
