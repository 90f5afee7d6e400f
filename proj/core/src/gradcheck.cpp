#include "feddah/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace feddah {
namespace {

double evaluate(const ScalarFunction& f, std::span<const Tensor> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.constant_view(p));
  return f(tape, vars).value().item();
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, std::span<const Tensor> params, double h, double tol,
                           std::span<const std::string> names) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(tape.param_view(p));
    Gradients grads = tape.backward(f(tape, vars));
    for (const Var& v : vars) analytic.push_back(grads.take(v));
  }

  std::vector<Tensor> work(params.begin(), params.end());
  GradCheckReport report;
  for (std::size_t k = 0; k < work.size(); ++k) {
    GradCheckEntry entry;
    entry.name = k < names.size() ? names[k] : "param" + std::to_string(k);
    Tensor numeric(work[k].shape());
    for (std::size_t i = 0; i < work[k].size(); ++i) {
      const double saved = work[k][i];
      work[k][i] = saved + h;
      const double plus = evaluate(f, work);
      work[k][i] = saved - h;
      const double minus = evaluate(f, work);
      work[k][i] = saved;
      numeric[i] = (plus - minus) / (2.0 * h);
    }
    double scale = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      scale = std::max({scale, std::abs(numeric[i]), std::abs(analytic[k][i])});
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(numeric[i] - analytic[k][i]));
    }
    entry.max_rel_error = scale > 0.0 ? entry.max_abs_error / scale : 0.0;
    entry.passed = entry.max_rel_error <= tol;
    report.worst_rel_error = std::max(report.worst_rel_error, entry.max_rel_error);
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace feddah
