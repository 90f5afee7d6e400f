#include "feddah/optim.hpp"

#include <cmath>

#include "feddah/error.hpp"

namespace feddah {

void Optimizer::ensure_state(std::span<const Tensor> grads) {
  if (options_.kind != OptimizerKind::kAdam || !m_.empty()) return;
  m_.reserve(grads.size());
  v_.reserve(grads.size());
  for (const Tensor& g : grads) {
    m_.emplace_back(g.shape());
    v_.emplace_back(g.shape());
  }
}

void Optimizer::step(std::span<Tensor> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw UsageError("optimizer: parameter and gradient counts differ");
  ensure_state(grads);
  ++steps_;
  if (options_.kind == OptimizerKind::kGradientDescent) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto p = params[k].data();
      const auto g = grads[k].data();
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= options_.lr * g[i];
    }
    return;
  }
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].data();
    const auto g = grads[k].data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      p[i] -= options_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
    }
  }
}

std::vector<Tensor> Optimizer::preview(std::span<const Tensor> grads) const {
  std::vector<Tensor> delta;
  delta.reserve(grads.size());
  if (options_.kind == OptimizerKind::kGradientDescent) {
    for (const Tensor& g : grads) {
      Tensor d(g.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = -options_.lr * g[i];
      delta.push_back(std::move(d));
    }
    return delta;
  }
  const double t = static_cast<double>(steps_ + 1);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t k = 0; k < grads.size(); ++k) {
    const Tensor& g = grads[k];
    Tensor d(g.shape());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double m_old = m_.empty() ? 0.0 : m_[k][i];
      const double v_old = v_.empty() ? 0.0 : v_[k][i];
      const double m = options_.beta1 * m_old + (1.0 - options_.beta1) * g[i];
      const double v = options_.beta2 * v_old + (1.0 - options_.beta2) * g[i] * g[i];
      d[i] = -options_.lr * (m / c1) / (std::sqrt(v / c2) + options_.eps);
    }
    delta.push_back(std::move(d));
  }
  return delta;
}

}  // namespace feddah
