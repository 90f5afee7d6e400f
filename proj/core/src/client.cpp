#include "feddah/client.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "feddah/error.hpp"
#include "feddah/ops.hpp"

namespace feddah {

const char* to_string(TaskFamily family) noexcept {
  switch (family) {
    case TaskFamily::kSineMixture: return "sine";
    case TaskFamily::kPolynomial: return "poly";
    case TaskFamily::kRadial: return "radial";
  }
  return "unknown";
}

TaskFamily parse_task_family(const std::string& name) {
  if (name == "sine") return TaskFamily::kSineMixture;
  if (name == "poly") return TaskFamily::kPolynomial;
  if (name == "radial") return TaskFamily::kRadial;
  throw ConfigError("unknown task family '" + name + "' (expected one of: sine, poly, radial)");
}

bool is_classification(TaskFamily family) noexcept { return family == TaskFamily::kRadial; }

std::size_t family_output_size(TaskFamily family) noexcept { return is_classification(family) ? 2 : 1; }

namespace {

constexpr std::size_t kSineTerms = 3;

// Exponent vectors of every monomial of total degree <= degree.
void monomials(std::size_t d_in, std::size_t degree, std::vector<std::size_t>& current,
               std::vector<std::vector<std::size_t>>& out) {
  if (current.size() == d_in) {
    out.push_back(current);
    return;
  }
  const std::size_t used = std::accumulate(current.begin(), current.end(), std::size_t{0});
  for (std::size_t e = 0; e + used <= degree; ++e) {
    current.push_back(e);
    monomials(d_in, degree, current, out);
    current.pop_back();
  }
}

std::vector<std::vector<std::size_t>> monomials(std::size_t d_in, std::size_t degree) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> current;
  monomials(d_in, degree, current, out);
  return out;
}

std::vector<double> draw_coefficients(TaskFamily family, const TaskOptions& options, Rng& rng) {
  std::vector<double> c;
  switch (family) {
    case TaskFamily::kSineMixture: {
      // Per term: amplitude, phase, then d_in frequencies.
      std::uniform_real_distribution<double> amp(-0.6, 0.6);
      std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
      std::normal_distribution<double> freq(0.0, 1.5);
      for (std::size_t k = 0; k < kSineTerms; ++k) {
        c.push_back(amp(rng));
        c.push_back(phase(rng));
        for (std::size_t i = 0; i < options.d_in; ++i) c.push_back(freq(rng));
      }
      break;
    }
    case TaskFamily::kPolynomial: {
      std::normal_distribution<double> coef(0.0, 0.4);
      for (std::size_t k = 0; k < monomials(options.d_in, options.poly_degree).size(); ++k) c.push_back(coef(rng));
      break;
    }
    case TaskFamily::kRadial: {
      // Center, then radius. The radius splits the unit square roughly in half.
      std::uniform_real_distribution<double> center(-0.2, 0.2);
      for (std::size_t i = 0; i < options.d_in; ++i) c.push_back(center(rng));
      c.push_back(std::sqrt(2.0 / std::numbers::pi));
      break;
    }
  }
  return c;
}

std::vector<double> target_of(TaskFamily family, const TaskOptions& options, const std::vector<double>& c,
                              std::span<const double> x) {
  switch (family) {
    case TaskFamily::kSineMixture: {
      double y = 0.0;
      const std::size_t stride = 2 + options.d_in;
      for (std::size_t k = 0; k < kSineTerms; ++k) {
        double arg = c[k * stride + 1];
        for (std::size_t i = 0; i < options.d_in; ++i) arg += c[k * stride + 2 + i] * x[i];
        y += c[k * stride] * std::sin(arg);
      }
      return {y};
    }
    case TaskFamily::kPolynomial: {
      const auto terms = monomials(options.d_in, options.poly_degree);
      double y = 0.0;
      for (std::size_t k = 0; k < terms.size(); ++k) {
        double m = c[k];
        for (std::size_t i = 0; i < options.d_in; ++i) m *= std::pow(x[i], static_cast<double>(terms[k][i]));
        y += m;
      }
      return {y};
    }
    case TaskFamily::kRadial: {
      double r2 = 0.0;
      for (std::size_t i = 0; i < options.d_in; ++i) r2 += (x[i] - c[i]) * (x[i] - c[i]);
      const bool inside = r2 < c[options.d_in] * c[options.d_in];
      return {inside ? 0.0 : 1.0, inside ? 1.0 : 0.0};
    }
  }
  return {};
}

Dataset draw_dataset(TaskFamily family, const TaskOptions& options, const std::vector<double>& c, std::size_t n,
                     Rng rng) {
  const std::size_t d_out = family_output_size(family);
  Dataset data{Tensor(Shape{n, options.d_in}), Tensor(Shape{n, d_out})};
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, options.noise > 0.0 ? options.noise : 1.0);
  for (std::size_t s = 0; s < n; ++s) {
    auto x = data.inputs.data().subspan(s * options.d_in, options.d_in);
    for (double& v : x) v = unit(rng);
    auto y = target_of(family, options, c, x);
    for (std::size_t o = 0; o < d_out; ++o) {
      double value = y[o];
      if (!is_classification(family) && options.noise > 0.0) value += noise(rng);
      data.targets[s * d_out + o] = value;
    }
  }
  return data;
}

double example_loss(TaskFamily family, std::span<const double> out, std::span<const double> target) {
  if (is_classification(family)) {
    const double zmax = *std::max_element(out.begin(), out.end());
    double denom = 0.0;
    for (double v : out) denom += std::exp(v - zmax);
    const double log_denom = std::log(denom) + zmax;
    double loss = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) loss -= target[i] * (out[i] - log_denom);
    return loss;
  }
  return squared_distance(out, target) / static_cast<double>(out.size());
}

std::vector<Tensor> to_params(const ModelWeights& w) {
  std::vector<Tensor> params;
  for (const auto& layer : w.layers) {
    params.push_back(layer.kernel);
    params.push_back(layer.bias);
  }
  return params;
}

ModelWeights from_params(std::vector<Tensor> params) {
  ModelWeights w;
  for (std::size_t k = 0; k + 1 < params.size(); k += 2) {
    w.layers.push_back({std::move(params[k]), std::move(params[k + 1])});
  }
  return w;
}

}  // namespace

SyntheticTask make_task(TaskFamily family, std::uint64_t seed, const TaskOptions& options, std::string task_id,
                        std::uint64_t data_stream) {
  if (options.n < 5) throw ConfigError("a task needs at least 5 samples for a 4:1 split");
  if (options.d_in == 0) throw ConfigError("task input size must be positive");
  SyntheticTask task;
  task.task_id = std::move(task_id);
  task.family = family;
  task.seed = seed;
  task.data_stream = data_stream;
  Rng coef_rng = make_rng(seed, {hash_key("task-coefficients")});
  task.coefficients = draw_coefficients(family, options, coef_rng);
  const std::size_t n_test = options.n / 5;
  const std::size_t n_train = options.n - n_test;
  task.train = draw_dataset(family, options, task.coefficients, n_train,
                            make_rng(seed, {hash_key("task-data"), data_stream, hash_key("train")}));
  task.test = draw_dataset(family, options, task.coefficients, n_test,
                           make_rng(seed, {hash_key("task-data"), data_stream, hash_key("test")}));
  return task;
}

EvalResult evaluate_on(const ModelSpec& spec, const ModelWeights& weights, TaskFamily family, const Dataset& data) {
  weights.require_matches(spec, "evaluate");
  EvalResult result;
  const std::size_t n = data.size();
  if (n == 0) return result;
  const std::size_t d_in = data.inputs.dim(1);
  const std::size_t d_out = data.targets.dim(1);
  if (d_in != spec.input_size() || d_out != spec.output_size()) {
    throw UsageError("dataset shape does not fit model spec " + spec.describe());
  }
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const Tensor out = mlp_forward(spec, weights, data.inputs.data().subspan(s * d_in, d_in));
    const auto target = data.targets.data().subspan(s * d_out, d_out);
    loss += example_loss(family, out.data(), target);
    if (is_classification(family)) {
      const auto predicted = std::max_element(out.values().begin(), out.values().end()) - out.values().begin();
      const auto actual = std::max_element(target.begin(), target.end()) - target.begin();
      correct += predicted == actual ? 1 : 0;
    }
  }
  result.loss = loss / static_cast<double>(n);
  if (is_classification(family)) result.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return result;
}

EvalResult evaluate(const ModelSpec& spec, const ModelWeights& weights, const SyntheticTask& task) {
  return evaluate_on(spec, weights, task.family, task.test);
}

TrainResult local_train(const ModelSpec& spec, const ModelWeights& init, const SyntheticTask& task,
                        const TrainOptions& options) {
  init.require_matches(spec, "local_train");
  std::vector<Tensor> params = to_params(init);
  Optimizer optimizer(OptimizerOptions{OptimizerKind::kAdam, options.lr});
  Rng rng = make_rng(options.seed, {hash_key("local-train")});
  const std::size_t n = task.train.size();
  const std::size_t d_in = task.train.inputs.dim(1);
  const std::size_t d_out = task.train.targets.dim(1);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s : order) {
      Tape tape;
      std::vector<Var> vars;
      for (const Tensor& p : params) vars.push_back(tape.param_view(p));
      Var h = tape.constant(Tensor(Shape{d_in}, std::vector<double>(task.train.inputs.values().begin() + s * d_in,
                                                                    task.train.inputs.values().begin() + (s + 1) * d_in)));
      for (std::size_t j = 0; j < spec.num_layers(); ++j) {
        h = ad::linear(vars[2 * j], h, vars[2 * j + 1]);
        if (spec.layer(j).activation == Activation::kTanh) h = ad::tanh(h);
      }
      Var target = tape.constant(Tensor(Shape{d_out}, std::vector<double>(task.train.targets.values().begin() + s * d_out,
                                                                          task.train.targets.values().begin() + (s + 1) * d_out)));
      Var loss = is_classification(task.family) ? ad::softmax_cross_entropy(h, target) : ad::mean_squared_error(h, target);
      if (!std::isfinite(loss.value().item())) {
        throw DivergedError("local training diverged on task '" + task.task_id + "'", step);
      }
      Gradients grads = tape.backward(loss);
      std::vector<Tensor> g;
      g.reserve(vars.size());
      for (const Var& v : vars) g.push_back(grads.take(v));
      optimizer.step(params, g);
      ++step;
    }
    const double epoch_loss = evaluate_on(spec, from_params(params), task.family, task.train).loss;
    if (!std::isfinite(epoch_loss)) throw DivergedError("local training diverged on task '" + task.task_id + "'", step);
    result.epoch_losses.push_back(epoch_loss);
  }
  result.weights = from_params(std::move(params));
  result.final_loss = result.epoch_losses.empty() ? evaluate_on(spec, init, task.family, task.train).loss
                                                  : result.epoch_losses.back();
  return result;
}

ClientUpdate make_update(std::size_t client_id, std::size_t round, const SyntheticTask& task, TrainResult result) {
  ClientUpdate update;
  update.client_id = client_id;
  update.task_id = task.task_id;
  update.weights = std::move(result.weights);
  update.round = round;
  update.local_train_loss = result.final_loss;
  return update;
}

ModelWeights random_init(const ModelSpec& spec, Rng& rng) {
  ModelWeights w = ModelWeights::zeros(spec);
  for (std::size_t j = 0; j < spec.num_layers(); ++j) {
    std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / static_cast<double>(spec.layer(j).n_in)));
    for (double& v : w.layers[j].kernel.data()) v = normal(rng);
  }
  return w;
}

}  // namespace feddah
