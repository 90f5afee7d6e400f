#include "feddah/model.hpp"

#include <cmath>
#include <sstream>

#include "feddah/error.hpp"

namespace feddah {

ModelSpec::ModelSpec(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("model spec needs at least one layer");
  for (std::size_t j = 0; j < layers_.size(); ++j) {
    if (layers_[j].n_in == 0 || layers_[j].n_out == 0) {
      throw ConfigError("model layer " + std::to_string(j) + " has a zero dimension");
    }
    if (j + 1 < layers_.size() && layers_[j].n_out != layers_[j + 1].n_in) {
      throw ConfigError("model layers " + std::to_string(j) + " and " + std::to_string(j + 1) +
                        " do not conform: " + std::to_string(layers_[j].n_out) + " vs " +
                        std::to_string(layers_[j + 1].n_in));
    }
  }
}

ModelSpec ModelSpec::mlp(std::size_t n_in, const std::vector<std::size_t>& hidden, std::size_t n_out) {
  std::vector<LayerSpec> layers;
  std::size_t width = n_in;
  for (std::size_t h : hidden) {
    layers.push_back({width, h, Activation::kTanh});
    width = h;
  }
  layers.push_back({width, n_out, Activation::kIdentity});
  return ModelSpec(std::move(layers));
}

std::size_t ModelSpec::param_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.param_count();
  return n;
}

std::string ModelSpec::describe() const {
  std::ostringstream out;
  for (std::size_t j = 0; j < layers_.size(); ++j) {
    if (j == 0) out << layers_[j].n_in;
    out << "->" << layers_[j].n_out;
  }
  return out.str();
}

ModelWeights ModelWeights::zeros(const ModelSpec& spec) {
  ModelWeights w;
  for (const auto& l : spec.layers()) w.layers.push_back({Tensor(Shape{l.n_out, l.n_in}), Tensor(Shape{l.n_out})});
  return w;
}

ModelWeights ModelWeights::unflatten(const ModelSpec& spec, std::span<const double> flat) {
  if (flat.size() != spec.param_count()) {
    throw UsageError("flat parameter vector of size " + std::to_string(flat.size()) + " does not match spec " +
                     spec.describe() + " (" + std::to_string(spec.param_count()) + " params)");
  }
  ModelWeights w = zeros(spec);
  std::size_t pos = 0;
  for (auto& layer : w.layers) {
    for (double& v : layer.kernel.data()) v = flat[pos++];
    for (double& v : layer.bias.data()) v = flat[pos++];
  }
  return w;
}

std::vector<double> ModelWeights::flatten() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  for (const auto& layer : layers) {
    flat.insert(flat.end(), layer.kernel.values().begin(), layer.kernel.values().end());
    flat.insert(flat.end(), layer.bias.values().begin(), layer.bias.values().end());
  }
  return flat;
}

std::size_t ModelWeights::param_count() const noexcept {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.kernel.size() + layer.bias.size();
  return n;
}

bool ModelWeights::matches(const ModelSpec& spec) const noexcept {
  if (layers.size() != spec.num_layers()) return false;
  for (std::size_t j = 0; j < layers.size(); ++j) {
    const auto& l = spec.layers()[j];
    if (layers[j].kernel.shape() != Shape{l.n_out, l.n_in} || layers[j].bias.shape() != Shape{l.n_out}) return false;
  }
  return true;
}

bool ModelWeights::all_finite() const noexcept {
  for (const auto& layer : layers) {
    if (!layer.kernel.all_finite() || !layer.bias.all_finite()) return false;
  }
  return true;
}

void ModelWeights::require_matches(const ModelSpec& spec, const char* where) const {
  if (!matches(spec)) {
    throw UsageError(std::string(where) + ": model weights do not match spec " + spec.describe());
  }
}

Tensor chunk_form(const LayerWeights& layer) {
  const std::size_t n_out = layer.kernel.dim(0);
  const std::size_t n_in = layer.kernel.dim(1);
  Tensor chunks(Shape{n_in + 1, n_out});
  for (std::size_t o = 0; o < n_out; ++o) {
    for (std::size_t i = 0; i < n_in; ++i) chunks[i * n_out + o] = layer.kernel[o * n_in + i];
    chunks[n_in * n_out + o] = layer.bias[o];
  }
  return chunks;
}

LayerWeights from_chunk_form(const Tensor& chunks) {
  if (chunks.rank() != 2 || chunks.dim(0) < 2) {
    throw UsageError("chunk matrix must be [n_in + 1, n_out], got " + shape_string(chunks.shape()));
  }
  const std::size_t n_in = chunks.dim(0) - 1;
  const std::size_t n_out = chunks.dim(1);
  LayerWeights layer{Tensor(Shape{n_out, n_in}), Tensor(Shape{n_out})};
  for (std::size_t o = 0; o < n_out; ++o) {
    for (std::size_t i = 0; i < n_in; ++i) layer.kernel[o * n_in + i] = chunks[i * n_out + o];
    layer.bias[o] = chunks[n_in * n_out + o];
  }
  return layer;
}

double model_squared_distance(const ModelWeights& a, const ModelWeights& b) {
  if (a.layers.size() != b.layers.size()) throw UsageError("model_squared_distance: layer count mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < a.layers.size(); ++j) {
    acc += squared_distance(a.layers[j].kernel.data(), b.layers[j].kernel.data());
    acc += squared_distance(a.layers[j].bias.data(), b.layers[j].bias.data());
  }
  return acc;
}

Tensor mlp_forward(const ModelSpec& spec, const ModelWeights& weights, std::span<const double> x) {
  if (x.size() != spec.input_size()) {
    throw UsageError("mlp_forward: input of size " + std::to_string(x.size()) + " for spec " + spec.describe());
  }
  std::vector<double> h(x.begin(), x.end());
  std::vector<double> next;
  for (std::size_t j = 0; j < spec.num_layers(); ++j) {
    const auto& l = spec.layer(j);
    const auto& w = weights.layers[j];
    next.assign(l.n_out, 0.0);
    for (std::size_t o = 0; o < l.n_out; ++o) {
      double acc = w.bias[o];
      const double* row = w.kernel.data().data() + o * l.n_in;
      for (std::size_t i = 0; i < l.n_in; ++i) acc += row[i] * h[i];
      next[o] = l.activation == Activation::kTanh ? std::tanh(acc) : acc;
    }
    h.swap(next);
  }
  return Tensor::vector(std::move(h));
}

}  // namespace feddah
