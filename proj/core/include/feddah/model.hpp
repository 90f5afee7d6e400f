#ifndef FEDDAH_MODEL_HPP
#define FEDDAH_MODEL_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "feddah/tensor.hpp"

namespace feddah {

enum class Activation { kIdentity, kTanh };

struct LayerSpec {
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  Activation activation = Activation::kIdentity;

  [[nodiscard]] std::size_t param_count() const noexcept { return n_in * n_out + n_out; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Architecture of a dense client model. Consecutive layers always conform.
class ModelSpec {
 public:
  ModelSpec() = default;
  explicit ModelSpec(std::vector<LayerSpec> layers);

  /// tanh on hidden layers, identity on the output layer.
  static ModelSpec mlp(std::size_t n_in, const std::vector<std::size_t>& hidden, std::size_t n_out);

  [[nodiscard]] const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  [[nodiscard]] const LayerSpec& layer(std::size_t j) const { return layers_.at(j); }
  [[nodiscard]] std::size_t num_layers() const noexcept { return layers_.size(); }
  [[nodiscard]] std::size_t param_count() const noexcept;
  [[nodiscard]] std::size_t input_size() const { return layers_.front().n_in; }
  [[nodiscard]] std::size_t output_size() const { return layers_.back().n_out; }
  [[nodiscard]] std::string describe() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;

 private:
  std::vector<LayerSpec> layers_;
};

/// One dense layer: kernel K [n_out x n_in] and bias [n_out].
struct LayerWeights {
  Tensor kernel;
  Tensor bias;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct ModelWeights {
  std::vector<LayerWeights> layers;

  static ModelWeights zeros(const ModelSpec& spec);
  /// Kernel row-major then bias, layer by layer.
  static ModelWeights unflatten(const ModelSpec& spec, std::span<const double> flat);

  [[nodiscard]] std::vector<double> flatten() const;
  [[nodiscard]] std::size_t param_count() const noexcept;
  [[nodiscard]] bool matches(const ModelSpec& spec) const noexcept;
  [[nodiscard]] bool all_finite() const noexcept;
  /// Throws UsageError naming `where` when the shapes do not follow `spec`.
  void require_matches(const ModelSpec& spec, const char* where) const;

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// The layer as the matrix [K | b] stored column by column: row i of the
/// result (shape [n_in + 1, n_out]) is column i of K, the last row is b.
[[nodiscard]] Tensor chunk_form(const LayerWeights& layer);
[[nodiscard]] LayerWeights from_chunk_form(const Tensor& chunks);

/// Sum of squared parameter differences between two models.
[[nodiscard]] double model_squared_distance(const ModelWeights& a, const ModelWeights& b);

/// Plain forward pass (no tape) of a single input through the model.
[[nodiscard]] Tensor mlp_forward(const ModelSpec& spec, const ModelWeights& weights, std::span<const double> x);

}  // namespace feddah

#endif  // FEDDAH_MODEL_HPP
