#ifndef FEDDAH_HYPERNET_HPP
#define FEDDAH_HYPERNET_HPP

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "feddah/model.hpp"
#include "feddah/rng.hpp"
#include "feddah/tape.hpp"
#include "feddah/tensor.hpp"

namespace feddah {

// ---------------------------------------------------------------------------
// Task identities

struct TaskIdentity {
  std::string task_id;
  std::size_t index = 0;
  double mu = 0.0;
  double sigma = 0.0;
  Tensor z;

  friend bool operator==(const TaskIdentity&, const TaskIdentity&) = default;
};

struct IdentityOptions {
  std::size_t n_z = 32;
  double mu_spacing = 2.0;
  double sigma = 0.5;
  std::uint64_t seed = 42;
};

/// Registry of task identities. The k-th registered task draws
/// z ~ N(mu_spacing * k, sigma^2 I) from a substream keyed by (seed, k), so a
/// replay of the same registration order is bit-identical. Identities are
/// never modified after registration.
class IdentityRegistry {
 public:
  IdentityRegistry() = default;
  explicit IdentityRegistry(IdentityOptions options);

  /// Throws RegistrationError when `task_id` is already registered.
  const TaskIdentity& register_task(const std::string& task_id);
  /// Restores a previously sampled identity (checkpoint load).
  const TaskIdentity& restore(TaskIdentity identity);

  [[nodiscard]] bool contains(const std::string& task_id) const { return by_id_.contains(task_id); }
  [[nodiscard]] const TaskIdentity& at(const std::string& task_id) const;
  [[nodiscard]] std::span<const TaskIdentity> identities() const noexcept { return identities_; }
  [[nodiscard]] std::size_t size() const noexcept { return identities_.size(); }
  [[nodiscard]] const IdentityOptions& options() const noexcept { return options_; }

 private:
  IdentityOptions options_;
  std::vector<TaskIdentity> identities_;
  std::map<std::string, std::size_t> by_id_;
};

// ---------------------------------------------------------------------------
// Hypernetwork parameters

/// Tensor slots of one target layer, in storage order.
enum class HyperSlot : std::size_t {
  kHeadWeight = 0,  // [chunks, d, ctx]  stacked W_i
  kHeadBias = 1,    // [chunks, d]       stacked B_i
  kOutWeight = 2,   // [n_out, d]        W_o
  kOutBias = 3,     // [n_out]           B_o
  kEncWeight = 4,   // [n_z, n_out * (n_in + 1)]
  kEncBias = 5,     // [n_z]
};
inline constexpr std::size_t kSlotsPerLayer = 6;

/// All hypernetwork parameters for one client architecture. Layer j (0-based)
/// has n_in + 1 chunk heads reading a context of n_z * (j + 1) values: the
/// task identity followed by one encoded summary per earlier layer.
class HyperParams {
 public:
  HyperParams() = default;

  static HyperParams zeros(const ModelSpec& spec, std::size_t n_z, std::size_t d);
  /// Heads ~ N(0, 1/ctx), output projections ~ N(0, 1/d), biases and
  /// encoders zero.
  static HyperParams initialized(const ModelSpec& spec, std::size_t n_z, std::size_t d, Rng& rng);
  /// Rebuilds from named tensors (checkpoint load), validating every shape.
  static HyperParams from_tensors(const ModelSpec& spec, std::size_t n_z, std::size_t d, std::vector<Tensor> tensors);

  [[nodiscard]] const ModelSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] std::size_t n_z() const noexcept { return n_z_; }
  [[nodiscard]] std::size_t hidden() const noexcept { return d_; }
  [[nodiscard]] std::size_t num_layers() const noexcept { return spec_.num_layers(); }
  [[nodiscard]] std::size_t chunks(std::size_t j) const { return spec_.layer(j).n_in + 1; }
  [[nodiscard]] std::size_t context_size(std::size_t j) const noexcept { return n_z_ * (j + 1); }

  [[nodiscard]] Tensor& tensor(std::size_t j, HyperSlot slot) {
    return tensors_.at(j * kSlotsPerLayer + static_cast<std::size_t>(slot));
  }
  [[nodiscard]] const Tensor& tensor(std::size_t j, HyperSlot slot) const {
    return tensors_.at(j * kSlotsPerLayer + static_cast<std::size_t>(slot));
  }
  [[nodiscard]] std::span<Tensor> tensors() noexcept { return tensors_; }
  [[nodiscard]] std::span<const Tensor> tensors() const noexcept { return tensors_; }
  [[nodiscard]] std::vector<std::string> tensor_names() const;
  [[nodiscard]] std::size_t param_count() const noexcept;

  /// Same layout, every entry zero.
  [[nodiscard]] HyperParams zeros_like() const;
  [[nodiscard]] bool same_layout(const HyperParams& other) const noexcept;
  [[nodiscard]] bool all_finite() const noexcept;

  HyperParams& operator+=(const HyperParams& other);
  HyperParams& operator-=(const HyperParams& other);
  /// this += s * other
  HyperParams& add_scaled(const HyperParams& other, double s);
  [[nodiscard]] double norm() const noexcept;

  friend bool operator==(const HyperParams&, const HyperParams&) = default;

 private:
  ModelSpec spec_;
  std::size_t n_z_ = 0;
  std::size_t d_ = 0;
  std::vector<Tensor> tensors_;
};

[[nodiscard]] HyperParams operator+(HyperParams a, const HyperParams& b);
[[nodiscard]] HyperParams operator-(HyperParams a, const HyperParams& b);

/// Exact number of hypernetwork parameters for `spec`. Throws ConfigError
/// for n_z == 0 or d == 0.
[[nodiscard]] std::size_t hypernet_param_count(const ModelSpec& spec, std::size_t n_z, std::size_t d);

// ---------------------------------------------------------------------------
// Generation

/// Generated model on a tape. `chunks[j]` is layer j in chunk form
/// [n_in + 1, n_out] (see chunk_form()).
struct GeneratedModel {
  std::vector<Var> chunks;
};

/// Binds every HyperParams tensor as a leaf of `tape` (aliasing `hp`, which
/// must outlive the tape). Tracked leaves receive gradients.
[[nodiscard]] std::vector<Var> bind(Tape& tape, const HyperParams& hp, bool tracked);

/// One layer's chunk matrix from its context: a_i = W_i ctx + B_i, chunk_i =
/// W_o a_i + B_o.
Var generate_layer(const HyperParams& hp, std::span<const Var> bound, std::size_t j, Var context);
/// z' = C_j vec([K | b]) + c_j, reading [K | b] column by column.
Var encode_layer(const HyperParams& hp, std::span<const Var> bound, std::size_t j, Var chunks);
/// Full model: context_0 = z, context_{j+1} = context_j ++ encode(layer j).
GeneratedModel generate_model(const HyperParams& hp, std::span<const Var> bound, Var z);

/// Models for several identities in one pass over the parameters.
/// `identities` is [count, n_z]; rows [t * chunks_j, (t + 1) * chunks_j) of
/// `layers[j]` are layer j of identity t in chunk form.
struct GeneratedBatch {
  std::vector<Var> layers;
  std::size_t count = 0;
};
GeneratedBatch generate_batch(const HyperParams& hp, std::span<const Var> bound, Var identities);

/// Value-level versions.
[[nodiscard]] LayerWeights generate_layer(const HyperParams& hp, std::size_t j, const Tensor& context);
[[nodiscard]] Tensor encode_layer(const HyperParams& hp, std::size_t j, const LayerWeights& layer);
[[nodiscard]] ModelWeights generate_model(const HyperParams& hp, const TaskIdentity& identity);
/// Throws ConfigError when `hp` was not built for `spec`.
[[nodiscard]] ModelWeights generate_model(const HyperParams& hp, const TaskIdentity& identity, const ModelSpec& spec);
/// Generated layers in chunk form, the layout used by the server losses.
[[nodiscard]] std::vector<Tensor> generate_chunks(const HyperParams& hp, const Tensor& z);

/// Chunk form of every layer of `weights`.
[[nodiscard]] std::vector<Tensor> model_chunks(const ModelWeights& weights);

}  // namespace feddah

#endif  // FEDDAH_HYPERNET_HPP
