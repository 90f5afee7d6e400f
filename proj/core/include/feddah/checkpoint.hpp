#ifndef FEDDAH_CHECKPOINT_HPP
#define FEDDAH_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "feddah/hypernet.hpp"
#include "feddah/tensor.hpp"

namespace feddah {

// Binary layout, all integers and floats little-endian:
//
//   "FDAH" | u32 version | u32 tensor_count
//   tensor_count x { u32 name_len | name (UTF-8) | u32 rank | rank x u64 dim | f64 payload }
//   u32 identity_count
//   identity_count x { u32 id_len | task_id | u64 index | f64 mu | f64 sigma | u64 n | n x f64 z }

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<NamedTensor> tensors;
  std::vector<TaskIdentity> identities;

  /// Tensors whose name starts with `prefix`, in stored order.
  [[nodiscard]] std::vector<Tensor> tensors_with_prefix(const std::string& prefix) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
[[nodiscard]] Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Appends the hypernetwork tensors under "hyper.<layer>.<slot>".
void append_hyperparams(Checkpoint& checkpoint, const HyperParams& hp);
/// Restores hypernetwork tensors written by append_hyperparams().
[[nodiscard]] HyperParams hyperparams_from(const Checkpoint& checkpoint, const ModelSpec& spec, std::size_t n_z,
                                           std::size_t d);

}  // namespace feddah

#endif  // FEDDAH_CHECKPOINT_HPP
