#ifndef FEDDAH_RNG_HPP
#define FEDDAH_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace feddah {

/// Stable 64-bit hash of a string key (FNV-1a), for naming RNG substreams.
[[nodiscard]] std::uint64_t hash_key(std::string_view key) noexcept;

/// Derives an independent seed from a base seed and a path of substream
/// keys by chaining splitmix64 finalizers.
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) noexcept;

using Rng = std::mt19937_64;

[[nodiscard]] inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> keys) {
  return Rng(derive_seed(base, keys));
}

}  // namespace feddah

#endif  // FEDDAH_RNG_HPP
