#ifndef FEDDAH_TOOLS_CLI_HPP
#define FEDDAH_TOOLS_CLI_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "feddah/config.hpp"

namespace feddah::cli {

/// Command-line overrides. Anything set here beats the config file and the
/// FEDDAH_OUT environment variable.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> output_dir;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> rounds_per_task;
  std::optional<std::size_t> n_z;
  std::optional<std::size_t> hidden_size;
  std::optional<double> mu_spacing;
  std::optional<double> sigma;
  std::optional<double> lr_client;
  std::optional<double> lr_server;
  std::optional<double> beta;
  std::optional<double> beta1;
  std::optional<double> beta2;
  std::optional<std::size_t> n_inner;
  std::optional<std::size_t> n_server;
  std::optional<std::size_t> bins;
  std::optional<double> smoothing;
  std::optional<std::string> similarity_reference;
  std::optional<std::string> recalibration_scope;
};

/// defaults < config file < FEDDAH_OUT (output dir only) < overrides. The
/// result is validated.
[[nodiscard]] ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                              const Overrides& overrides);

/// Output directory of one ablation run: <root>/<mode>, or
/// <root>/<mode>/seed_<s> when seeds were given explicitly.
[[nodiscard]] std::filesystem::path ablation_dir(const std::filesystem::path& root, Mode mode,
                                                 std::optional<std::uint64_t> seed);

/// Runs `feddah <args...>` (args excludes the program name). Returns the
/// process exit code; failures print one JSON error record on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace feddah::cli

#endif  // FEDDAH_TOOLS_CLI_HPP
