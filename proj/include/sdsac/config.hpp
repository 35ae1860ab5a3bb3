#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sdsac/metrics.hpp"
#include "sdsac/sac.hpp"

namespace sdsac {

/// Invalid configuration: unknown key, malformed value, failed validation or
/// unreadable file. The message names the offending key or path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kConfigSchemaVersion = 1;

/// Scheme selectors accepted in `run.schemes`.
inline const std::vector<std::string>& known_schemes() {
  static const std::vector<std::string> names{"diffusion_pruned", "diffusion", "gaussian_sac", "random",
                                              "complete_info"};
  return names;
}

struct OracleConfig {
  int envs = 20;
  int grid = 200;     // points per axis per type
  double span = 0.05; // relative half-width of the grid around the analytic point
};

struct RunConfig {
  EnvRanges env;
  RewardSpec reward;
  ActionBounds bounds;
  TrainerConfig trainer;
  EnergyProxy energy;
  OracleConfig oracle;
  std::vector<std::string> schemes{"diffusion_pruned"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string out = "runs";

  /// Throws ConfigError with the failing section in the message.
  void validate() const;
  /// Trainer settings for one (scheme, seed) cell.
  TrainerConfig trainer_for(const std::string& scheme, std::uint64_t seed) const;
};

/// Every recognized key in serialization order.
std::vector<std::string> config_keys();

/// Sets one dotted key from its textual value.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// Applies `key = value` lines; '#' starts a comment. `source` prefixes errors.
void apply_text(RunConfig& config, std::string_view text, const std::string& source);

/// Parses "key=value" as given to --set.
void apply_override(RunConfig& config, std::string_view assignment);

RunConfig load_config(const std::filesystem::path& path);

/// Full resolved configuration, one key per line, prefixed by schema_version.
/// Parsing the output reproduces the configuration exactly.
std::string to_text(const RunConfig& config);

} // namespace sdsac
