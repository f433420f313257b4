#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace advlab::tools {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitSweepPartial = 4;
inline constexpr int kSchemaVersion = 1;

struct RunOutcome {
  int exit_code = kExitOk;
  std::string status = "ok";
  std::string reason;
  /// Headline metric for sweep aggregates.
  std::string metric_name;
  double metric = 0.0;
};

/// Runs one experiment config (already merged with command line overrides)
/// into `out`. Relative paths inside the config resolve against `base_dir`.
/// Always leaves summary.json in `out`; successful and divergent runs also
/// leave manifest.json.
RunOutcome run_experiment(const nlohmann::json& config, const std::filesystem::path& base_dir,
                          const std::filesystem::path& out, int workers);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

}  // namespace advlab::tools
