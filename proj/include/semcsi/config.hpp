#pragma once

// Experiment configuration files: INI text with [scenario], [cqi], [model],
// [train], [eval] and [analysis] sections. Every key has a default, unknown
// sections or keys are rejected, and the echo of a resolved config parses
// back to the same config.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "semcsi/channel.hpp"
#include "semcsi/cqi.hpp"
#include "semcsi/model.hpp"
#include "semcsi/train.hpp"

namespace semcsi {

struct AnalysisConfig {
  std::size_t k = 3;
  double jitter = 1e-10;
  CqiMode cqi_mode = CqiMode::kSubband;
  std::uint64_t seed = 0;  // jitter stream
};

struct ExperimentConfig {
  ScenarioConfig scenario;
  CqiConfig cqi;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  AnalysisConfig analysis;

  /// Validates every section plus cross-section consistency.
  void validate() const;
};

/// Parses INI text; `origin` names the source in error messages.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies one "section.key=value" override.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

/// Fully resolved INI text (every key of every section).
std::string echo_config(const ExperimentConfig& cfg);

/// Name of the environment variable holding the default config file (or a
/// directory containing semcsi.ini).
inline constexpr const char* kConfigEnvVar = "SEMCSI_CONFIG";

/// Config file to use when none is given on the command line.
std::optional<std::filesystem::path> default_config_path();

/// Explicit path, else the environment default, else built-in defaults;
/// overrides are applied in order and the result validated.
ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& path,
                                const std::vector<std::string>& overrides);

}  // namespace semcsi
