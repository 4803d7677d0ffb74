// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: run configuration files and the make-synth, train,
// eval and curves commands.
//
// A run configuration is a text file of `key = value` lines; `#` starts a
// comment. Every key has a default, unknown keys are rejected, and `preset`
// (desk or full) is applied before the remaining keys whatever their order.
#pragma once

#include "dcr/evalkit.hpp"
#include "dcr/lifelong.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcr::cli {

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Environment variable that relative output paths are resolved against.
inline constexpr const char* kOutputRootEnv = "DCR_OUTPUT_ROOT";

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::invalid_argument("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  std::string preset = "desk";
  lifelong::TrainConfig train = lifelong::TrainConfig::desk();
  ModelConfig model;
  eval::FeatureMode feature = eval::FeatureMode::GlobalMean;
  std::filesystem::path task_stream;
  std::filesystem::path output_dir = "run";
};

/// Every recognised key, sorted.
std::vector<std::string> config_keys();

/// Applies one setting; throws ConfigError naming the key.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_setting(const RunConfig& cfg, const std::string& key);

/// Parses configuration text on top of the defaults.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Sorted `key = value` lines of the resolved configuration.
std::string canonical_text(const RunConfig& cfg);
/// SHA-256 of the canonical text without the output directory.
std::string config_hash(const RunConfig& cfg);

/// Resolves a relative output path against $DCR_OUTPUT_ROOT when it is set.
std::filesystem::path output_path(const std::filesystem::path& p);

/// Runs one command line (args[0] is the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dcr::cli
