#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "prl/errors.hpp"
#include "prl/trainer.hpp"

namespace prl {

/// Rejected configuration entry; key() names the offending key.
class ConfigError : public ValidationError {
 public:
  ConfigError(std::string key, const std::string& message)
      : ValidationError(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// "desk" or "paper-scale".
ExperimentConfig preset_config(const std::string& name);

/// Applies `key = value` lines on top of `base`. Blank lines and lines
/// starting with '#' are skipped. A `preset = NAME` line, if present, must
/// come first and replaces `base`.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = ExperimentConfig::desk());
ExperimentConfig load_config_file(const std::filesystem::path& path);

/// Every key with its effective value. Parsing the result reproduces the
/// same effective configuration.
std::string format_config(const ExperimentConfig& config);

/// Key names accepted by parse_config. survival.<game> entries are
/// accepted for any game listed in `games`.
std::vector<std::string> config_keys();

}  // namespace prl
