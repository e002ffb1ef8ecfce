#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcam/experiment.hpp"

namespace pcam {

/// Bad key, unparsable value or a resolved config that fails validation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Resolved settings for one CLI invocation.
struct RunConfig {
  ExperimentConfig experiment;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<double> betas{0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<double> gammas{1.0, 0.9, 0.8, 0.7, 0.6, 0.5};
  std::vector<double> pf_weights{0.2, 0.5, 1.0, 2.0};
  std::string checkpoint;
  int rollout_source = 0;
  int rollout_target = 0;
};

/// Every accepted key, in snapshot order.
const std::vector<std::string>& config_keys();

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
/// "key=value" lines; blank lines and '#' comments are skipped.
void apply_config_text(RunConfig& cfg, const std::string& text);
void apply_config_file(RunConfig& cfg, const std::string& path);
/// Parses "key=value" as given on the command line.
void apply_override(RunConfig& cfg, const std::string& assignment);

std::string get_setting(const RunConfig& cfg, const std::string& key);
/// All keys with their resolved values; feeding it back reproduces cfg.
std::string config_snapshot(const RunConfig& cfg);

/// Throws ConfigError when the experiment settings are inconsistent.
void validate_config(const RunConfig& cfg);

}  // namespace pcam
