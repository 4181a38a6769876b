#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dgf/losses.hpp"
#include "dgf/nets.hpp"
#include "dgf/synth.hpp"

namespace dgf {

/// Loop controls plus the architecture and objective knobs; desk-scale
/// defaults. Reference-scale values stay reachable (width 1.0, batch 32,
/// 200k iterations).
struct TrainConfig {
  int64_t iterations = 2000;
  int64_t batch_size = 8;
  uint64_t seed = 7;
  LossWeights weights;
  double r1_gamma = 10.0;
  int64_t checkpoint_every = 500;
  int64_t log_every = 10;
  int workers = 0;             // 0 = hardware concurrency
  bool cnt_stop_grad = false;  // treat the clean content feature as a constant target
  NetworkConfig net;

  void validate() const {
    if (iterations <= 0) throw ConfigError("iters must be positive");
    if (batch_size <= 0) throw ConfigError("batch must be positive");
    if (weights.lambda_img < 0 || weights.lambda_cnt < 0 || weights.lambda_offset < 0)
      throw ConfigError("loss weights must be non-negative");
    net.validate();
  }
};

/// Everything a CLI invocation can configure from one flat key=value file.
struct AppConfig {
  TrainConfig train;
  SynthSpec synth;
};

/// Parses flat `key = value` text (# comments, blank lines allowed),
/// preserving order. Raises ConfigError on malformed lines.
std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path);

/// Applies parsed pairs onto the config; unknown keys raise ConfigError
/// naming the key.
void apply_config(AppConfig& config, const std::vector<std::pair<std::string, std::string>>& kv);

/// Single key=value application (used for flag overrides).
void apply_config_value(AppConfig& config, const std::string& key, const std::string& value);

}  // namespace dgf
