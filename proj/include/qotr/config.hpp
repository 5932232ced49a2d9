#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "qotr/adam.hpp"
#include "qotr/augment.hpp"
#include "qotr/discriminator.hpp"
#include "qotr/generator.hpp"
#include "qotr/geometry.hpp"
#include "qotr/losses.hpp"

namespace qotr {

struct TrainConfig {
  GridSpec grid;
  ModelConfig model;
  DiscriminatorConfig disc;
  AdamConfig adam;
  LossWeights loss;
  AugmentConfig augment;

  std::size_t batch_size = 4;
  std::size_t epochs = 20;
  std::size_t warmup_epochs = 2;
  std::size_t max_steps = 0;  // 0 = no cap
  std::uint64_t seed = 0;
  bool diffaug = true;
  bool hflip = true;
  std::size_t threads = 1;
  std::size_t feature_seed = 19;

  std::string data_dir = "data";
  std::string out_dir = "runs";

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Flat TOML subset: `key = value` lines, `#` comments, quoted strings,
// integers, floats and booleans. Unknown keys are errors.
std::map<std::string, std::string> parse_flat_toml(const std::string& text);

// Applies one key; value is the raw TOML literal (strings keep their quotes
// optional).
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);

TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
std::string to_toml(const TrainConfig& cfg);

}  // namespace qotr
