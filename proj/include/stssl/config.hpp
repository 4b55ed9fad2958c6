#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stssl/cluster.hpp"
#include "stssl/encoder.hpp"
#include "stssl/ground.hpp"
#include "stssl/losses.hpp"
#include "stssl/track.hpp"

namespace stssl {

struct Seeds {
  std::uint64_t init = 1;    // network initialization and head re-init
  std::uint64_t aug = 2;     // augmentation draws
  std::uint64_t ransac = 3;  // ground fitting
  std::uint64_t sample = 4;  // frame-pair sampling

  void override_all(std::uint64_t seed);
};

struct PipelineConfig {
  ground::RansacConfig ransac;
  cluster::ClusterFilterConfig cluster;
  track::MatchConfig match;
  std::size_t max_interval = 5;
};

struct TrainConfig {
  std::size_t epochs = 4;
  std::size_t steps_per_epoch = 50;
  std::size_t batch_frames = 1;  // frame pairs per optimizer step
  double lr_init = 0.036;
  double lr_min = 0.009;
  double sgd_momentum = 0.9;
  double weight_decay = 0.0004;
  double byol_momentum = 0.99;
  losses::LambdaSchedule lambda;
  bool curriculum = true;           // interval = floor(progress * max_interval)
  std::size_t fixed_interval = 5;   // used when curriculum is off
  std::size_t holdout_frames = 1;   // trailing frames never sampled for training
  std::size_t checkpoint_every = 0; // steps; 0 = only init and final
  bool location_only_first_epoch = true;
  std::size_t kmeans_k = 20;

  std::size_t total_steps() const { return epochs * steps_per_epoch; }
};

struct Config {
  PipelineConfig pipeline;
  encoder::EncoderConfig encoder;
  encoder::AugmentSpec aug;
  TrainConfig train;
  Seeds seeds;

  /// Throws InvalidArgument describing the first invalid field.
  void validate() const;
};

/// One addressable configuration value ("ransac.dist_threshold", ...).
struct ConfigField {
  std::string key;
  std::string help;
  std::function<nlohmann::json()> get;
  std::function<void(const nlohmann::json&)> set;
};

/// Every key of `cfg`, bound to its storage.
std::vector<ConfigField> config_fields(Config& cfg);

/// Applies a JSON object (nested objects or dotted keys) onto `cfg`.
/// Unknown keys throw InvalidArgument.
void apply_json(Config& cfg, const nlohmann::json& j);
void apply_json_file(Config& cfg, const std::string& path);

/// Sets one key from command-line text: parsed as a JSON literal when
/// possible, otherwise taken as a string.
void apply_value(Config& cfg, const std::string& key, const std::string& text);

/// Named presets: "kitti" (dbscan.eps 0.25) and "nuscenes" (dbscan.eps 0.5).
void apply_profile(Config& cfg, const std::string& profile);

/// STSSL_SEED, when set, overrides every seed.
void apply_env_seed(Config& cfg);

nlohmann::json to_json(const Config& cfg);

}  // namespace stssl
