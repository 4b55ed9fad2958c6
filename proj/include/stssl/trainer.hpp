#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "stssl/config.hpp"
#include "stssl/encoder.hpp"
#include "stssl/losses.hpp"
#include "stssl/pipeline.hpp"
#include "stssl/scene.hpp"
#include "stssl/track.hpp"

namespace stssl::train {

enum class Stage { kSpatialOnly, kSpatiotemporal };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& s);

/// SGD momentum buffers, one per online network.
struct Velocity {
  Eigen::VectorXd encoder, projector, predictor;
};

struct TrainState {
  encoder::ByolState net;
  Velocity velocity;
  std::size_t step = 0;
  Stage stage = Stage::kSpatialOnly;
  std::size_t head_reinits = 0;
  std::optional<std::size_t> tracked_epoch;  // epoch the trajectories were built for
  std::vector<track::Trajectory> trajectories;
};

/// Fresh networks (target = online) and zero momentum buffers.
TrainState init_state(const Config& cfg);

/// step / (total - 1), so the last step sits at progress 1.
double progress_at(std::size_t step, std::size_t total_steps);

/// Linear anneal from lr_init (progress 0) to lr_min (progress 1).
double lr_at(double progress, const TrainConfig& cfg);

struct FramePair {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t interval = 0;
};

/// Uniform m over the trainable frames, n = m + interval where the interval
/// follows the curriculum (or the fixed value) and is shortened to fit.
FramePair sample_pair(const Config& cfg, std::size_t trainable_frames, std::size_t step,
                      std::size_t slot);

class Trainer {
 public:
  /// Runs ground removal and clustering on every frame.
  Trainer(Config cfg, const Sequence& seq, std::size_t threads = 1);
  Trainer(Config cfg, const Sequence& seq, std::vector<pipeline::PreparedFrame> prepared);

  const Config& config() const { return cfg_; }
  const Sequence& sequence() const { return *seq_; }
  const std::vector<pipeline::PreparedFrame>& prepared() const { return prepared_; }
  std::size_t trainable_frames() const;

  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }
  void set_state(TrainState s) { state_ = std::move(s); }

  /// Rebuilds trajectories for the current epoch: location only in the
  /// first epoch (when configured), otherwise location plus max-pooled
  /// target-encoder cluster features.
  void refresh_tracking();

  /// One optimizer step on sampled frame pairs.
  losses::LossReport step();
  /// One optimizer step on the given pairs (tracking must be current).
  losses::LossReport train_on(const std::vector<FramePair>& pairs);

  /// Per-cluster max-pooled features of `frame` from the target encoder.
  Eigen::MatrixXd cluster_features(std::size_t frame) const;

 private:
  void maybe_switch_stage(double lambda);

  Config cfg_;
  const Sequence* seq_;
  std::vector<pipeline::PreparedFrame> prepared_;
  TrainState state_;
};

struct KMeansAnalysis {
  std::size_t k = 0;
  std::size_t samples = 0;
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<int> labels;
  std::optional<double> agreement;  // best-permutation agreement with `truth`
};

/// K-Means on feature rows; agreement is filled when `truth` is given.
KMeansAnalysis kmeans_feature_analysis(const Eigen::MatrixXd& features, std::size_t k,
                                       std::uint64_t seed, const std::vector<int>* truth = nullptr);

/// Unit-normalized online-encoder features of the object points of
/// `frame` (labeled instance != ground when labels exist, clustered points
/// otherwise). `instances` receives the instance id per row when labeled.
Eigen::MatrixXd object_point_features(const TrainState& state, const Config& cfg, const Frame& frame,
                                      const pipeline::PreparedFrame& prepared,
                                      std::vector<int>* instances);

struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;  // checkpoint stem
  std::size_t threads = 1;
  std::optional<std::size_t> stop_after;        // stop early at this step (writes ckpt_stop)
};

/// Full training run: validates the config before any compute, writes
/// config.json, ckpt_init, periodic checkpoints, train_log.jsonl,
/// ckpt_final and metrics.json under out_dir. epochs = 0 writes only the
/// initialization checkpoint.
std::vector<losses::LossReport> run(const Config& cfg, const Sequence& seq, const RunOptions& opts);

/// End-of-run bundle: purity, tracking durations, K-Means analysis of the
/// last frame, loss summary.
nlohmann::json run_metrics(const Trainer& trainer, const std::vector<losses::LossReport>& reports);

}  // namespace stssl::train
