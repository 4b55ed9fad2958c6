#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "stssl/cluster.hpp"
#include "stssl/hungarian.hpp"

namespace stssl::track {

enum class FeatureMode { kLocationOnly, kLocationPlusFeature };

std::string to_string(FeatureMode mode);
FeatureMode feature_mode_from_string(const std::string& s);

struct MatchConfig {
  double alpha = 0.5;  // weight of the feature distance, in (0, 1)
  double gate = 3.0;   // meters; matches costlier than this are dissolved
  FeatureMode feature_mode = FeatureMode::kLocationPlusFeature;

  void validate() const;
};

struct MatchMatrix {
  Eigen::MatrixXd d_loc;   // centroid distances, meters
  Eigen::MatrixXd d_feat;  // distances between unit-normalized features, in [0, 2]
  Eigen::MatrixXd d;       // d_loc + alpha * d_feat
};

/// Cluster features are rows aligned with cluster ids. They are ignored (and
/// may be absent) in location-only mode, where d == d_loc. Zero-norm feature
/// rows throw NumericalError; row/column mismatches throw InvalidArgument.
MatchMatrix build_match_matrix(const cluster::ClusterSet& set_k, const cluster::ClusterSet& set_k1,
                               const Eigen::MatrixXd* feats_k, const Eigen::MatrixXd* feats_k1,
                               const MatchConfig& cfg);
MatchMatrix build_match_matrix(const Eigen::MatrixXd& centroids_k,
                               const Eigen::MatrixXd& centroids_k1,
                               const Eigen::MatrixXd* feats_k, const Eigen::MatrixXd* feats_k1,
                               const MatchConfig& cfg);

struct InterFramePairs {
  std::size_t frame_m = 0;
  std::size_t frame_n = 0;
  std::vector<std::pair<int, int>> matches;  // (cluster in m, cluster in n)
  std::size_t count() const { return matches.size(); }
};

/// Hungarian assignment on d, then dissolves every pair whose cost exceeds
/// the gate.
InterFramePairs gate_and_match(const Eigen::MatrixXd& d, const MatchConfig& cfg,
                               std::size_t frame_m, std::size_t frame_n);

struct ClusterRef {
  std::size_t frame = 0;
  int cluster_id = 0;
  bool operator==(const ClusterRef&) const = default;
};

struct Trajectory {
  std::size_t traj_id = 0;
  std::size_t birth_frame = 0;
  std::vector<ClusterRef> refs;  // one per consecutive frame
  bool alive = true;

  std::size_t length() const { return refs.size(); }
  std::size_t last_frame() const { return birth_frame + refs.size() - 1; }
  /// Cluster id at `frame`, if the trajectory covers it.
  std::optional<int> cluster_at(std::size_t frame) const;
};

struct TrackerState {
  std::vector<Trajectory> trajectories;
  // For the most recent frame: cluster id -> index into `trajectories`.
  std::vector<std::size_t> active;
  std::optional<std::size_t> last_frame;

  std::size_t live_count() const { return active.size(); }
};

/// Opens one trajectory per cluster of the first frame.
TrackerState start_tracking(std::size_t frame_index, std::size_t num_clusters);

/// Folds the matches between state.last_frame and the next frame into the
/// state: matched clusters extend their trajectory, unmatched new clusters
/// are born, unmatched old trajectories close immediately. Throws
/// IntegrityError for non-consecutive frames or out-of-range cluster ids.
void update_trajectories(TrackerState& state, const InterFramePairs& pairs,
                         std::size_t new_num_clusters);

struct DurationStat {
  std::size_t min_length = 0;
  double fraction = 0.0;
};

/// Fraction of trajectories whose length is >= k, for each k.
std::vector<DurationStat> tracking_stats(std::span<const Trajectory> trajectories,
                                         std::span<const std::size_t> ks);

/// Cluster pairs (frame t, frame t + interval) for every trajectory covering
/// the whole span. Interval 0 pairs each cluster of frame t with itself.
/// Returns an empty result when the span leaves the tracked range.
InterFramePairs emit_interframe_pairs(std::span<const Trajectory> trajectories,
                                      std::size_t frame_t, std::size_t interval);

/// Curriculum: floor(progress * max_interval), progress clamped to [0, 1].
std::size_t interval_at(double progress, std::size_t max_interval);

struct TrackResult {
  std::vector<Trajectory> trajectories;
  std::vector<InterFramePairs> adjacent;  // (k, k+1) matches after gating
};

/// Runs matching + lifecycle over a whole sequence of cluster sets. When
/// `features` is given it holds one (M_k x d) matrix per frame.
TrackResult track_sequence(std::span<const cluster::ClusterSet> sets, const MatchConfig& cfg,
                           const std::vector<Eigen::MatrixXd>* features = nullptr);

nlohmann::json trajectories_to_json(std::span<const Trajectory> trajectories);
std::vector<Trajectory> trajectories_from_json(const nlohmann::json& j);
nlohmann::json pairs_to_json(const InterFramePairs& pairs);

}  // namespace stssl::track
