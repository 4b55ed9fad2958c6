#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "stssl/ground.hpp"
#include "stssl/scene.hpp"

namespace stssl::cluster {

inline constexpr int kNoise = -1;
inline constexpr int kGround = -2;

struct DbscanConfig {
  double eps = 0.25;  // meters; 0.5 for the nuScenes profile
  std::size_t min_pts = 10;
};

struct ClusterFilterConfig {
  DbscanConfig dbscan;
  std::size_t min_cluster_size = 200;
  std::size_t max_cluster_size = 20000;
  std::size_t max_clusters = 50;

  void validate() const;
};

/// Raw DBSCAN labels: cluster ids 0..K-1 in discovery order, or kNoise.
/// Core points have >= min_pts neighbors within eps (self included); border
/// points join the first cluster that reaches them. Deterministic for a
/// fixed point order.
std::vector<int> dbscan(std::span<const Eigen::Vector3d> points, double eps, std::size_t min_pts);

struct Cluster {
  int id = 0;
  std::vector<std::size_t> members;  // frame point indices, ascending
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  std::size_t point_count() const { return members.size(); }
};

/// Per-frame over-segmentation. `assignment` is aligned with
/// `non_ground_indices`; cluster ids are dense 0..M-1 by descending size.
struct ClusterSet {
  std::size_t frame_index = 0;
  std::vector<bool> ground_mask;
  std::vector<std::size_t> non_ground_indices;
  std::vector<int> assignment;
  std::vector<Cluster> clusters;

  std::size_t num_clusters() const { return clusters.size(); }
  std::size_t num_points() const { return ground_mask.size(); }
  /// One label per frame point: cluster id, kNoise or kGround.
  std::vector<int> point_labels() const;
  Eigen::MatrixXd centroid_matrix() const;  // M x 3
};

/// Demotes clusters outside [min_cluster_size, max_cluster_size] to noise,
/// keeps the `max_clusters` largest (ties: lower raw id) and re-indexes them.
/// `points` are the non-ground points the raw assignment refers to, and
/// `non_ground_indices` maps them back to frame indices.
ClusterSet filter_clusters(std::span<const Eigen::Vector3d> points, std::span<const int> raw,
                           std::span<const std::size_t> non_ground_indices,
                           std::vector<bool> ground_mask, const ClusterFilterConfig& cfg,
                           std::size_t frame_index = 0);

/// Convenience overload where every point is non-ground.
ClusterSet filter_clusters(std::span<const Eigen::Vector3d> points, std::span<const int> raw,
                           const ClusterFilterConfig& cfg, std::size_t frame_index = 0);

/// DBSCAN + filter on the non-ground points of `frame`.
ClusterSet cluster_frame(const Frame& frame, const ground::GroundSplit& split,
                         const ClusterFilterConfig& cfg);

struct ClusterPurity {
  int cluster_id = 0;
  std::int32_t dominant_class = 0;
  double fraction = 0.0;
  std::size_t point_count = 0;
};

struct PurityReport {
  std::vector<ClusterPurity> clusters;
  double threshold = 0.9;
  std::size_t pure_count = 0;
  /// pure_count / clusters.size(); 0 when there are no clusters.
  double proportion = 0.0;
};

/// Dominant-class fraction per cluster and the share of clusters at or above
/// `threshold`. Throws UnsupportedError when the frame carries no labels.
PurityReport purity(const ClusterSet& set, const Frame& labeled_frame, double threshold = 0.9);
PurityReport merge_purity(std::span<const PurityReport> reports);

}  // namespace stssl::cluster
