#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "stssl/scene.hpp"

namespace stssl::ground {

struct RansacConfig {
  double dist_threshold = 0.25;  // meters
  std::size_t max_iters = 200;
  double min_inlier_ratio = 0.15;
  double max_tilt_deg = 30.0;  // hypotheses steeper than this are rejected
};

/// Plane n.p + offset = 0 with unit normal, canonically oriented n.z >= 0.
struct PlaneModel {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double offset = 0.0;
  std::size_t inlier_count = 0;
  double inlier_ratio = 0.0;

  double signed_distance(const Eigen::Vector3d& p) const { return normal.dot(p) + offset; }
  double tilt_deg() const;
};

struct GroundSplit {
  std::vector<bool> ground_mask;                // one entry per frame point
  std::vector<std::size_t> non_ground_indices;  // ascending
  std::size_t ground_count() const { return ground_mask.size() - non_ground_indices.size(); }
};

/// Best-consensus plane over `max_iters` random 3-point hypotheses, refit by
/// least squares on its inliers. The refit is kept only when it does not
/// lose inliers. Returns nullopt when the best inlier ratio falls below
/// `min_inlier_ratio` (no ground: the frame passes through un-split).
/// Throws InsufficientPointsError for fewer than 3 points.
std::optional<PlaneModel> fit_plane_ransac(std::span<const Eigen::Vector3d> points,
                                           const RansacConfig& cfg, std::uint64_t seed);
std::optional<PlaneModel> fit_plane_ransac(const Frame& frame, const RansacConfig& cfg,
                                           std::uint64_t seed);

/// Least-squares plane through `points` (smallest-eigenvalue direction of
/// the scatter matrix about the centroid), canonically oriented.
PlaneModel fit_plane_least_squares(std::span<const Eigen::Vector3d> points);

std::size_t count_inliers(std::span<const Eigen::Vector3d> points, const Eigen::Vector3d& normal,
                          double offset, double dist_threshold);

/// A point is ground iff |n.p + offset| <= dist_threshold and the plane's
/// tilt from vertical is <= max_tilt_deg. A missing plane marks nothing as ground.
GroundSplit split_ground(std::span<const Eigen::Vector3d> points,
                         const std::optional<PlaneModel>& plane, double dist_threshold,
                         double max_tilt_deg);
GroundSplit split_ground(const Frame& frame, const std::optional<PlaneModel>& plane,
                         double dist_threshold, double max_tilt_deg);

}  // namespace stssl::ground
