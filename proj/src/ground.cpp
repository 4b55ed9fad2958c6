#include "stssl/ground.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "stssl/error.hpp"
#include "stssl/rng.hpp"

namespace stssl::ground {
namespace {

constexpr double kDegPerRad = 180.0 / std::numbers::pi;

void canonicalize(Eigen::Vector3d& n, double& offset) {
  if (n.z() < 0.0) {
    n = -n;
    offset = -offset;
  }
}

double tilt_of(const Eigen::Vector3d& n) {
  return std::acos(std::clamp(std::abs(n.z()), 0.0, 1.0)) * kDegPerRad;
}

}  // namespace

double PlaneModel::tilt_deg() const { return tilt_of(normal); }

std::size_t count_inliers(std::span<const Eigen::Vector3d> points, const Eigen::Vector3d& normal,
                          double offset, double dist_threshold) {
  std::size_t count = 0;
  for (const auto& p : points) {
    if (std::abs(normal.dot(p) + offset) <= dist_threshold) ++count;
  }
  return count;
}

PlaneModel fit_plane_least_squares(std::span<const Eigen::Vector3d> points) {
  if (points.size() < 3) throw InsufficientPointsError("least-squares plane needs >= 3 points");
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& p : points) {
    const Eigen::Vector3d d = p - centroid;
    scatter.noalias() += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(scatter);
  PlaneModel plane;
  plane.normal = solver.eigenvectors().col(0).normalized();
  plane.offset = -plane.normal.dot(centroid);
  canonicalize(plane.normal, plane.offset);
  return plane;
}

std::optional<PlaneModel> fit_plane_ransac(std::span<const Eigen::Vector3d> points,
                                           const RansacConfig& cfg, std::uint64_t seed) {
  if (points.size() < 3) {
    throw InsufficientPointsError("RANSAC needs >= 3 points, got " +
                                  std::to_string(points.size()));
  }
  if (!(cfg.dist_threshold > 0.0)) throw InvalidArgument("ransac.dist_threshold must be > 0");

  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
  Eigen::Vector3d best_n = Eigen::Vector3d::UnitZ();
  double best_offset = 0.0;
  std::size_t best_count = 0;
  bool found = false;

  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    const std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    std::size_t k = pick(rng);
    if (i == j || j == k || i == k) continue;
    Eigen::Vector3d n = (points[j] - points[i]).cross(points[k] - points[i]);
    const double norm = n.norm();
    if (!(norm > 1e-12)) continue;  // collinear sample
    n /= norm;
    double offset = -n.dot(points[i]);
    canonicalize(n, offset);
    if (tilt_of(n) > cfg.max_tilt_deg) continue;
    const std::size_t c = count_inliers(points, n, offset, cfg.dist_threshold);
    if (!found || c > best_count) {
      best_n = n;
      best_offset = offset;
      best_count = c;
      found = true;
    }
  }
  if (!found) return std::nullopt;

  const double ratio = static_cast<double>(best_count) / static_cast<double>(points.size());
  if (ratio < cfg.min_inlier_ratio) return std::nullopt;

  PlaneModel best;
  best.normal = best_n;
  best.offset = best_offset;
  best.inlier_count = best_count;

  std::vector<Eigen::Vector3d> inliers;
  inliers.reserve(best_count);
  for (const auto& p : points) {
    if (std::abs(best_n.dot(p) + best_offset) <= cfg.dist_threshold) inliers.push_back(p);
  }
  if (inliers.size() >= 3) {
    PlaneModel refit = fit_plane_least_squares(inliers);
    refit.inlier_count = count_inliers(points, refit.normal, refit.offset, cfg.dist_threshold);
    if (refit.inlier_count >= best.inlier_count && refit.tilt_deg() <= cfg.max_tilt_deg) {
      best = refit;
    }
  }
  best.inlier_ratio = static_cast<double>(best.inlier_count) / static_cast<double>(points.size());
  return best;
}

std::optional<PlaneModel> fit_plane_ransac(const Frame& frame, const RansacConfig& cfg,
                                           std::uint64_t seed) {
  const auto pts = frame.xyz();
  return fit_plane_ransac(pts, cfg, seed);
}

GroundSplit split_ground(std::span<const Eigen::Vector3d> points,
                         const std::optional<PlaneModel>& plane, double dist_threshold,
                         double max_tilt_deg) {
  GroundSplit split;
  split.ground_mask.assign(points.size(), false);
  const bool usable = plane && plane->tilt_deg() <= max_tilt_deg;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const bool g = usable && std::abs(plane->signed_distance(points[i])) <= dist_threshold;
    split.ground_mask[i] = g;
    if (!g) split.non_ground_indices.push_back(i);
  }
  return split;
}

GroundSplit split_ground(const Frame& frame, const std::optional<PlaneModel>& plane,
                         double dist_threshold, double max_tilt_deg) {
  const auto pts = frame.xyz();
  return split_ground(pts, plane, dist_threshold, max_tilt_deg);
}

}  // namespace stssl::ground
