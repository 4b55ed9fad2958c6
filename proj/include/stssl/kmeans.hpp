#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace stssl::analysis {

struct KMeansResult {
  std::vector<int> labels;             // one per sample row
  Eigen::MatrixXd centroids;           // k x d
  double inertia = 0.0;                // sum of squared distances to assigned centroid
  std::vector<double> inertia_history; // after each Lloyd iteration
  std::size_t iterations = 0;
};

/// k-means++ seeding followed by Lloyd iterations until the relative
/// inertia change drops to `tol` or `max_iters` is reached. Samples are
/// rows. Deterministic given seed. Throws InvalidArgument unless
/// 1 <= k <= rows.
KMeansResult kmeans(const Eigen::MatrixXd& samples, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters = 300, double tol = 1e-6);

/// Largest fraction of samples on which `predicted` agrees with `truth`
/// under a one-to-one relabeling of predicted clusters.
double best_permutation_agreement(std::span<const int> predicted, std::span<const int> truth);

}  // namespace stssl::analysis
