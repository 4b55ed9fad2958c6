#include "stssl/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "stssl/error.hpp"
#include "stssl/hungarian.hpp"
#include "stssl/rng.hpp"

namespace stssl::analysis {

KMeansResult kmeans(const Eigen::MatrixXd& x, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters, double tol) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (k < 1 || k > n) {
    throw InvalidArgument("k-means needs 1 <= k <= samples (k=" + std::to_string(k) +
                          ", samples=" + std::to_string(n) + ")");
  }
  const Eigen::Index kk = static_cast<Eigen::Index>(k);
  Rng rng(seed);
  KMeansResult r;
  r.centroids.resize(kk, x.cols());

  // k-means++ seeding
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  r.centroids.row(0) = x.row(static_cast<Eigen::Index>(first(rng)));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index c = 1; c < kk; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (x.row(static_cast<Eigen::Index>(i)) - r.centroids.row(c - 1)).squaredNorm());
      total += d2[i];
    }
    std::size_t pick = n - 1;
    if (total > 0.0) {
      double target = unit(rng) * total;
      for (std::size_t i = 0; i < n; ++i) {
        target -= d2[i];
        if (target <= 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    r.centroids.row(c) = x.row(static_cast<Eigen::Index>(pick));
  }

  r.labels.assign(n, 0);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < max_iters; ++it) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      const double d = (r.centroids.rowwise() - x.row(static_cast<Eigen::Index>(i)))
                           .rowwise()
                           .squaredNorm()
                           .minCoeff(&best);
      r.labels[i] = static_cast<int>(best);
      inertia += d;
    }
    r.inertia_history.push_back(inertia);
    r.inertia = inertia;
    r.iterations = it + 1;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(kk, x.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(r.labels[i]) += x.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(r.labels[i])];
    }
    for (Eigen::Index c = 0; c < kk; ++c) {
      // An empty cluster keeps its centroid.
      if (counts[static_cast<std::size_t>(c)] > 0) {
        r.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
    if (std::isfinite(prev) && prev - inertia <= tol * std::max(prev, 1e-300)) break;
    prev = inertia;
  }

  // Report inertia against the final centroids.
  double final_inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    final_inertia += (x.row(static_cast<Eigen::Index>(i)) - r.centroids.row(r.labels[i])).squaredNorm();
  }
  r.inertia = final_inertia;
  return r;
}

double best_permutation_agreement(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw InvalidArgument("label vectors differ in length");
  if (predicted.empty()) return 0.0;
  std::map<int, int> pidx, tidx;
  for (int p : predicted) pidx.emplace(p, static_cast<int>(pidx.size()));
  for (int t : truth) tidx.emplace(t, static_cast<int>(tidx.size()));
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(pidx.size()),
                                                 static_cast<Eigen::Index>(tidx.size()));
  for (std::size_t i = 0; i < predicted.size(); ++i) counts(pidx[predicted[i]], tidx[truth[i]]) += 1.0;
  const Eigen::MatrixXd cost = counts.maxCoeff() - counts.array();
  double agree = 0.0;
  for (const auto& [r, c] : track::hungarian(cost).pairs) agree += counts(r, c);
  return agree / static_cast<double>(predicted.size());
}

}  // namespace stssl::analysis
