#pragma once

#include <utility>
#include <vector>

#include <Eigen/Core>

namespace stssl::track {

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (row, col), sorted by row
  double cost = 0.0;
};

/// Minimum-cost injective assignment covering min(rows, cols) entries
/// (shortest augmenting paths with potentials, O(n^2 m)). Costs must be
/// finite and non-negative; throws InvalidArgument otherwise. An empty
/// matrix yields an empty assignment.
Assignment hungarian(const Eigen::MatrixXd& cost);

}  // namespace stssl::track
