#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace stssl {

/// Static 3-d tree with exact Euclidean radius queries. Holds a copy of the
/// points so the tree stays valid independently of the caller's buffer.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Eigen::Vector3d> points);

  /// Indices of all points with ||p - q|| <= radius, sorted ascending.
  std::vector<std::size_t> radius_search(const Eigen::Vector3d& q, double radius) const;
  void radius_search(const Eigen::Vector3d& q, double radius, std::vector<std::size_t>& out) const;
  std::size_t radius_count(const Eigen::Vector3d& q, double radius) const;

  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    std::size_t begin = 0, end = 0;  // range in order_
    int axis = -1;                   // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end);
  template <typename Visit>
  void visit_ball(const Eigen::Vector3d& q, double r2, Visit&& visit) const;

  static constexpr std::size_t kLeafSize = 16;
  std::vector<Eigen::Vector3d> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace stssl
