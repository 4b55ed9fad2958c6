#include "stssl/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stssl {

KdTree::KdTree(std::span<const Eigen::Vector3d> points)
    : points_(points.begin(), points.end()), order_(points.size()) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, points_.size());
  }
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back({begin, end, -1, 0.0, 0, 0});
  if (end - begin <= kLeafSize) return id;

  Eigen::Vector3d lo = points_[order_[begin]], hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] - lo[axis] <= 0.0) return id;  // all coincident

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  const double split = points_[order_[mid]][axis];
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

template <typename Visit>
void KdTree::visit_ball(const Eigen::Vector3d& q, double r2, Visit&& visit) const {
  if (nodes_.empty()) return;
  // Slightly conservative pruning radius; membership is decided on r2 exactly.
  const double r = std::sqrt(r2) * (1.0 + 1e-12);
  std::vector<std::size_t> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        if ((points_[idx] - q).squaredNorm() <= r2) visit(idx);
      }
      continue;
    }
    // Left holds coords <= split, right holds coords >= split.
    const double d = q[node.axis] - node.split;
    if (d <= r) stack.push_back(node.left);
    if (d >= -r) stack.push_back(node.right);
  }
}

void KdTree::radius_search(const Eigen::Vector3d& q, double radius,
                           std::vector<std::size_t>& out) const {
  out.clear();
  visit_ball(q, radius * radius, [&](std::size_t i) { out.push_back(i); });
  std::sort(out.begin(), out.end());
}

std::vector<std::size_t> KdTree::radius_search(const Eigen::Vector3d& q, double radius) const {
  std::vector<std::size_t> out;
  radius_search(q, radius, out);
  return out;
}

std::size_t KdTree::radius_count(const Eigen::Vector3d& q, double radius) const {
  std::size_t n = 0;
  visit_ball(q, radius * radius, [&](std::size_t) { ++n; });
  return n;
}

}  // namespace stssl
