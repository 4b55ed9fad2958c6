#include "stssl/cluster.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <numeric>

#include "stssl/error.hpp"
#include "stssl/kdtree.hpp"

namespace stssl::cluster {

void ClusterFilterConfig::validate() const {
  if (!(dbscan.eps > 0.0)) throw InvalidArgument("dbscan.eps must be > 0");
  if (dbscan.min_pts < 1) throw InvalidArgument("dbscan.min_pts must be >= 1");
  if (min_cluster_size > max_cluster_size) {
    throw InvalidArgument("filter.min_size must not exceed filter.max_size");
  }
}

std::vector<int> dbscan(std::span<const Eigen::Vector3d> points, double eps, std::size_t min_pts) {
  if (!(eps > 0.0)) throw InvalidArgument("dbscan eps must be > 0");
  if (min_pts < 1) throw InvalidArgument("dbscan min_pts must be >= 1");
  constexpr int kUnvisited = -3;
  std::vector<int> labels(points.size(), kUnvisited);
  if (points.empty()) return labels;

  const KdTree tree(points);
  std::vector<std::size_t> neighbors;
  std::vector<std::size_t> expansion;
  int next_id = 0;

  for (std::size_t i = 0; i < points.size(); ++i) {
    if (labels[i] != kUnvisited) continue;
    tree.radius_search(points[i], eps, neighbors);
    if (neighbors.size() < min_pts) {
      labels[i] = kNoise;  // may still be claimed as a border point later
      continue;
    }
    const int id = next_id++;
    labels[i] = id;
    std::deque<std::size_t> queue(neighbors.begin(), neighbors.end());
    while (!queue.empty()) {
      const std::size_t j = queue.front();
      queue.pop_front();
      if (labels[j] == kNoise) labels[j] = id;  // border point
      if (labels[j] != kUnvisited) continue;
      labels[j] = id;
      tree.radius_search(points[j], eps, expansion);
      if (expansion.size() >= min_pts) {
        for (std::size_t e : expansion) {
          if (labels[e] == kUnvisited || labels[e] == kNoise) queue.push_back(e);
        }
      }
    }
  }
  return labels;
}

std::vector<int> ClusterSet::point_labels() const {
  std::vector<int> out(ground_mask.size(), kGround);
  for (std::size_t i = 0; i < non_ground_indices.size(); ++i) {
    out[non_ground_indices[i]] = assignment[i];
  }
  return out;
}

Eigen::MatrixXd ClusterSet::centroid_matrix() const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(clusters.size()), 3);
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = clusters[i].centroid.transpose();
  }
  return m;
}

ClusterSet filter_clusters(std::span<const Eigen::Vector3d> points, std::span<const int> raw,
                           std::span<const std::size_t> non_ground_indices,
                           std::vector<bool> ground_mask, const ClusterFilterConfig& cfg,
                           std::size_t frame_index) {
  cfg.validate();
  if (raw.size() != points.size() || non_ground_indices.size() != points.size()) {
    throw IntegrityError("raw assignment, points and index map differ in length");
  }
  std::map<int, std::vector<std::size_t>> by_id;  // raw id -> positions in `points`
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] >= 0) by_id[raw[i]].push_back(i);
  }

  struct Candidate {
    int raw_id;
    const std::vector<std::size_t>* positions;
  };
  std::vector<Candidate> kept;
  for (const auto& [id, pos] : by_id) {
    if (pos.size() < cfg.min_cluster_size || pos.size() > cfg.max_cluster_size) continue;
    kept.push_back({id, &pos});
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Candidate& a, const Candidate& b) {
    if (a.positions->size() != b.positions->size()) {
      return a.positions->size() > b.positions->size();
    }
    return a.raw_id < b.raw_id;
  });
  if (kept.size() > cfg.max_clusters) kept.resize(cfg.max_clusters);

  ClusterSet set;
  set.frame_index = frame_index;
  set.ground_mask = std::move(ground_mask);
  set.non_ground_indices.assign(non_ground_indices.begin(), non_ground_indices.end());
  set.assignment.assign(points.size(), kNoise);
  set.clusters.reserve(kept.size());
  for (std::size_t c = 0; c < kept.size(); ++c) {
    Cluster cl;
    cl.id = static_cast<int>(c);
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    for (std::size_t pos : *kept[c].positions) {
      set.assignment[pos] = cl.id;
      cl.members.push_back(non_ground_indices[pos]);
      sum += points[pos];
    }
    cl.centroid = sum / static_cast<double>(kept[c].positions->size());
    std::sort(cl.members.begin(), cl.members.end());
    set.clusters.push_back(std::move(cl));
  }
  return set;
}

ClusterSet filter_clusters(std::span<const Eigen::Vector3d> points, std::span<const int> raw,
                           const ClusterFilterConfig& cfg, std::size_t frame_index) {
  std::vector<std::size_t> identity(points.size());
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  return filter_clusters(points, raw, identity, std::vector<bool>(points.size(), false), cfg,
                         frame_index);
}

ClusterSet cluster_frame(const Frame& frame, const ground::GroundSplit& split,
                         const ClusterFilterConfig& cfg) {
  if (split.ground_mask.size() != frame.size()) {
    throw IntegrityError("ground split does not match frame size");
  }
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(split.non_ground_indices.size());
  for (std::size_t i : split.non_ground_indices) pts.push_back(frame.points[i].xyz());
  const auto raw = dbscan(pts, cfg.dbscan.eps, cfg.dbscan.min_pts);
  return filter_clusters(pts, raw, split.non_ground_indices, split.ground_mask, cfg,
                         frame.frame_index);
}

PurityReport purity(const ClusterSet& set, const Frame& labeled_frame, double threshold) {
  if (!labeled_frame.labels) {
    throw UnsupportedError("purity requires labeled data; frame " +
                           std::to_string(labeled_frame.frame_index) + " has no labels");
  }
  const auto& labels = *labeled_frame.labels;
  PurityReport report;
  report.threshold = threshold;
  for (const auto& c : set.clusters) {
    std::map<std::int32_t, std::size_t> counts;
    for (std::size_t m : c.members) {
      if (m >= labels.size()) throw IntegrityError("cluster member outside labeled frame");
      ++counts[labels[m].class_id];
    }
    ClusterPurity cp;
    cp.cluster_id = c.id;
    cp.point_count = c.members.size();
    std::size_t best = 0;
    for (const auto& [cls, n] : counts) {
      if (n > best) {
        best = n;
        cp.dominant_class = cls;
      }
    }
    cp.fraction = c.members.empty() ? 0.0
                                    : static_cast<double>(best) / static_cast<double>(c.members.size());
    if (cp.fraction >= threshold) ++report.pure_count;
    report.clusters.push_back(cp);
  }
  report.proportion = report.clusters.empty()
                          ? 0.0
                          : static_cast<double>(report.pure_count) /
                                static_cast<double>(report.clusters.size());
  return report;
}

PurityReport merge_purity(std::span<const PurityReport> reports) {
  PurityReport out;
  if (!reports.empty()) out.threshold = reports.front().threshold;
  for (const auto& r : reports) {
    out.clusters.insert(out.clusters.end(), r.clusters.begin(), r.clusters.end());
    out.pure_count += r.pure_count;
  }
  out.proportion = out.clusters.empty() ? 0.0
                                        : static_cast<double>(out.pure_count) /
                                              static_cast<double>(out.clusters.size());
  return out;
}

}  // namespace stssl::cluster
