#include "stssl/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "stssl/error.hpp"
#include "stssl/rng.hpp"

namespace stssl::pipeline {

using json = nlohmann::json;

std::uint64_t frame_ransac_seed(std::uint64_t base, std::size_t frame_index) {
  return derive_seed(base, {0x72616e73ull, frame_index});
}

PreparedFrame prepare_frame(const Frame& frame, const PipelineConfig& cfg, std::uint64_t ransac_seed) {
  PreparedFrame out;
  const auto pts = frame.xyz();
  if (pts.size() >= 3) out.plane = ground::fit_plane_ransac(pts, cfg.ransac, ransac_seed);
  const auto split =
      ground::split_ground(pts, out.plane, cfg.ransac.dist_threshold, cfg.ransac.max_tilt_deg);
  out.clusters = cluster::cluster_frame(frame, split, cfg.cluster);
  out.clusters.frame_index = frame.frame_index;
  return out;
}

std::vector<PreparedFrame> prepare_sequence(const Sequence& seq, const PipelineConfig& cfg,
                                            std::uint64_t ransac_seed, std::size_t threads) {
  cfg.cluster.validate();
  std::vector<PreparedFrame> out(seq.frames.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(seq.frames.size(), 1));

  auto work = [&](std::size_t i) {
    const auto& f = seq.frames[i];
    out[i] = prepare_frame(f, cfg, frame_ransac_seed(ransac_seed, f.frame_index));
  };
  if (threads <= 1) {
    for (std::size_t i = 0; i < seq.frames.size(); ++i) work(i);
    return out;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < seq.frames.size(); i = next++) {
        try {
          work(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<cluster::ClusterSet> cluster_sets(const std::vector<PreparedFrame>& prepared) {
  std::vector<cluster::ClusterSet> sets;
  sets.reserve(prepared.size());
  for (const auto& p : prepared) sets.push_back(p.clusters);
  return sets;
}

cluster::PurityReport sequence_purity(const Sequence& seq, const std::vector<PreparedFrame>& prepared,
                                      double threshold) {
  if (seq.frames.size() != prepared.size()) throw IntegrityError("prepared frames do not match sequence");
  std::vector<cluster::PurityReport> reports;
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    if (!seq.frames[i].has_labels()) continue;
    reports.push_back(cluster::purity(prepared[i].clusters, seq.frames[i], threshold));
  }
  if (reports.empty()) throw UnsupportedError("purity requires labeled data; no frame has labels");
  return cluster::merge_purity(reports);
}

namespace {

template <typename T>
json rle(const std::vector<T>& values) {
  json runs = json::array();
  for (std::size_t i = 0; i < values.size();) {
    std::size_t j = i;
    while (j < values.size() && values[j] == values[i]) ++j;
    runs.push_back({static_cast<int>(values[i]), j - i});
    i = j;
  }
  return runs;
}

std::vector<int> unrle(const json& runs) {
  std::vector<int> out;
  for (const auto& r : runs) {
    const int v = r.at(0).get<int>();
    const auto n = r.at(1).get<std::size_t>();
    out.insert(out.end(), n, v);
  }
  return out;
}

}  // namespace

json cluster_set_to_json(const cluster::ClusterSet& set) {
  json clusters = json::array();
  for (const auto& c : set.clusters) {
    clusters.push_back({{"id", c.id},
                        {"size", c.point_count()},
                        {"centroid", {c.centroid.x(), c.centroid.y(), c.centroid.z()}}});
  }
  return {{"frame_index", set.frame_index},
          {"num_points", set.num_points()},
          {"ground_rle", rle(set.ground_mask)},
          {"assignment_rle", rle(set.assignment)},
          {"clusters", clusters}};
}

cluster::ClusterSet cluster_set_from_json(const json& j) {
  try {
    cluster::ClusterSet set;
    set.frame_index = j.at("frame_index").get<std::size_t>();
    const auto ground = unrle(j.at("ground_rle"));
    set.assignment = unrle(j.at("assignment_rle"));
    if (ground.size() != j.at("num_points").get<std::size_t>()) {
      throw FormatError("ground mask length disagrees with num_points");
    }
    const auto& cj = j.at("clusters");
    set.clusters.resize(cj.size());
    for (std::size_t k = 0; k < cj.size(); ++k) {
      auto& c = set.clusters[k];
      c.id = cj[k].at("id").get<int>();
      if (c.id != static_cast<int>(k)) throw FormatError("cluster ids must be dense and ordered");
      const auto cen = cj[k].at("centroid").get<std::vector<double>>();
      if (cen.size() != 3) throw FormatError("centroid must have 3 entries");
      c.centroid = {cen[0], cen[1], cen[2]};
    }
    set.ground_mask.resize(ground.size());
    for (std::size_t i = 0; i < ground.size(); ++i) {
      set.ground_mask[i] = ground[i] != 0;
      if (!set.ground_mask[i]) set.non_ground_indices.push_back(i);
    }
    if (set.assignment.size() != set.non_ground_indices.size()) {
      throw FormatError("assignment length disagrees with the non-ground point count");
    }
    for (std::size_t r = 0; r < set.assignment.size(); ++r) {
      const int l = set.assignment[r];
      if (l >= 0) {
        if (static_cast<std::size_t>(l) >= set.clusters.size()) {
          throw FormatError("label " + std::to_string(l) + " refers to a missing cluster");
        }
        set.clusters[static_cast<std::size_t>(l)].members.push_back(set.non_ground_indices[r]);
      } else if (l != cluster::kNoise) {
        throw FormatError("invalid assignment " + std::to_string(l));
      }
    }
    for (std::size_t k = 0; k < cj.size(); ++k) {
      if (cj[k].at("size").get<std::size_t>() != set.clusters[k].members.size()) {
        throw FormatError("cluster " + std::to_string(k) + " size disagrees with the assignment");
      }
    }
    return set;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed cluster set: ") + e.what());
  }
}

json plane_to_json(const std::optional<ground::PlaneModel>& plane) {
  if (!plane) return nullptr;
  return {{"normal", {plane->normal.x(), plane->normal.y(), plane->normal.z()}},
          {"offset", plane->offset},
          {"inlier_count", plane->inlier_count},
          {"inlier_ratio", plane->inlier_ratio},
          {"tilt_deg", plane->tilt_deg()}};
}

}  // namespace stssl::pipeline
