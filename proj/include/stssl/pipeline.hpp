#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stssl/cluster.hpp"
#include "stssl/config.hpp"
#include "stssl/ground.hpp"
#include "stssl/scene.hpp"
#include "stssl/track.hpp"

namespace stssl::pipeline {

/// Ground plane and over-segmentation of one frame.
struct PreparedFrame {
  std::optional<ground::PlaneModel> plane;
  cluster::ClusterSet clusters;
};

/// Frame-specific RANSAC seed, so results do not depend on processing order.
std::uint64_t frame_ransac_seed(std::uint64_t base, std::size_t frame_index);

/// RANSAC ground removal followed by DBSCAN + size filtering. Frames with
/// fewer than 3 points have no ground.
PreparedFrame prepare_frame(const Frame& frame, const PipelineConfig& cfg, std::uint64_t ransac_seed);

/// prepare_frame over every frame; `threads` workers (0 = hardware
/// concurrency). The result does not depend on the thread count.
std::vector<PreparedFrame> prepare_sequence(const Sequence& seq, const PipelineConfig& cfg,
                                            std::uint64_t ransac_seed, std::size_t threads = 1);

std::vector<cluster::ClusterSet> cluster_sets(const std::vector<PreparedFrame>& prepared);

/// Purity over every labeled frame; UnsupportedError when none is labeled.
cluster::PurityReport sequence_purity(const Sequence& seq, const std::vector<PreparedFrame>& prepared,
                                      double threshold = 0.9);

/// Run-length-encoded ground mask and assignment, plus cluster centroids
/// and sizes.
nlohmann::json cluster_set_to_json(const cluster::ClusterSet& set);
/// Inverse of cluster_set_to_json; throws FormatError on malformed input.
cluster::ClusterSet cluster_set_from_json(const nlohmann::json& j);

nlohmann::json plane_to_json(const std::optional<ground::PlaneModel>& plane);

}  // namespace stssl::pipeline
