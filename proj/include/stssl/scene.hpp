#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace stssl {

/// One LiDAR return. Coordinates in meters; intensity is carried through I/O
/// but no geometry or learning stage reads it.
struct Point3 {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  float intensity = 0.0f;

  Eigen::Vector3d xyz() const { return {x, y, z}; }
  bool operator==(const Point3&) const = default;
};

/// Synthetic ground truth for one point. Instance 0 is the ground surface.
struct PointLabel {
  std::int32_t instance_id = 0;
  std::int32_t class_id = 0;
  bool operator==(const PointLabel&) const = default;
};

inline constexpr std::int32_t kGroundInstance = 0;
inline constexpr std::int32_t kGroundClass = 0;

struct Frame {
  std::size_t frame_index = 0;
  std::vector<Point3> points;
  std::optional<std::vector<PointLabel>> labels;
  // Returns dropped at ingestion because a coordinate was NaN/Inf.
  std::size_t invalid_dropped = 0;

  std::size_t size() const { return points.size(); }
  bool has_labels() const { return labels.has_value(); }
  std::vector<Eigen::Vector3d> xyz() const;
};

enum class SequenceSource { kReal, kSynthetic };

struct Sequence {
  std::vector<Frame> frames;
  SequenceSource source = SequenceSource::kReal;
  double frame_rate_hz = 10.0;
  // Non-fatal ingestion notes, e.g. gaps in file numbering.
  std::vector<std::string> warnings;

  std::size_t size() const { return frames.size(); }
};

}  // namespace stssl
