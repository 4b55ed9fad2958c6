#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "stssl/scene.hpp"

namespace stssl::synth {

enum class Shape { kBox, kCylinder };

struct Pose {
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double yaw = 0.0;  // radians about +z
};

/// A rigid object sitting at `translation` (base center) in each frame.
/// Box size = (length_x, width_y, height_z); cylinder size = (diameter, -, height).
/// A disengaged pose means the object is absent (occluded / out of view).
struct SynthObject {
  Shape shape = Shape::kBox;
  Eigen::Vector3d size = Eigen::Vector3d::Ones();
  std::vector<std::optional<Pose>> trajectory;  // one entry per frame
  double point_density = 100.0;                 // samples per m^2 of surface
  std::int32_t class_id = 1;
};

struct GroundSpec {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();  // plane n.p + offset = 0
  double offset = 0.0;
  double half_extent = 20.0;  // square patch, meters
  double noise_sigma = 0.01;  // along the normal
  double point_density = 4.0;
  bool enabled = true;
};

struct SynthSceneSpec {
  std::size_t n_frames = 1;
  std::vector<SynthObject> objects;
  GroundSpec ground;
  Eigen::Vector3d sensor_origin{0.0, 0.0, 1.73};
  // Keep only samples on faces whose outward normal points toward the sensor.
  bool angle_dependent_sampling = false;
  // Per-frame isotropic jitter added on top of the rigid surface samples.
  double frame_jitter_sigma = 0.0;
};

/// Ground-truth association table. Instance ids are 1-based object indices.
struct GroundTruth {
  struct FrameEntry {
    std::size_t frame_index = 0;
    std::vector<std::int32_t> instances;          // present with >= 1 point
    std::vector<std::size_t> point_counts;        // aligned with instances
    std::vector<Eigen::Vector3d> displacements;   // since previous frame, aligned
  };
  std::vector<FrameEntry> frames;
  std::vector<std::int32_t> object_classes;  // index = instance_id - 1
};

struct SyntheticSequence {
  Sequence sequence;
  GroundTruth truth;
};

/// Pure function of (spec, seed). Surfaces are sampled once per object in
/// its local frame and rigidly moved per frame, so a static object yields
/// identical points in every frame. Throws InvalidArgument on degenerate
/// objects or trajectories whose length differs from n_frames.
SyntheticSequence generate_synthetic(const SynthSceneSpec& spec, std::uint64_t seed);

/// Outward unit normals and centers of the five sampled box faces
/// (+x, -x, +y, -y, top) in world coordinates for a given pose.
struct BoxFace {
  Eigen::Vector3d center;
  Eigen::Vector3d normal;
  Eigen::Vector2d half_extent;  // in-plane half sizes
};
std::vector<BoxFace> box_faces(const Eigen::Vector3d& size, const Pose& pose);

void write_ground_truth_json(const std::filesystem::path& path, const GroundTruth& truth);
GroundTruth read_ground_truth_json(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Presets

/// A box (class 1) and a cylinder (class 2) drifting slowly in opposite
/// directions, each roughly 450-700 points.
SynthSceneSpec two_object_spec(std::size_t n_frames);

/// `n_objects` boxes and cylinders, one lane each (4 m apart), moving along
/// x at 0.1-0.4 m per frame. Each object is absent from a frame with
/// probability `occlusion_rate`, drawn independently from `seed`.
SynthSceneSpec traffic_spec(std::size_t n_frames, std::size_t n_objects, double occlusion_rate,
                            std::uint64_t seed);

/// Static objects of three classes spaced well beyond the largest sweep radius.
SynthSceneSpec purity_spec(std::size_t n_frames);

/// Spec from JSON: {"n_frames", "ground": {...}, "objects": [{"shape",
/// "size", "class_id", "point_density", "start", "velocity", "yaw",
/// "absent": [frames]}], "angle_dependent_sampling", "frame_jitter_sigma"}.
/// Throws FormatError on malformed input.
SynthSceneSpec spec_from_json(const nlohmann::json& j);

}  // namespace stssl::synth
