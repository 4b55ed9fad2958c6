#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "stssl/cluster.hpp"
#include "stssl/ground.hpp"
#include "stssl/mlp.hpp"
#include "stssl/scene.hpp"

namespace stssl::encoder {

// ---------------------------------------------------------------------------
// Views and augmentation

/// A (possibly augmented) copy of a frame's geometry with cluster
/// membership carried per point.
struct View {
  std::vector<Eigen::Vector3d> points;
  std::vector<double> heights;           // height above the ground plane, view units
  std::vector<int> cluster_of;           // cluster id, cluster::kNoise or cluster::kGround
  std::vector<std::size_t> source_index; // index of the point in the source frame
  std::size_t num_clusters = 0;          // M of the source cluster set
  std::vector<int> excluded_clusters;    // clusters with no surviving point
  std::vector<std::size_t> dropped;      // source indices removed by clipping

  std::size_t size() const { return points.size(); }
  /// Row indices of points that belong to a kept cluster.
  std::vector<std::size_t> clustered_rows() const;
};

/// Identity view. Heights come from `plane` when present, otherwise z.
View make_view(const Frame& frame, const cluster::ClusterSet& set,
               const std::optional<ground::PlaneModel>& plane);

struct AugmentSpec {
  double flip_x_prob = 0.5;      // x -> -x
  double flip_y_prob = 0.5;      // y -> -y
  double max_rotation = 3.141592653589793;  // radians; angle ~ U[-max, max] about z
  double scale_range = 0.05;     // factor ~ U[1 - s, 1 + s]
  double clip_min_fraction = 0.9;  // crop keeps >= this fraction of the x/y extent; 1 = off
  std::uint64_t seed = 0;

  static AugmentSpec identity();
  void validate() const;
};

struct AugmentRecord {
  bool flip_x = false;
  bool flip_y = false;
  double angle = 0.0;
  double scale = 1.0;
  bool clipped = false;
  Eigen::Vector2d clip_min = Eigen::Vector2d::Zero();
  Eigen::Vector2d clip_max = Eigen::Vector2d::Zero();
};

/// Flip, rotate about z, scale, then crop; deterministic given spec.seed.
/// Rotation and flips are isometries; scaling multiplies every distance
/// (and height) by the sampled factor. Clusters losing all points are
/// appended to excluded_clusters.
View augment(const View& view, const AugmentSpec& spec, AugmentRecord* record = nullptr);
View augment(const Frame& frame, const cluster::ClusterSet& set,
             const std::optional<ground::PlaneModel>& plane, const AugmentSpec& spec,
             AugmentRecord* record = nullptr);

// ---------------------------------------------------------------------------
// Per-point encoder

struct EncoderConfig {
  int dim = 32;                        // d, output feature width
  std::vector<int> hiddens{64, 64};    // encoder hidden widths
  int head_hidden = 64;                // projector / predictor hidden width
  double coord_scale = 10.0;           // meters mapped to unit input
  double density_radius = 0.5;         // meters

  void validate() const;
};

inline constexpr int kDescriptorDim = 5;  // x, y, z, height, local density

/// Rows of (x, y, z, height, log1p(neighbors within density_radius)) with the
/// metric entries divided by coord_scale; one row per requested view row.
Eigen::MatrixXd descriptors(const View& view, std::span<const std::size_t> rows,
                            const EncoderConfig& cfg);

nn::Mlp make_encoder(const EncoderConfig& cfg);

/// y = f(p) for the requested view rows.
Eigen::MatrixXd encode_points(const nn::Mlp& encoder, const View& view,
                              std::span<const std::size_t> rows, const EncoderConfig& cfg);
/// y = f(p) for every point of the view (N x d).
Eigen::MatrixXd encode_points(const nn::Mlp& encoder, const View& view, const EncoderConfig& cfg);

// ---------------------------------------------------------------------------
// Grouping and pooling

struct ClusterGroup {
  int cluster_id = 0;
  std::vector<std::size_t> rows;     // rows of the source feature matrix
  Eigen::MatrixXd grouped;           // F_i, N_i x d
  Eigen::VectorXd pooled;            // c_i, componentwise max of grouped
  std::vector<std::size_t> argmax;   // per component: local row attaining the max
};

enum class ViewTag { kPointView, kClusterView };
enum class NetworkTag { kOnline, kTarget };

struct FeatureBank {
  std::vector<ClusterGroup> groups;  // ascending cluster id; empty clusters omitted
  ViewTag view = ViewTag::kPointView;
  NetworkTag network = NetworkTag::kOnline;

  const ClusterGroup* find(int cluster_id) const;
  /// Pooled features as rows for ids 0..num_clusters-1; missing ids throw.
  Eigen::MatrixXd pooled_matrix(std::size_t num_clusters) const;
};

/// Groups feature rows by `cluster_of_rows` (negative = unclustered) and
/// max-pools each group.
FeatureBank group_and_pool(const Eigen::MatrixXd& features, std::span<const int> cluster_of_rows);

// ---------------------------------------------------------------------------
// BYOL-style online / target scaffold

struct ByolState {
  nn::Mlp online_encoder;
  nn::Mlp online_projector;
  nn::Mlp predictor;
  nn::Mlp target_encoder;
  nn::Mlp target_projector;
  double momentum = 0.99;
};

/// Fresh online networks; the target starts as an exact copy.
ByolState make_byol(const EncoderConfig& cfg, double momentum, std::uint64_t seed);

/// target <- m * target + (1 - m) * online. Throws InvalidArgument on shape mismatch.
void ema_update(ByolState& state);

/// Re-draws projector and predictor (target projector copies the new
/// online projector); encoders are untouched.
void reinit_heads(ByolState& state, std::uint64_t seed);

/// Online head output q(g(f(x))) and target head output g_t(f_t(x)).
struct HeadCache {
  nn::Mlp::Cache encoder, projector, predictor;
};
Eigen::MatrixXd online_forward(const ByolState& s, const Eigen::MatrixXd& x, HeadCache* cache);
Eigen::MatrixXd target_forward(const ByolState& s, const Eigen::MatrixXd& x);

struct ByolGrads {
  Eigen::VectorXd encoder, projector, predictor;
  explicit ByolGrads(const ByolState& s);
  ByolGrads() = default;
};
/// Backpropagates dLoss/d(online head output) into `grads`.
void online_backward(const ByolState& s, const HeadCache& cache, const Eigen::MatrixXd& grad_out,
                     ByolGrads& grads);

}  // namespace stssl::encoder
