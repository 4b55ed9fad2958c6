#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "stssl/encoder.hpp"
#include "stssl/track.hpp"

namespace stssl::losses {

/// ||f/|f| - c/|c|||^2 for one (online, target) pair; optionally adds the
/// gradient with respect to f. The target c is treated as a constant.
/// Throws NumericalError for zero-norm inputs.
double normalized_sq_distance(const Eigen::Ref<const Eigen::VectorXd>& f,
                              const Eigen::Ref<const Eigen::VectorXd>& c,
                              Eigen::Ref<Eigen::VectorXd> grad_f);
double normalized_sq_distance(const Eigen::Ref<const Eigen::VectorXd>& f,
                              const Eigen::Ref<const Eigen::VectorXd>& c);

struct P2cResult {
  double value = 0.0;
  std::size_t pair_count = 0;
  std::vector<Eigen::MatrixXd> grad_points;    // aligned with the point groups
  std::vector<Eigen::VectorXd> grad_clusters;  // aligned with the cluster features; always zero
};

/// Point-to-cluster loss: sum over clusters i and members j of the squared
/// distance between the unit point feature F_i[j] and the unit cluster
/// feature c_i. Gradients flow into the point side only.
P2cResult loss_p2c(std::span<const Eigen::MatrixXd> point_groups,
                   std::span<const Eigen::VectorXd> cluster_features);

/// Bank form: pairs every group of `points` with the same cluster id in
/// `clusters`. A point group without a cluster feature is an IntegrityError.
P2cResult loss_p2c(const encoder::FeatureBank& points, const encoder::FeatureBank& clusters);

struct InterResult {
  double value = 0.0;
  std::size_t pair_count = 0;
  Eigen::MatrixXd grad_m;  // N x d, gradient w.r.t. the frame-m (online) features
  Eigen::MatrixXd grad_n;  // N x d, always zero (target side)
};

/// Inter-frame loss over matched rows: sum_i ||c_m[i]/|c_m[i]| - c_n[i]/|c_n[i]|||^2.
InterResult loss_inter(const Eigen::MatrixXd& cluster_feats_m, const Eigen::MatrixXd& cluster_feats_n);

/// Bank form: row i of the result corresponds to pairs.matches[i]. A match
/// whose cluster lacks a feature in either bank is an IntegrityError.
InterResult loss_inter(const track::InterFramePairs& pairs, const encoder::FeatureBank& feats_m,
                       const encoder::FeatureBank& feats_n);

enum class RampKind { kLinear, kStep };

struct LambdaSchedule {
  double early_value = 0.0;
  double late_value = 4.0;
  double ramp_start = 0.4;  // training-progress fractions
  double ramp_end = 0.6;
  RampKind kind = RampKind::kLinear;

  void validate() const;
};

/// early_value before ramp_start, late_value from ramp_end on, linear in
/// between (step: late_value from ramp_start on). Progress outside [0, 1]
/// is clamped with a warning.
double lambda_at(double progress, const LambdaSchedule& schedule);

double loss_total(double l_p2c, double l_inter, double lambda);

struct LossReport {
  std::size_t step = 0;
  double l_p2c = 0.0;
  double l_inter = 0.0;
  double lambda = 0.0;
  double l_total = 0.0;
  std::size_t p2c_pairs = 0;
  std::size_t inter_pairs = 0;
  double lr = 0.0;
  std::size_t frame_m = 0;
  std::size_t frame_n = 0;
  std::size_t interval = 0;
  std::string stage;
  bool skipped = false;
  // Per-pair averages (logging only; the optimized quantity is the sum).
  double l_p2c_mean = 0.0;
  double l_inter_mean = 0.0;
};

nlohmann::json to_json(const LossReport& r);
/// Inverse of to_json; throws FormatError on malformed records.
LossReport report_from_json(const nlohmann::json& j);

}  // namespace stssl::losses
