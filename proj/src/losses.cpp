#include "stssl/losses.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "stssl/error.hpp"
#include "stssl/log.hpp"

namespace stssl::losses {

double normalized_sq_distance(const Eigen::Ref<const Eigen::VectorXd>& f,
                              const Eigen::Ref<const Eigen::VectorXd>& c,
                              Eigen::Ref<Eigen::VectorXd> grad_f) {
  const double nf = f.norm();
  const double nc = c.norm();
  if (!(nf > 0.0) || !(nc > 0.0) || !std::isfinite(nf) || !std::isfinite(nc)) {
    throw NumericalError("cannot normalize a zero-norm or non-finite feature vector");
  }
  const Eigen::VectorXd u = f / nf;
  const Eigen::VectorXd v = c / nc;
  const Eigen::VectorXd diff = u - v;
  // d/df ||u - v||^2 = (2/|f|) (I - u u^T)(u - v) = (2/|f|)(u (u.v) - v)
  grad_f.noalias() += (2.0 / nf) * (u * u.dot(v) - v);
  return diff.squaredNorm();
}

double normalized_sq_distance(const Eigen::Ref<const Eigen::VectorXd>& f,
                              const Eigen::Ref<const Eigen::VectorXd>& c) {
  const double nf = f.norm();
  const double nc = c.norm();
  if (!(nf > 0.0) || !(nc > 0.0) || !std::isfinite(nf) || !std::isfinite(nc)) {
    throw NumericalError("cannot normalize a zero-norm or non-finite feature vector");
  }
  return (f / nf - c / nc).squaredNorm();
}

P2cResult loss_p2c(std::span<const Eigen::MatrixXd> point_groups,
                   std::span<const Eigen::VectorXd> cluster_features) {
  if (point_groups.size() != cluster_features.size()) {
    throw IntegrityError("point groups and cluster features reference different cluster sets");
  }
  P2cResult r;
  r.grad_points.reserve(point_groups.size());
  r.grad_clusters.reserve(point_groups.size());
  for (std::size_t i = 0; i < point_groups.size(); ++i) {
    const auto& f = point_groups[i];
    const auto& c = cluster_features[i];
    if (f.cols() != c.size()) throw InvalidArgument("point and cluster feature widths differ");
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(f.rows(), f.cols());
    Eigen::VectorXd grow(f.cols());
    for (Eigen::Index j = 0; j < f.rows(); ++j) {
      grow.setZero();
      r.value += normalized_sq_distance(f.row(j).transpose(), c, grow);
      g.row(j) = grow.transpose();
    }
    r.pair_count += static_cast<std::size_t>(f.rows());
    r.grad_points.push_back(std::move(g));
    r.grad_clusters.push_back(Eigen::VectorXd::Zero(c.size()));
  }
  return r;
}

P2cResult loss_p2c(const encoder::FeatureBank& points, const encoder::FeatureBank& clusters) {
  std::vector<Eigen::MatrixXd> groups;
  std::vector<Eigen::VectorXd> pooled;
  groups.reserve(points.groups.size());
  pooled.reserve(points.groups.size());
  for (const auto& g : points.groups) {
    const auto* c = clusters.find(g.cluster_id);
    if (!c) {
      throw IntegrityError("cluster " + std::to_string(g.cluster_id) +
                           " has point features but no cluster feature");
    }
    groups.push_back(g.grouped);
    pooled.push_back(c->pooled);
  }
  return loss_p2c(groups, pooled);
}

InterResult loss_inter(const Eigen::MatrixXd& cm, const Eigen::MatrixXd& cn) {
  if (cm.rows() != cn.rows() || cm.cols() != cn.cols()) {
    throw IntegrityError("matched cluster feature matrices differ in shape");
  }
  InterResult r;
  r.pair_count = static_cast<std::size_t>(cm.rows());
  r.grad_m = Eigen::MatrixXd::Zero(cm.rows(), cm.cols());
  r.grad_n = Eigen::MatrixXd::Zero(cn.rows(), cn.cols());
  Eigen::VectorXd grow(cm.cols());
  for (Eigen::Index i = 0; i < cm.rows(); ++i) {
    grow.setZero();
    r.value += normalized_sq_distance(cm.row(i).transpose(), cn.row(i).transpose(), grow);
    r.grad_m.row(i) = grow.transpose();
  }
  return r;
}

InterResult loss_inter(const track::InterFramePairs& pairs, const encoder::FeatureBank& feats_m,
                       const encoder::FeatureBank& feats_n) {
  if (pairs.matches.empty()) return {};
  const auto* first = feats_m.groups.empty() ? nullptr : &feats_m.groups.front();
  if (!first) throw IntegrityError("matched clusters but no frame-m features");
  const Eigen::Index d = first->pooled.size();
  Eigen::MatrixXd cm(static_cast<Eigen::Index>(pairs.count()), d);
  Eigen::MatrixXd cn(static_cast<Eigen::Index>(pairs.count()), d);
  for (std::size_t i = 0; i < pairs.matches.size(); ++i) {
    const auto [a, b] = pairs.matches[i];
    const auto* ga = feats_m.find(a);
    const auto* gb = feats_n.find(b);
    if (!ga || !gb) {
      throw IntegrityError("missing cluster feature for match (" + std::to_string(a) + ", " +
                           std::to_string(b) + ")");
    }
    cm.row(static_cast<Eigen::Index>(i)) = ga->pooled.transpose();
    cn.row(static_cast<Eigen::Index>(i)) = gb->pooled.transpose();
  }
  return loss_inter(cm, cn);
}

void LambdaSchedule::validate() const {
  if (early_value < 0.0 || late_value < early_value) {
    throw InvalidArgument("lambda schedule must be non-negative and nondecreasing");
  }
  if (!(ramp_start >= 0.0 && ramp_start <= ramp_end && ramp_end <= 1.0)) {
    throw InvalidArgument("lambda ramp must satisfy 0 <= start <= end <= 1");
  }
}

double lambda_at(double progress, const LambdaSchedule& s) {
  if (!(progress >= 0.0 && progress <= 1.0)) {
    log::warning("lambda_at: progress " + std::to_string(progress) + " clamped to [0, 1]");
    progress = std::isnan(progress) ? 0.0 : std::clamp(progress, 0.0, 1.0);
  }
  if (s.kind == RampKind::kStep) return progress >= s.ramp_start ? s.late_value : s.early_value;
  if (progress < s.ramp_start) return s.early_value;
  if (progress >= s.ramp_end) return s.late_value;
  const double t = (progress - s.ramp_start) / (s.ramp_end - s.ramp_start);
  return s.early_value + t * (s.late_value - s.early_value);
}

double loss_total(double l_p2c, double l_inter, double lambda) { return l_p2c + lambda * l_inter; }

nlohmann::json to_json(const LossReport& r) {
  return {{"step", r.step},
          {"stage", r.stage},
          {"skipped", r.skipped},
          {"frame_m", r.frame_m},
          {"frame_n", r.frame_n},
          {"interval", r.interval},
          {"lr", r.lr},
          {"lambda", r.lambda},
          {"l_p2c", r.l_p2c},
          {"l_inter", r.l_inter},
          {"l_total", r.l_total},
          {"p2c_pairs", r.p2c_pairs},
          {"inter_pairs", r.inter_pairs},
          {"l_p2c_mean", r.l_p2c_mean},
          {"l_inter_mean", r.l_inter_mean}};
}

LossReport report_from_json(const nlohmann::json& j) {
  try {
    LossReport r;
    r.step = j.at("step").get<std::size_t>();
    r.stage = j.at("stage").get<std::string>();
    r.skipped = j.at("skipped").get<bool>();
    r.frame_m = j.at("frame_m").get<std::size_t>();
    r.frame_n = j.at("frame_n").get<std::size_t>();
    r.interval = j.at("interval").get<std::size_t>();
    r.lr = j.at("lr").get<double>();
    r.lambda = j.at("lambda").get<double>();
    r.l_p2c = j.at("l_p2c").get<double>();
    r.l_inter = j.at("l_inter").get<double>();
    r.l_total = j.at("l_total").get<double>();
    r.p2c_pairs = j.at("p2c_pairs").get<std::size_t>();
    r.inter_pairs = j.at("inter_pairs").get<std::size_t>();
    r.l_p2c_mean = j.at("l_p2c_mean").get<double>();
    r.l_inter_mean = j.at("l_inter_mean").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed loss record: ") + e.what());
  }
}

}  // namespace stssl::losses
