#include "stssl/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "stssl/error.hpp"
#include "stssl/kdtree.hpp"
#include "stssl/rng.hpp"

namespace stssl::encoder {

// ---------------------------------------------------------------------------
// Views

std::vector<std::size_t> View::clustered_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < cluster_of.size(); ++i) {
    if (cluster_of[i] >= 0) rows.push_back(i);
  }
  return rows;
}

View make_view(const Frame& frame, const cluster::ClusterSet& set,
               const std::optional<ground::PlaneModel>& plane) {
  if (set.num_points() != frame.size()) {
    throw IntegrityError("cluster set does not match frame " + std::to_string(frame.frame_index));
  }
  View v;
  v.num_clusters = set.num_clusters();
  v.cluster_of = set.point_labels();
  v.points.reserve(frame.size());
  v.heights.reserve(frame.size());
  v.source_index.reserve(frame.size());
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const Eigen::Vector3d p = frame.points[i].xyz();
    v.points.push_back(p);
    v.heights.push_back(plane ? plane->signed_distance(p) : p.z());
    v.source_index.push_back(i);
  }
  return v;
}

AugmentSpec AugmentSpec::identity() {
  AugmentSpec s;
  s.flip_x_prob = 0.0;
  s.flip_y_prob = 0.0;
  s.max_rotation = 0.0;
  s.scale_range = 0.0;
  s.clip_min_fraction = 1.0;
  return s;
}

void AugmentSpec::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(flip_x_prob) || !prob(flip_y_prob)) throw InvalidArgument("flip probabilities must be in [0, 1]");
  if (!(max_rotation >= 0.0)) throw InvalidArgument("aug.max_rotation must be >= 0");
  if (!(scale_range >= 0.0 && scale_range < 1.0)) throw InvalidArgument("aug.scale_range must be in [0, 1)");
  if (!(clip_min_fraction > 0.0 && clip_min_fraction <= 1.0)) {
    throw InvalidArgument("aug.clip_min_fraction must be in (0, 1]");
  }
}

View augment(const View& view, const AugmentSpec& spec, AugmentRecord* record) {
  spec.validate();
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Draws happen unconditionally so each parameter consumes a fixed slot of
  // the stream regardless of the others.
  AugmentRecord rec;
  rec.flip_x = unit(rng) < spec.flip_x_prob;
  rec.flip_y = unit(rng) < spec.flip_y_prob;
  const double u_angle = unit(rng);
  const double u_scale = unit(rng);
  const double u_fx = unit(rng), u_fy = unit(rng), u_ox = unit(rng), u_oy = unit(rng);
  rec.angle = spec.max_rotation > 0.0 ? (2.0 * u_angle - 1.0) * spec.max_rotation : 0.0;
  rec.scale = spec.scale_range > 0.0 ? 1.0 + (2.0 * u_scale - 1.0) * spec.scale_range : 1.0;

  View out = view;
  const double c = std::cos(rec.angle), s = std::sin(rec.angle);
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    Eigen::Vector3d& p = out.points[i];
    if (rec.flip_x) p.x() = -p.x();
    if (rec.flip_y) p.y() = -p.y();
    if (rec.angle != 0.0) {
      const double x = c * p.x() - s * p.y();
      const double y = s * p.x() + c * p.y();
      p.x() = x;
      p.y() = y;
    }
    if (rec.scale != 1.0) {
      p *= rec.scale;
      out.heights[i] *= rec.scale;
    }
  }

  if (spec.clip_min_fraction < 1.0 && !out.points.empty()) {
    Eigen::Vector2d lo = out.points.front().head<2>(), hi = lo;
    for (const auto& p : out.points) {
      lo = lo.cwiseMin(p.head<2>());
      hi = hi.cwiseMax(p.head<2>());
    }
    const Eigen::Vector2d extent = hi - lo;
    const double fx = spec.clip_min_fraction + (1.0 - spec.clip_min_fraction) * u_fx;
    const double fy = spec.clip_min_fraction + (1.0 - spec.clip_min_fraction) * u_fy;
    const Eigen::Vector2d size(fx * extent.x(), fy * extent.y());
    rec.clip_min = lo + Eigen::Vector2d(u_ox * (extent.x() - size.x()), u_oy * (extent.y() - size.y()));
    rec.clip_max = rec.clip_min + size;
    rec.clipped = true;

    View kept;
    kept.num_clusters = out.num_clusters;
    kept.excluded_clusters = out.excluded_clusters;
    kept.dropped = out.dropped;
    for (std::size_t i = 0; i < out.points.size(); ++i) {
      const auto& p = out.points[i];
      const bool inside = p.x() >= rec.clip_min.x() && p.x() <= rec.clip_max.x() &&
                          p.y() >= rec.clip_min.y() && p.y() <= rec.clip_max.y();
      if (!inside) {
        kept.dropped.push_back(out.source_index[i]);
        continue;
      }
      kept.points.push_back(p);
      kept.heights.push_back(out.heights[i]);
      kept.cluster_of.push_back(out.cluster_of[i]);
      kept.source_index.push_back(out.source_index[i]);
    }
    out = std::move(kept);
  }

  std::vector<char> present(out.num_clusters, 0);
  for (int id : out.cluster_of) {
    if (id >= 0 && static_cast<std::size_t>(id) < present.size()) present[id] = 1;
  }
  for (std::size_t id = 0; id < present.size(); ++id) {
    const int cid = static_cast<int>(id);
    if (!present[id] && std::find(out.excluded_clusters.begin(), out.excluded_clusters.end(), cid) ==
                            out.excluded_clusters.end()) {
      out.excluded_clusters.push_back(cid);
    }
  }
  if (record) *record = rec;
  return out;
}

View augment(const Frame& frame, const cluster::ClusterSet& set,
             const std::optional<ground::PlaneModel>& plane, const AugmentSpec& spec,
             AugmentRecord* record) {
  return augment(make_view(frame, set, plane), spec, record);
}

// ---------------------------------------------------------------------------
// Encoder

void EncoderConfig::validate() const {
  if (dim <= 0 || head_hidden <= 0) throw InvalidArgument("encoder widths must be > 0");
  for (int h : hiddens) {
    if (h <= 0) throw InvalidArgument("encoder.hiddens entries must be > 0");
  }
  if (!(coord_scale > 0.0)) throw InvalidArgument("encoder.coord_scale must be > 0");
  if (!(density_radius > 0.0)) throw InvalidArgument("encoder.density_radius must be > 0");
}

Eigen::MatrixXd descriptors(const View& view, std::span<const std::size_t> rows,
                            const EncoderConfig& cfg) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), kDescriptorDim);
  if (rows.empty()) return x;
  const KdTree tree(view.points);
  const double inv = 1.0 / cfg.coord_scale;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t i = rows[r];
    if (i >= view.size()) throw InvalidArgument("descriptor row out of range");
    const Eigen::Vector3d& p = view.points[i];
    const auto e = static_cast<Eigen::Index>(r);
    x(e, 0) = p.x() * inv;
    x(e, 1) = p.y() * inv;
    x(e, 2) = p.z() * inv;
    x(e, 3) = view.heights[i] * inv;
    x(e, 4) = std::log1p(static_cast<double>(tree.radius_count(p, cfg.density_radius)));
  }
  return x;
}

nn::Mlp make_encoder(const EncoderConfig& cfg) {
  cfg.validate();
  std::vector<int> widths{kDescriptorDim};
  widths.insert(widths.end(), cfg.hiddens.begin(), cfg.hiddens.end());
  widths.push_back(cfg.dim);
  return nn::Mlp(widths);
}

Eigen::MatrixXd encode_points(const nn::Mlp& encoder, const View& view,
                              std::span<const std::size_t> rows, const EncoderConfig& cfg) {
  return encoder.forward(descriptors(view, rows, cfg));
}

Eigen::MatrixXd encode_points(const nn::Mlp& encoder, const View& view, const EncoderConfig& cfg) {
  std::vector<std::size_t> rows(view.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return encode_points(encoder, view, rows, cfg);
}

// ---------------------------------------------------------------------------
// Pooling

const ClusterGroup* FeatureBank::find(int cluster_id) const {
  auto it = std::lower_bound(groups.begin(), groups.end(), cluster_id,
                             [](const ClusterGroup& g, int id) { return g.cluster_id < id; });
  return it != groups.end() && it->cluster_id == cluster_id ? &*it : nullptr;
}

Eigen::MatrixXd FeatureBank::pooled_matrix(std::size_t num_clusters) const {
  if (groups.empty() && num_clusters == 0) return Eigen::MatrixXd(0, 0);
  const Eigen::Index d = groups.empty() ? 0 : groups.front().pooled.size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(num_clusters), d);
  for (std::size_t i = 0; i < num_clusters; ++i) {
    const auto* g = find(static_cast<int>(i));
    if (!g) throw IntegrityError("no pooled feature for cluster " + std::to_string(i));
    m.row(static_cast<Eigen::Index>(i)) = g->pooled.transpose();
  }
  return m;
}

FeatureBank group_and_pool(const Eigen::MatrixXd& features, std::span<const int> cluster_of_rows) {
  if (static_cast<std::size_t>(features.rows()) != cluster_of_rows.size()) {
    throw InvalidArgument("feature rows and membership differ in length");
  }
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t r = 0; r < cluster_of_rows.size(); ++r) {
    if (cluster_of_rows[r] >= 0) members[cluster_of_rows[r]].push_back(r);
  }
  FeatureBank bank;
  const Eigen::Index d = features.cols();
  for (auto& [id, rows] : members) {
    ClusterGroup g;
    g.cluster_id = id;
    g.grouped.resize(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      g.grouped.row(static_cast<Eigen::Index>(j)) = features.row(static_cast<Eigen::Index>(rows[j]));
    }
    g.pooled.resize(d);
    g.argmax.resize(static_cast<std::size_t>(d));
    for (Eigen::Index t = 0; t < d; ++t) {
      Eigen::Index best = 0;
      g.pooled(t) = g.grouped.col(t).maxCoeff(&best);
      g.argmax[static_cast<std::size_t>(t)] = static_cast<std::size_t>(best);
    }
    g.rows = std::move(rows);
    bank.groups.push_back(std::move(g));
  }
  return bank;
}

// ---------------------------------------------------------------------------
// BYOL scaffold

namespace {
enum : std::uint64_t { kTagEncoder = 11, kTagProjector = 12, kTagPredictor = 13 };

nn::Mlp make_head(int dim, int hidden) { return nn::Mlp({dim, hidden, dim}); }
}  // namespace

ByolState make_byol(const EncoderConfig& cfg, double momentum, std::uint64_t seed) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw InvalidArgument("byol.momentum must be in [0, 1]");
  ByolState s;
  s.momentum = momentum;
  s.online_encoder = make_encoder(cfg);
  s.online_encoder.init(derive_seed(seed, {kTagEncoder}));
  s.online_projector = make_head(cfg.dim, cfg.head_hidden);
  s.online_projector.init(derive_seed(seed, {kTagProjector}));
  s.predictor = make_head(cfg.dim, cfg.head_hidden);
  s.predictor.init(derive_seed(seed, {kTagPredictor}));
  s.target_encoder = s.online_encoder;
  s.target_projector = s.online_projector;
  return s;
}

void ema_update(ByolState& state) {
  if (!state.target_encoder.same_shape(state.online_encoder) ||
      !state.target_projector.same_shape(state.online_projector)) {
    throw InvalidArgument("online and target networks differ in shape");
  }
  const double m = state.momentum;
  state.target_encoder.params() = m * state.target_encoder.params() + (1.0 - m) * state.online_encoder.params();
  state.target_projector.params() =
      m * state.target_projector.params() + (1.0 - m) * state.online_projector.params();
}

void reinit_heads(ByolState& state, std::uint64_t seed) {
  state.online_projector.init(derive_seed(seed, {kTagProjector}));
  state.predictor.init(derive_seed(seed, {kTagPredictor}));
  state.target_projector = state.online_projector;
}

Eigen::MatrixXd online_forward(const ByolState& s, const Eigen::MatrixXd& x, HeadCache* cache) {
  const Eigen::MatrixXd y = s.online_encoder.forward(x, cache ? &cache->encoder : nullptr);
  const Eigen::MatrixXd z = s.online_projector.forward(y, cache ? &cache->projector : nullptr);
  return s.predictor.forward(z, cache ? &cache->predictor : nullptr);
}

Eigen::MatrixXd target_forward(const ByolState& s, const Eigen::MatrixXd& x) {
  return s.target_projector.forward(s.target_encoder.forward(x));
}

ByolGrads::ByolGrads(const ByolState& s)
    : encoder(Eigen::VectorXd::Zero(s.online_encoder.params().size())),
      projector(Eigen::VectorXd::Zero(s.online_projector.params().size())),
      predictor(Eigen::VectorXd::Zero(s.predictor.params().size())) {}

void online_backward(const ByolState& s, const HeadCache& cache, const Eigen::MatrixXd& grad_out,
                     ByolGrads& grads) {
  const Eigen::MatrixXd gz = s.predictor.backward(cache.predictor, grad_out, grads.predictor);
  const Eigen::MatrixXd gy = s.online_projector.backward(cache.projector, gz, grads.projector);
  s.online_encoder.backward(cache.encoder, gy, grads.encoder);
}

}  // namespace stssl::encoder
