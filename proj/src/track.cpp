#include "stssl/track.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "stssl/error.hpp"

namespace stssl::track {

using json = nlohmann::json;

std::string to_string(FeatureMode mode) {
  return mode == FeatureMode::kLocationOnly ? "location_only" : "location_plus_feature";
}

FeatureMode feature_mode_from_string(const std::string& s) {
  if (s == "location_only") return FeatureMode::kLocationOnly;
  if (s == "location_plus_feature") return FeatureMode::kLocationPlusFeature;
  throw InvalidArgument("unknown track.feature_mode '" + s + "'");
}

void MatchConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("track.alpha must lie in (0, 1)");
  if (!(gate > 0.0)) throw InvalidArgument("track.gate_m must be > 0");
}

namespace {

Eigen::MatrixXd normalized_rows(const Eigen::MatrixXd& f) {
  Eigen::MatrixXd out = f;
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    const double n = f.row(i).norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw NumericalError("cluster feature row " + std::to_string(i) +
                           " has zero or non-finite norm");
    }
    out.row(i) /= n;
  }
  return out;
}

}  // namespace

MatchMatrix build_match_matrix(const Eigen::MatrixXd& ck, const Eigen::MatrixXd& ck1,
                               const Eigen::MatrixXd* feats_k, const Eigen::MatrixXd* feats_k1,
                               const MatchConfig& cfg) {
  cfg.validate();
  if (ck.cols() != 3 || ck1.cols() != 3) throw InvalidArgument("centroids must be M x 3");
  const Eigen::Index m = ck.rows(), n = ck1.rows();
  MatchMatrix mm;
  mm.d_loc.resize(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) mm.d_loc(i, j) = (ck.row(i) - ck1.row(j)).norm();
  }
  mm.d_feat = Eigen::MatrixXd::Zero(m, n);
  if (cfg.feature_mode == FeatureMode::kLocationPlusFeature) {
    if (!feats_k || !feats_k1) {
      throw InvalidArgument("location_plus_feature matching needs cluster features");
    }
    if (feats_k->rows() != m || feats_k1->rows() != n) {
      throw InvalidArgument("feature rows do not match cluster counts");
    }
    if (feats_k->cols() != feats_k1->cols()) {
      throw InvalidArgument("feature dimensions differ between frames");
    }
    const Eigen::MatrixXd a = normalized_rows(*feats_k);
    const Eigen::MatrixXd b = normalized_rows(*feats_k1);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) mm.d_feat(i, j) = (a.row(i) - b.row(j)).norm();
    }
  }
  mm.d = mm.d_loc + cfg.alpha * mm.d_feat;
  return mm;
}

MatchMatrix build_match_matrix(const cluster::ClusterSet& set_k, const cluster::ClusterSet& set_k1,
                               const Eigen::MatrixXd* feats_k, const Eigen::MatrixXd* feats_k1,
                               const MatchConfig& cfg) {
  return build_match_matrix(set_k.centroid_matrix(), set_k1.centroid_matrix(), feats_k, feats_k1,
                            cfg);
}

InterFramePairs gate_and_match(const Eigen::MatrixXd& d, const MatchConfig& cfg,
                               std::size_t frame_m, std::size_t frame_n) {
  InterFramePairs out;
  out.frame_m = frame_m;
  out.frame_n = frame_n;
  // Entries past the gate cost more than any set of in-gate entries, so the
  // solver never trades an in-gate match for a pair it will reject anyway.
  const double big = cfg.gate * static_cast<double>(std::min(d.rows(), d.cols()) + 1) + 1.0;
  const Eigen::MatrixXd priced = (d.array() <= cfg.gate).select(d, big);
  for (const auto& [r, c] : hungarian(priced).pairs) {
    if (d(r, c) <= cfg.gate) out.matches.emplace_back(r, c);
  }
  return out;
}

std::optional<int> Trajectory::cluster_at(std::size_t frame) const {
  if (refs.empty() || frame < birth_frame || frame > last_frame()) return std::nullopt;
  return refs[frame - birth_frame].cluster_id;
}

TrackerState start_tracking(std::size_t frame_index, std::size_t num_clusters) {
  TrackerState s;
  s.last_frame = frame_index;
  for (std::size_t c = 0; c < num_clusters; ++c) {
    s.active.push_back(s.trajectories.size());
    s.trajectories.push_back({s.trajectories.size(), frame_index,
                              {{frame_index, static_cast<int>(c)}}, true});
  }
  return s;
}

void update_trajectories(TrackerState& state, const InterFramePairs& pairs,
                         std::size_t new_num_clusters) {
  if (!state.last_frame) throw IntegrityError("tracker not started");
  if (pairs.frame_m != *state.last_frame || pairs.frame_n != *state.last_frame + 1) {
    throw IntegrityError("pairs (" + std::to_string(pairs.frame_m) + ", " +
                         std::to_string(pairs.frame_n) +
                         ") are not the successor of tracked frame " +
                         std::to_string(*state.last_frame));
  }
  const std::size_t old_count = state.active.size();
  std::vector<std::optional<std::size_t>> next(new_num_clusters);
  std::vector<char> old_matched(old_count, 0);
  for (const auto& [a, b] : pairs.matches) {
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= old_count ||
        static_cast<std::size_t>(b) >= new_num_clusters) {
      throw IntegrityError("match (" + std::to_string(a) + ", " + std::to_string(b) +
                           ") references an unknown cluster");
    }
    if (old_matched[a] || next[b]) throw IntegrityError("matches are not injective");
    old_matched[a] = 1;
    next[b] = state.active[a];
  }

  const std::size_t frame = pairs.frame_n;
  for (std::size_t a = 0; a < old_count; ++a) {
    if (!old_matched[a]) state.trajectories[state.active[a]].alive = false;
  }
  std::vector<std::size_t> active(new_num_clusters);
  for (std::size_t b = 0; b < new_num_clusters; ++b) {
    if (next[b]) {
      state.trajectories[*next[b]].refs.push_back({frame, static_cast<int>(b)});
      active[b] = *next[b];
    } else {
      active[b] = state.trajectories.size();
      state.trajectories.push_back(
          {state.trajectories.size(), frame, {{frame, static_cast<int>(b)}}, true});
    }
  }
  state.active = std::move(active);
  state.last_frame = frame;
}

std::vector<DurationStat> tracking_stats(std::span<const Trajectory> trajectories,
                                         std::span<const std::size_t> ks) {
  std::vector<DurationStat> out;
  for (std::size_t k : ks) {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.length() >= k ? 1 : 0;
    out.push_back({k, trajectories.empty()
                          ? 0.0
                          : static_cast<double>(n) / static_cast<double>(trajectories.size())});
  }
  return out;
}

InterFramePairs emit_interframe_pairs(std::span<const Trajectory> trajectories,
                                      std::size_t frame_t, std::size_t interval) {
  InterFramePairs out;
  out.frame_m = frame_t;
  out.frame_n = frame_t + interval;
  for (const auto& t : trajectories) {
    const auto a = t.cluster_at(frame_t);
    const auto b = t.cluster_at(frame_t + interval);
    if (a && b) out.matches.emplace_back(*a, *b);
  }
  std::sort(out.matches.begin(), out.matches.end());
  return out;
}

std::size_t interval_at(double progress, std::size_t max_interval) {
  const double p = std::clamp(progress, 0.0, 1.0);
  return static_cast<std::size_t>(std::floor(p * static_cast<double>(max_interval)));
}

TrackResult track_sequence(std::span<const cluster::ClusterSet> sets, const MatchConfig& cfg,
                           const std::vector<Eigen::MatrixXd>* features) {
  TrackResult out;
  if (sets.empty()) return out;
  if (features && features->size() != sets.size()) {
    throw InvalidArgument("need one feature matrix per frame");
  }
  TrackerState state = start_tracking(sets[0].frame_index, sets[0].num_clusters());
  for (std::size_t k = 0; k + 1 < sets.size(); ++k) {
    if (sets[k + 1].frame_index != sets[k].frame_index + 1) {
      throw IntegrityError("cluster sets are not consecutive frames");
    }
    const Eigen::MatrixXd* fa = features ? &(*features)[k] : nullptr;
    const Eigen::MatrixXd* fb = features ? &(*features)[k + 1] : nullptr;
    const auto mm = build_match_matrix(sets[k], sets[k + 1], fa, fb, cfg);
    auto pairs = gate_and_match(mm.d, cfg, sets[k].frame_index, sets[k + 1].frame_index);
    update_trajectories(state, pairs, sets[k + 1].num_clusters());
    out.adjacent.push_back(std::move(pairs));
  }
  out.trajectories = std::move(state.trajectories);
  return out;
}

json trajectories_to_json(std::span<const Trajectory> trajectories) {
  json arr = json::array();
  for (const auto& t : trajectories) {
    json refs = json::array();
    for (const auto& r : t.refs) refs.push_back({r.frame, r.cluster_id});
    arr.push_back({{"traj_id", t.traj_id},
                   {"birth_frame", t.birth_frame},
                   {"alive", t.alive},
                   {"refs", std::move(refs)}});
  }
  return arr;
}

std::vector<Trajectory> trajectories_from_json(const json& j) {
  std::vector<Trajectory> out;
  try {
    for (const auto& jt : j) {
      Trajectory t;
      t.traj_id = jt.at("traj_id").get<std::size_t>();
      t.birth_frame = jt.at("birth_frame").get<std::size_t>();
      t.alive = jt.value("alive", false);
      for (const auto& r : jt.at("refs")) {
        t.refs.push_back({r.at(0).get<std::size_t>(), r.at(1).get<int>()});
      }
      for (std::size_t i = 0; i < t.refs.size(); ++i) {
        if (t.refs[i].frame != t.birth_frame + i) {
          throw IntegrityError("trajectory " + std::to_string(t.traj_id) +
                               " has non-consecutive frame references");
        }
      }
      out.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("trajectory JSON: ") + e.what());
  }
  return out;
}

json pairs_to_json(const InterFramePairs& pairs) {
  json m = json::array();
  for (const auto& [a, b] : pairs.matches) m.push_back({a, b});
  return {{"frame_m", pairs.frame_m},
          {"frame_n", pairs.frame_n},
          {"count", pairs.count()},
          {"matches", std::move(m)}};
}

}  // namespace stssl::track
