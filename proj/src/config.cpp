#include "stssl/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "stssl/error.hpp"
#include "stssl/rng.hpp"

namespace stssl {

using json = nlohmann::json;

void Seeds::override_all(std::uint64_t seed) {
  init = derive_seed(seed, {1});
  aug = derive_seed(seed, {2});
  ransac = derive_seed(seed, {3});
  sample = derive_seed(seed, {4});
}

namespace {

template <typename T>
ConfigField make_field(std::string key, std::string help, T& ref) {
  return {std::move(key), std::move(help), [&ref] { return json(ref); },
          [&ref, k = key](const json& j) {
            try {
              ref = j.get<T>();
            } catch (const json::exception& e) {
              throw InvalidArgument("config key " + k + ": " + e.what());
            }
          }};
}

void flatten(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, key, out);
    } else {
      out.emplace_back(key, *it);
    }
  }
}

}  // namespace

std::vector<ConfigField> config_fields(Config& c) {
  auto& p = c.pipeline;
  auto& t = c.train;
  std::vector<ConfigField> f;
  f.push_back(make_field("ransac.dist_threshold", "ground inlier distance (m)", p.ransac.dist_threshold));
  f.push_back(make_field("ransac.max_iters", "RANSAC hypotheses per frame", p.ransac.max_iters));
  f.push_back(make_field("ransac.min_inlier_ratio", "below this no ground is removed", p.ransac.min_inlier_ratio));
  f.push_back(make_field("ransac.max_tilt_deg", "max plane tilt from horizontal (deg)", p.ransac.max_tilt_deg));
  f.push_back(make_field("dbscan.eps", "DBSCAN radius (m)", p.cluster.dbscan.eps));
  f.push_back(make_field("dbscan.min_pts", "DBSCAN core threshold (self included)", p.cluster.dbscan.min_pts));
  f.push_back(make_field("filter.min_size", "smallest kept cluster", p.cluster.min_cluster_size));
  f.push_back(make_field("filter.max_size", "largest kept cluster", p.cluster.max_cluster_size));
  f.push_back(make_field("filter.max_clusters", "clusters kept per frame", p.cluster.max_clusters));
  f.push_back(make_field("track.alpha", "feature-distance weight in the matching cost", p.match.alpha));
  f.push_back(make_field("track.gate_m", "max matching cost for a valid match", p.match.gate));
  f.push_back({"track.feature_mode", "location_only | location_plus_feature",
               [&p] { return json(track::to_string(p.match.feature_mode)); },
               [&p](const json& j) { p.match.feature_mode = track::feature_mode_from_string(j.get<std::string>()); }});
  f.push_back(make_field("track.max_interval", "largest frame interval of the curriculum", p.max_interval));
  f.push_back(make_field("encoder.dim", "feature width d", c.encoder.dim));
  f.push_back(make_field("encoder.hiddens", "encoder hidden widths", c.encoder.hiddens));
  f.push_back(make_field("encoder.head_hidden", "projector/predictor hidden width", c.encoder.head_hidden));
  f.push_back(make_field("encoder.coord_scale", "meters per unit descriptor input", c.encoder.coord_scale));
  f.push_back(make_field("encoder.density_radius", "neighborhood radius for the density input (m)", c.encoder.density_radius));
  f.push_back(make_field("byol.momentum", "EMA momentum of the target network", t.byol_momentum));
  f.push_back(make_field("aug.flip_x_prob", "probability of x -> -x", c.aug.flip_x_prob));
  f.push_back(make_field("aug.flip_y_prob", "probability of y -> -y", c.aug.flip_y_prob));
  f.push_back(make_field("aug.max_rotation", "rotation about z drawn in [-v, v] (rad)", c.aug.max_rotation));
  f.push_back(make_field("aug.scale_range", "scale drawn in [1-v, 1+v]", c.aug.scale_range));
  f.push_back(make_field("aug.clip_min_fraction", "smallest kept fraction of the x/y extent", c.aug.clip_min_fraction));
  f.push_back(make_field("train.epochs", "epochs (tracking is refreshed each epoch)", t.epochs));
  f.push_back(make_field("train.steps_per_epoch", "optimizer steps per epoch", t.steps_per_epoch));
  f.push_back(make_field("train.batch_frames", "frame pairs per step", t.batch_frames));
  f.push_back(make_field("train.lr_init", "initial learning rate", t.lr_init));
  f.push_back(make_field("train.lr_min", "final learning rate (linear anneal)", t.lr_min));
  f.push_back(make_field("train.sgd_momentum", "SGD momentum", t.sgd_momentum));
  f.push_back(make_field("train.weight_decay", "decoupled weight decay", t.weight_decay));
  f.push_back(make_field("train.lambda.early", "inter-frame weight early in training", t.lambda.early_value));
  f.push_back(make_field("train.lambda.late", "inter-frame weight late in training", t.lambda.late_value));
  f.push_back(make_field("train.lambda.ramp_start", "progress where the ramp starts", t.lambda.ramp_start));
  f.push_back(make_field("train.lambda.ramp_end", "progress where the ramp ends", t.lambda.ramp_end));
  f.push_back({"train.lambda.kind", "linear | step",
               [&t] { return json(t.lambda.kind == losses::RampKind::kStep ? "step" : "linear"); },
               [&t](const json& j) {
                 const auto s = j.get<std::string>();
                 if (s == "linear") {
                   t.lambda.kind = losses::RampKind::kLinear;
                 } else if (s == "step") {
                   t.lambda.kind = losses::RampKind::kStep;
                 } else {
                   throw InvalidArgument("train.lambda.kind must be linear or step");
                 }
               }});
  f.push_back(make_field("train.curriculum", "grow the frame interval with progress", t.curriculum));
  f.push_back(make_field("train.fixed_interval", "frame interval when the curriculum is off", t.fixed_interval));
  f.push_back(make_field("train.holdout_frames", "trailing frames excluded from training", t.holdout_frames));
  f.push_back(make_field("train.checkpoint_every", "checkpoint period in steps (0 = off)", t.checkpoint_every));
  f.push_back(make_field("train.location_only_first_epoch", "track by location only in epoch 0", t.location_only_first_epoch));
  f.push_back(make_field("train.kmeans_k", "clusters for the feature-space analysis", t.kmeans_k));
  f.push_back(make_field("seed.init", "network init seed", c.seeds.init));
  f.push_back(make_field("seed.aug", "augmentation seed", c.seeds.aug));
  f.push_back(make_field("seed.ransac", "ground fitting seed", c.seeds.ransac));
  f.push_back(make_field("seed.sample", "frame-pair sampling seed", c.seeds.sample));
  return f;
}

void apply_json(Config& cfg, const json& j) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  std::vector<std::pair<std::string, json>> flat;
  flatten(j, "", flat);
  auto fields = config_fields(cfg);
  for (const auto& [key, value] : flat) {
    if (key == "profile") {
      apply_profile(cfg, value.get<std::string>());
      continue;
    }
    auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField& f) { return f.key == key; });
    if (it == fields.end()) throw InvalidArgument("unknown config key '" + key + "'");
    it->set(value);
  }
}

void apply_json_file(Config& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  apply_json(cfg, j);
}

void apply_value(Config& cfg, const std::string& key, const std::string& text) {
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  apply_json(cfg, json{{key, value}});
}

void apply_profile(Config& cfg, const std::string& profile) {
  if (profile == "kitti") {
    cfg.pipeline.cluster.dbscan.eps = 0.25;
  } else if (profile == "nuscenes" || profile == "nuscene") {
    cfg.pipeline.cluster.dbscan.eps = 0.5;
  } else {
    throw InvalidArgument("unknown profile '" + profile + "' (kitti | nuscenes)");
  }
}

void apply_env_seed(Config& cfg) {
  if (const char* s = std::getenv("STSSL_SEED"); s && *s) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0') throw InvalidArgument("STSSL_SEED must be an unsigned integer");
    cfg.seeds.override_all(v);
  }
}

json to_json(const Config& cfg) {
  Config copy = cfg;
  json out = json::object();
  for (const auto& f : config_fields(copy)) {
    json* node = &out;
    std::size_t start = 0;
    for (std::size_t dot = f.key.find('.'); dot != std::string::npos; dot = f.key.find('.', start)) {
      node = &(*node)[f.key.substr(start, dot - start)];
      start = dot + 1;
    }
    (*node)[f.key.substr(start)] = f.get();
  }
  return out;
}

void Config::validate() const {
  if (!(pipeline.ransac.dist_threshold > 0.0)) throw InvalidArgument("ransac.dist_threshold must be > 0");
  if (pipeline.ransac.max_iters == 0) throw InvalidArgument("ransac.max_iters must be > 0");
  if (!(pipeline.ransac.min_inlier_ratio >= 0.0 && pipeline.ransac.min_inlier_ratio <= 1.0)) {
    throw InvalidArgument("ransac.min_inlier_ratio must be in [0, 1]");
  }
  if (!(pipeline.ransac.max_tilt_deg >= 0.0 && pipeline.ransac.max_tilt_deg <= 90.0)) {
    throw InvalidArgument("ransac.max_tilt_deg must be in [0, 90]");
  }
  pipeline.cluster.validate();
  pipeline.match.validate();
  encoder.validate();
  aug.validate();
  train.lambda.validate();
  if (!(train.lr_init > 0.0 && train.lr_min > 0.0)) throw InvalidArgument("learning rates must be > 0");
  if (!(train.sgd_momentum >= 0.0 && train.sgd_momentum < 1.0)) {
    throw InvalidArgument("train.sgd_momentum must be in [0, 1)");
  }
  if (!(train.weight_decay >= 0.0)) throw InvalidArgument("train.weight_decay must be >= 0");
  if (!(train.byol_momentum > 0.0 && train.byol_momentum < 1.0)) {
    throw InvalidArgument("byol.momentum must be in (0, 1)");
  }
  if (train.batch_frames == 0) throw InvalidArgument("train.batch_frames must be >= 1");
  if (train.epochs > 0 && train.steps_per_epoch == 0) {
    throw InvalidArgument("train.steps_per_epoch must be >= 1");
  }
  if (train.kmeans_k == 0) throw InvalidArgument("train.kmeans_k must be >= 1");
}

}  // namespace stssl
