#include "stssl/trainer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stssl/checkpoint.hpp"
#include "stssl/error.hpp"
#include "stssl/kmeans.hpp"
#include "stssl/log.hpp"
#include "stssl/rng.hpp"

namespace stssl::train {

using json = nlohmann::json;

namespace {

enum : std::uint64_t { kTagHeads = 0x68656164, kTagKmeans = 0x6b6d6e73 };

struct ViewPass {
  encoder::View view;
  std::vector<std::size_t> rows;
  std::vector<int> cluster_of_rows;
  encoder::HeadCache cache;
  Eigen::MatrixXd online;
  encoder::FeatureBank on_bank;  // online point features
  encoder::FeatureBank tg_bank;  // target features, pooled per cluster
  Eigen::MatrixXd grad;          // dLoss / d online
};

ViewPass run_view(const encoder::ByolState& net, const encoder::EncoderConfig& ecfg, encoder::View view) {
  ViewPass v;
  v.view = std::move(view);
  v.rows = v.view.clustered_rows();
  v.cluster_of_rows.reserve(v.rows.size());
  for (std::size_t r : v.rows) v.cluster_of_rows.push_back(v.view.cluster_of[r]);
  if (v.rows.empty()) return v;
  const Eigen::MatrixXd x = encoder::descriptors(v.view, v.rows, ecfg);
  v.online = encoder::online_forward(net, x, &v.cache);
  v.on_bank = encoder::group_and_pool(v.online, v.cluster_of_rows);
  v.on_bank.network = encoder::NetworkTag::kOnline;
  v.on_bank.view = encoder::ViewTag::kPointView;
  v.tg_bank = encoder::group_and_pool(encoder::target_forward(net, x), v.cluster_of_rows);
  v.tg_bank.network = encoder::NetworkTag::kTarget;
  v.tg_bank.view = encoder::ViewTag::kClusterView;
  v.grad = Eigen::MatrixXd::Zero(v.online.rows(), v.online.cols());
  return v;
}

struct Term {
  double value = 0.0;
  std::size_t pairs = 0;
};

// Online points of `on` against the target cluster features of `tg`.
// Clusters cropped out of either view are skipped.
Term p2c_term(ViewPass& on, const ViewPass& tg, double grad_scale) {
  std::vector<Eigen::MatrixXd> groups;
  std::vector<Eigen::VectorXd> pooled;
  std::vector<const encoder::ClusterGroup*> used;
  for (const auto& g : on.on_bank.groups) {
    const auto* c = tg.tg_bank.find(g.cluster_id);
    if (!c) continue;
    groups.push_back(g.grouped);
    pooled.push_back(c->pooled);
    used.push_back(&g);
  }
  Term t;
  if (groups.empty()) return t;
  const auto r = losses::loss_p2c(groups, pooled);
  t.value = r.value;
  t.pairs = r.pair_count;
  if (grad_scale != 0.0) {
    for (std::size_t i = 0; i < used.size(); ++i) {
      for (std::size_t j = 0; j < used[i]->rows.size(); ++j) {
        on.grad.row(static_cast<Eigen::Index>(used[i]->rows[j])) +=
            grad_scale * r.grad_points[i].row(static_cast<Eigen::Index>(j));
      }
    }
  }
  return t;
}

// Pooled online features of `on` against pooled target features of `tg`
// for matched (on cluster, tg cluster) ids. The pooled gradient reaches
// the point that attained each maximum.
Term inter_term(const std::vector<std::pair<int, int>>& matches, ViewPass& on, const ViewPass& tg,
                double grad_scale) {
  std::vector<const encoder::ClusterGroup*> a_groups;
  std::vector<const encoder::ClusterGroup*> b_groups;
  for (const auto& [a, b] : matches) {
    const auto* ga = on.on_bank.find(a);
    const auto* gb = tg.tg_bank.find(b);
    if (ga && gb) {
      a_groups.push_back(ga);
      b_groups.push_back(gb);
    }
  }
  Term t;
  if (a_groups.empty()) return t;
  const Eigen::Index d = a_groups.front()->pooled.size();
  Eigen::MatrixXd cm(static_cast<Eigen::Index>(a_groups.size()), d);
  Eigen::MatrixXd cn(static_cast<Eigen::Index>(a_groups.size()), d);
  for (std::size_t i = 0; i < a_groups.size(); ++i) {
    cm.row(static_cast<Eigen::Index>(i)) = a_groups[i]->pooled.transpose();
    cn.row(static_cast<Eigen::Index>(i)) = b_groups[i]->pooled.transpose();
  }
  const auto r = losses::loss_inter(cm, cn);
  t.value = r.value;
  t.pairs = r.pair_count;
  if (grad_scale != 0.0) {
    for (std::size_t i = 0; i < a_groups.size(); ++i) {
      const auto& g = *a_groups[i];
      for (Eigen::Index k = 0; k < d; ++k) {
        const std::size_t row = g.rows[g.argmax[static_cast<std::size_t>(k)]];
        on.grad(static_cast<Eigen::Index>(row), k) += grad_scale * r.grad_m(static_cast<Eigen::Index>(i), k);
      }
    }
  }
  return t;
}

void sgd_update(Eigen::VectorXd& p, Eigen::VectorXd& v, const Eigen::VectorXd& g, double lr,
                const TrainConfig& cfg) {
  v = cfg.sgd_momentum * v + g;
  p *= 1.0 - lr * cfg.weight_decay;
  p -= lr * v;
}

std::string stem_name(const std::string& prefix, std::size_t step) {
  std::ostringstream s;
  s << prefix << std::setw(6) << std::setfill('0') << step;
  return s.str();
}

}  // namespace

std::string to_string(Stage stage) {
  return stage == Stage::kSpatialOnly ? "spatial_only" : "spatiotemporal";
}

Stage stage_from_string(const std::string& s) {
  if (s == "spatial_only") return Stage::kSpatialOnly;
  if (s == "spatiotemporal") return Stage::kSpatiotemporal;
  throw FormatError("unknown training stage '" + s + "'");
}

TrainState init_state(const Config& cfg) {
  TrainState s;
  s.net = encoder::make_byol(cfg.encoder, cfg.train.byol_momentum, cfg.seeds.init);
  s.velocity.encoder = Eigen::VectorXd::Zero(s.net.online_encoder.params().size());
  s.velocity.projector = Eigen::VectorXd::Zero(s.net.online_projector.params().size());
  s.velocity.predictor = Eigen::VectorXd::Zero(s.net.predictor.params().size());
  return s;
}

double progress_at(std::size_t step, std::size_t total_steps) {
  if (total_steps <= 1) return 0.0;
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps - 1));
}

double lr_at(double progress, const TrainConfig& cfg) {
  const double p = std::clamp(progress, 0.0, 1.0);
  return (1.0 - p) * cfg.lr_init + p * cfg.lr_min;
}

FramePair sample_pair(const Config& cfg, std::size_t trainable_frames, std::size_t step, std::size_t slot) {
  if (trainable_frames == 0) throw InvalidArgument("no trainable frames");
  const double p = progress_at(step, cfg.train.total_steps());
  std::size_t interval = cfg.train.curriculum ? track::interval_at(p, cfg.pipeline.max_interval)
                                              : cfg.train.fixed_interval;
  interval = std::min(interval, trainable_frames - 1);
  Rng rng(derive_seed(cfg.seeds.sample, {step, slot}));
  std::uniform_int_distribution<std::size_t> pick(0, trainable_frames - 1 - interval);
  FramePair fp;
  fp.m = pick(rng);
  fp.n = fp.m + interval;
  fp.interval = interval;
  return fp;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(Config cfg, const Sequence& seq, std::size_t threads)
    : Trainer(cfg, seq, pipeline::prepare_sequence(seq, cfg.pipeline, cfg.seeds.ransac, threads)) {}

Trainer::Trainer(Config cfg, const Sequence& seq, std::vector<pipeline::PreparedFrame> prepared)
    : cfg_(std::move(cfg)), seq_(&seq), prepared_(std::move(prepared)) {
  cfg_.validate();
  if (seq.frames.empty()) throw InvalidArgument("training needs at least one frame");
  if (prepared_.size() != seq.frames.size()) throw IntegrityError("prepared frames do not match sequence");
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    if (seq.frames[i].frame_index != i || prepared_[i].clusters.frame_index != i) {
      throw IntegrityError("frames must be indexed 0..F-1 in order");
    }
  }
  if (cfg_.train.holdout_frames >= seq.frames.size()) {
    throw InvalidArgument("train.holdout_frames leaves no trainable frame");
  }
  state_ = init_state(cfg_);
}

std::size_t Trainer::trainable_frames() const { return seq_->frames.size() - cfg_.train.holdout_frames; }

Eigen::MatrixXd Trainer::cluster_features(std::size_t frame) const {
  const auto& pf = prepared_.at(frame);
  const auto view = encoder::make_view(seq_->frames.at(frame), pf.clusters, pf.plane);
  const auto rows = view.clustered_rows();
  if (rows.empty()) return Eigen::MatrixXd(0, cfg_.encoder.dim);
  std::vector<int> member;
  member.reserve(rows.size());
  for (std::size_t r : rows) member.push_back(view.cluster_of[r]);
  const Eigen::MatrixXd f = state_.net.target_encoder.forward(encoder::descriptors(view, rows, cfg_.encoder));
  return encoder::group_and_pool(f, member).pooled_matrix(pf.clusters.num_clusters());
}

void Trainer::refresh_tracking() {
  const std::size_t spe = cfg_.train.steps_per_epoch;
  const std::size_t epoch = spe ? state_.step / spe : 0;
  track::MatchConfig mc = cfg_.pipeline.match;
  const bool use_features = mc.feature_mode == track::FeatureMode::kLocationPlusFeature &&
                            !(epoch == 0 && cfg_.train.location_only_first_epoch);
  const auto sets = pipeline::cluster_sets(prepared_);
  if (use_features) {
    std::vector<Eigen::MatrixXd> feats;
    feats.reserve(prepared_.size());
    for (std::size_t f = 0; f < prepared_.size(); ++f) feats.push_back(cluster_features(f));
    state_.trajectories = track::track_sequence(sets, mc, &feats).trajectories;
  } else {
    mc.feature_mode = track::FeatureMode::kLocationOnly;
    state_.trajectories = track::track_sequence(sets, mc).trajectories;
  }
  state_.tracked_epoch = epoch;
  log::debug("tracking refreshed for epoch " + std::to_string(epoch) + ": " +
             std::to_string(state_.trajectories.size()) + " trajectories" +
             (use_features ? " (location + feature)" : " (location only)"));
}

void Trainer::maybe_switch_stage(double lambda) {
  if (state_.stage != Stage::kSpatialOnly || !(lambda > 0.0)) return;
  encoder::reinit_heads(state_.net, derive_seed(cfg_.seeds.init, {kTagHeads, state_.head_reinits}));
  state_.velocity.projector.setZero();
  state_.velocity.predictor.setZero();
  state_.stage = Stage::kSpatiotemporal;
  ++state_.head_reinits;
  log::info("step " + std::to_string(state_.step) + ": inter-frame term active, heads re-initialized");
}

losses::LossReport Trainer::step() {
  const std::size_t spe = cfg_.train.steps_per_epoch;
  const std::size_t epoch = spe ? state_.step / spe : 0;
  if (state_.tracked_epoch != epoch) refresh_tracking();
  std::vector<FramePair> pairs;
  for (std::size_t b = 0; b < cfg_.train.batch_frames; ++b) {
    pairs.push_back(sample_pair(cfg_, trainable_frames(), state_.step, b));
  }
  return train_on(pairs);
}

losses::LossReport Trainer::train_on(const std::vector<FramePair>& pairs) {
  if (pairs.empty()) throw InvalidArgument("train_on needs at least one frame pair");
  if (!state_.tracked_epoch) refresh_tracking();
  const std::size_t step = state_.step;
  const double progress = progress_at(step, cfg_.train.total_steps());
  const double lambda = losses::lambda_at(progress, cfg_.train.lambda);
  maybe_switch_stage(lambda);
  const double lr = lr_at(progress, cfg_.train);

  losses::LossReport rep;
  rep.step = step;
  rep.lambda = lambda;
  rep.lr = lr;
  rep.stage = to_string(state_.stage);
  rep.frame_m = pairs.front().m;
  rep.frame_n = pairs.front().n;
  rep.interval = pairs.front().interval;

  encoder::ByolGrads grads(state_.net);
  double p2c_raw = 0.0;
  double inter_raw = 0.0;
  bool any_rows = false;
  for (std::size_t b = 0; b < pairs.size(); ++b) {
    const auto& fp = pairs[b];
    if (fp.n >= seq_->frames.size() || fp.m > fp.n) throw InvalidArgument("frame pair out of range");
    std::vector<std::size_t> slots{fp.m};
    if (fp.n != fp.m) slots.push_back(fp.n);

    // Two augmented views per frame.
    std::vector<std::array<ViewPass, 2>> views(slots.size());
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const auto& frame = seq_->frames[slots[s]];
      const auto& pf = prepared_[slots[s]];
      for (std::size_t v = 0; v < 2; ++v) {
        auto spec = cfg_.aug;
        spec.seed = derive_seed(cfg_.seeds.aug, {step, b, s, v});
        views[s][v] = run_view(state_.net, cfg_.encoder, encoder::augment(frame, pf.clusters, pf.plane, spec));
      }
    }

    // Point-to-cluster, each view once as point view and once as cluster view.
    for (auto& vv : views) {
      const Term t1 = p2c_term(vv[0], vv[1], 0.5);
      const Term t2 = p2c_term(vv[1], vv[0], 0.5);
      rep.l_p2c += 0.5 * (t1.value + t2.value);
      p2c_raw += t1.value + t2.value;
      rep.p2c_pairs += t1.pairs + t2.pairs;
    }

    // Inter-frame on clusters that one trajectory links across the interval.
    const auto matches = track::emit_interframe_pairs(state_.trajectories, fp.m, fp.interval).matches;
    if (!matches.empty()) {
      std::vector<std::pair<int, int>> swapped;
      swapped.reserve(matches.size());
      for (const auto& [a, c] : matches) swapped.emplace_back(c, a);
      ViewPass& m_a = views.front()[0];
      ViewPass& n_b = views.back()[1];
      const Term t1 = inter_term(matches, m_a, n_b, 0.5 * lambda);
      const Term t2 = inter_term(swapped, n_b, m_a, 0.5 * lambda);
      rep.l_inter += 0.5 * (t1.value + t2.value);
      inter_raw += t1.value + t2.value;
      rep.inter_pairs += t1.pairs + t2.pairs;
    }

    for (auto& vv : views) {
      for (auto& v : vv) {
        if (v.rows.empty()) continue;
        any_rows = true;
        encoder::online_backward(state_.net, v.cache, v.grad, grads);
      }
    }
  }
  rep.l_total = losses::loss_total(rep.l_p2c, rep.l_inter, lambda);
  rep.l_p2c_mean = rep.p2c_pairs ? p2c_raw / static_cast<double>(rep.p2c_pairs) : 0.0;
  rep.l_inter_mean = rep.inter_pairs ? inter_raw / static_cast<double>(rep.inter_pairs) : 0.0;

  if (!any_rows || (rep.p2c_pairs == 0 && rep.inter_pairs == 0)) {
    rep.skipped = true;
    log::info("step " + std::to_string(step) + " skipped: no clustered points in frames " +
              std::to_string(rep.frame_m) + "/" + std::to_string(rep.frame_n));
    ++state_.step;
    return rep;
  }

  auto& net = state_.net;
  sgd_update(net.online_encoder.params(), state_.velocity.encoder, grads.encoder, lr, cfg_.train);
  sgd_update(net.online_projector.params(), state_.velocity.projector, grads.projector, lr, cfg_.train);
  sgd_update(net.predictor.params(), state_.velocity.predictor, grads.predictor, lr, cfg_.train);
  encoder::ema_update(net);
  ++state_.step;
  return rep;
}

// ---------------------------------------------------------------------------

KMeansAnalysis kmeans_feature_analysis(const Eigen::MatrixXd& features, std::size_t k, std::uint64_t seed,
                                       const std::vector<int>* truth) {
  const auto km = analysis::kmeans(features, k, seed);
  KMeansAnalysis a;
  a.k = k;
  a.samples = static_cast<std::size_t>(features.rows());
  a.inertia = km.inertia;
  a.iterations = km.iterations;
  a.labels = km.labels;
  if (truth) a.agreement = analysis::best_permutation_agreement(a.labels, *truth);
  return a;
}

Eigen::MatrixXd object_point_features(const TrainState& state, const Config& cfg, const Frame& frame,
                                      const pipeline::PreparedFrame& prepared, std::vector<int>* instances) {
  const auto view = encoder::make_view(frame, prepared.clusters, prepared.plane);
  std::vector<std::size_t> rows;
  if (instances) instances->clear();
  if (frame.labels) {
    for (std::size_t i = 0; i < frame.size(); ++i) {
      const auto& l = (*frame.labels)[i];
      if (l.instance_id == kGroundInstance) continue;
      rows.push_back(i);
      if (instances) instances->push_back(l.instance_id);
    }
  } else {
    rows = view.clustered_rows();
  }
  Eigen::MatrixXd f = state.net.online_encoder.forward(encoder::descriptors(view, rows, cfg.encoder));
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    const double n = f.row(r).norm();
    if (n > 0.0) f.row(r) /= n;
  }
  return f;
}

json run_metrics(const Trainer& trainer, const std::vector<losses::LossReport>& reports) {
  const auto& st = trainer.state();
  const auto& cfg = trainer.config();
  json m;
  m["steps"] = st.step;
  m["stage"] = to_string(st.stage);
  m["head_reinits"] = st.head_reinits;

  std::vector<double> p2c;
  for (const auto& r : reports) {
    if (!r.skipped) p2c.push_back(r.l_p2c_mean);
  }
  json loss = json::object();
  if (!p2c.empty()) {
    const std::size_t tail = std::min<std::size_t>(10, p2c.size());
    double final_mean = 0.0;
    for (std::size_t i = p2c.size() - tail; i < p2c.size(); ++i) final_mean += p2c[i];
    final_mean /= static_cast<double>(tail);
    loss["p2c_mean_initial"] = p2c.front();
    loss["p2c_mean_final"] = final_mean;
    loss["p2c_reduction"] = p2c.front() > 0.0 ? 1.0 - final_mean / p2c.front() : 0.0;
  }
  m["loss"] = loss;

  try {
    const auto pr = pipeline::sequence_purity(trainer.sequence(), trainer.prepared());
    m["purity"] = {{"threshold", pr.threshold},
                   {"clusters", pr.clusters.size()},
                   {"pure", pr.pure_count},
                   {"proportion", pr.proportion}};
  } catch (const UnsupportedError&) {
    m["purity"] = nullptr;
  }

  const std::vector<std::size_t> ks{1, 2, 3, 5, 10};
  json durations = json::array();
  for (const auto& d : track::tracking_stats(st.trajectories, ks)) {
    durations.push_back({{"min_length", d.min_length}, {"fraction", d.fraction}});
  }
  m["tracking"] = {{"trajectories", st.trajectories.size()}, {"durations", durations}};

  const std::size_t last = trainer.sequence().frames.size() - 1;
  std::vector<int> instances;
  const Eigen::MatrixXd feats =
      object_point_features(st, cfg, trainer.sequence().frames[last], trainer.prepared()[last], &instances);
  if (feats.rows() == 0) {
    m["kmeans"] = nullptr;
  } else {
    const std::size_t k = std::min<std::size_t>(cfg.train.kmeans_k, static_cast<std::size_t>(feats.rows()));
    const bool labeled = trainer.sequence().frames[last].has_labels();
    const auto a = kmeans_feature_analysis(feats, k, derive_seed(cfg.seeds.init, {kTagKmeans}),
                                           labeled ? &instances : nullptr);
    json km = {{"frame", last}, {"k", a.k}, {"samples", a.samples}, {"inertia", a.inertia},
               {"iterations", a.iterations}};
    km["agreement"] = a.agreement ? json(*a.agreement) : json(nullptr);
    m["kmeans"] = km;
  }
  return m;
}

std::vector<losses::LossReport> run(const Config& cfg, const Sequence& seq, const RunOptions& opts) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(opts.out_dir);
  {
    std::ofstream out(opts.out_dir / "config.json");
    out << to_json(cfg).dump(2) << '\n';
  }

  Trainer trainer(cfg, seq, opts.threads);
  std::vector<losses::LossReport> reports;
  const fs::path log_path = opts.out_dir / "train_log.jsonl";
  if (opts.resume) {
    auto loaded = ckpt::load(*opts.resume);
    const auto& ref = trainer.state().net;
    if (!loaded.state.net.online_encoder.same_shape(ref.online_encoder) ||
        !loaded.state.net.predictor.same_shape(ref.predictor)) {
      throw InvalidArgument("checkpoint network shapes do not match the config");
    }
    trainer.set_state(std::move(loaded.state));
    // Keep the log records that precede the checkpoint.
    std::ifstream in(log_path);
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      auto rep = losses::report_from_json(json::parse(line));
      if (rep.step < trainer.state().step) reports.push_back(std::move(rep));
    }
    if (reports.size() != trainer.state().step) {
      throw IntegrityError("training log does not cover the steps before the checkpoint");
    }
    log::info("resumed at step " + std::to_string(trainer.state().step));
  } else {
    ckpt::save(opts.out_dir / "ckpt_init", trainer.state(), cfg);
  }

  const std::size_t total = cfg.train.total_steps();
  if (total == 0) return reports;

  std::ofstream log_out(log_path, std::ios::out | std::ios::trunc);
  if (!log_out) throw IoError("cannot write " + log_path.string());
  for (const auto& r : reports) log_out << losses::to_json(r).dump() << '\n';
  while (trainer.state().step < total) {
    if (opts.stop_after && trainer.state().step >= *opts.stop_after) {
      ckpt::save(opts.out_dir / "ckpt_stop", trainer.state(), cfg);
      return reports;
    }
    auto rep = trainer.step();
    log_out << losses::to_json(rep).dump() << '\n';
    log_out.flush();
    reports.push_back(std::move(rep));
    const std::size_t done = trainer.state().step;
    if (cfg.train.checkpoint_every && done % cfg.train.checkpoint_every == 0 && done < total) {
      ckpt::save(opts.out_dir / stem_name("ckpt_step_", done), trainer.state(), cfg);
    }
  }
  ckpt::save(opts.out_dir / "ckpt_final", trainer.state(), cfg);
  std::ofstream metrics(opts.out_dir / "metrics.json");
  metrics << run_metrics(trainer, reports).dump(2) << '\n';
  return reports;
}

}  // namespace stssl::train
