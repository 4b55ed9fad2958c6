// stssl command-line interface.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stssl/checkpoint.hpp"
#include "stssl/config.hpp"
#include "stssl/error.hpp"
#include "stssl/log.hpp"
#include "stssl/pipeline.hpp"
#include "stssl/report.hpp"
#include "stssl/scene_io.hpp"
#include "stssl/synth.hpp"
#include "stssl/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace stssl;

namespace {

// Options shared by every subcommand that reads a configuration.
struct ConfigOptions {
  std::string config_file;
  std::string profile;
  std::vector<std::string> sets;                // key=value
  std::map<std::string, std::string> flags;     // --<key> value
  std::size_t threads = 1;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--profile", profile, "preset: kitti | nuscenes");
    app->add_option("--set", sets, "override a config key (key=value), repeatable");
    app->add_option("--threads", threads, "preprocessing worker threads (0 = all cores)");
    Config scratch;
    for (const auto& f : config_fields(scratch)) {
      app->add_option("--" + f.key, flags[f.key], f.help + " [" + f.get().dump() + "]");
    }
  }

  Config build() const {
    Config cfg;
    if (!profile.empty()) apply_profile(cfg, profile);
    if (!config_file.empty()) apply_json_file(cfg, config_file);
    for (const auto& [key, value] : flags) {
      if (!value.empty()) apply_value(cfg, key, value);
    }
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + kv + "'");
      apply_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    apply_env_seed(cfg);
    cfg.validate();
    return cfg;
  }
};

Sequence load_any(const fs::path& dir) {
  if (fs::is_directory(dir / "velodyne")) return io::load_labeled_sequence(dir);
  return io::load_sequence(dir);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

json duration_json(std::span<const track::Trajectory> trajs) {
  const std::vector<std::size_t> ks{1, 2, 3, 5, 10};
  json arr = json::array();
  for (const auto& d : track::tracking_stats(trajs, ks)) {
    arr.push_back({{"min_length", d.min_length}, {"fraction", d.fraction}});
  }
  return arr;
}

// Trajectories of a prepared sequence; features come from the target
// encoder of `checkpoint` when given.
track::TrackResult track_prepared(const Config& cfg, const Sequence& seq,
                                  const std::vector<pipeline::PreparedFrame>& prepared,
                                  const std::string& checkpoint) {
  const auto sets = pipeline::cluster_sets(prepared);
  auto mc = cfg.pipeline.match;
  if (checkpoint.empty() || mc.feature_mode == track::FeatureMode::kLocationOnly) {
    if (mc.feature_mode == track::FeatureMode::kLocationPlusFeature) {
      log::warning("no --checkpoint given; tracking by location only");
    }
    mc.feature_mode = track::FeatureMode::kLocationOnly;
    return track::track_sequence(sets, mc);
  }
  auto loaded = ckpt::load(checkpoint);
  Config tcfg = cfg;
  tcfg.encoder = loaded.config.encoder;
  tcfg.train.holdout_frames = 0;
  train::Trainer trainer(tcfg, seq, prepared);
  trainer.set_state(std::move(loaded.state));
  std::vector<Eigen::MatrixXd> feats;
  for (std::size_t f = 0; f < prepared.size(); ++f) feats.push_back(trainer.cluster_features(f));
  return track::track_sequence(sets, mc, &feats);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal self-supervised point cloud toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");

  // segment
  auto* seg = app.add_subcommand("segment", "ground removal + DBSCAN over-segmentation per frame");
  ConfigOptions seg_cfg;
  std::string seg_seq, seg_out;
  seg->add_option("--seq", seg_seq, "sequence directory")->required();
  seg->add_option("--out", seg_out, "output directory for per-frame cluster JSON")->required();
  seg_cfg.attach(seg);

  // track
  auto* trk = app.add_subcommand("track", "match clusters across frames and build trajectories");
  ConfigOptions trk_cfg;
  std::string trk_seq, trk_out, trk_ckpt;
  trk->add_option("--seq", trk_seq, "sequence directory")->required();
  trk->add_option("--out", trk_out, "trajectory JSON file")->required();
  trk->add_option("--checkpoint", trk_ckpt, "checkpoint stem whose target encoder supplies features");
  trk_cfg.attach(trk);

  // mine-pairs
  auto* mine = app.add_subcommand("mine-pairs", "emit inter-frame cluster pairs at a frame interval");
  ConfigOptions mine_cfg;
  std::string mine_seq, mine_out, mine_ckpt;
  std::size_t mine_interval = 1;
  mine->add_option("--seq", mine_seq, "sequence directory")->required();
  mine->add_option("--out", mine_out, "JSON-lines output, one record per start frame")->required();
  mine->add_option("--interval", mine_interval, "frame interval between paired clusters");
  mine->add_option("--checkpoint", mine_ckpt, "checkpoint stem whose target encoder supplies features");
  mine_cfg.attach(mine);

  // train-toy
  auto* tr = app.add_subcommand("train-toy", "desk-scale self-supervised training run");
  ConfigOptions tr_cfg;
  std::string tr_seq, tr_out, tr_resume, tr_preset;
  std::size_t tr_frames = 12, tr_stop = 0;
  std::uint64_t tr_scene_seed = 1;
  tr->add_option("--seq", tr_seq, "sequence directory");
  tr->add_option("--preset", tr_preset, "synthetic scene instead of --seq: two-object | traffic");
  tr->add_option("--frames", tr_frames, "frames of the synthetic preset");
  tr->add_option("--scene-seed", tr_scene_seed, "seed of the synthetic preset");
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_option("--resume", tr_resume, "checkpoint stem to resume from");
  tr->add_option("--stop-after", tr_stop, "stop at this step and write ckpt_stop (0 = run to the end)");
  tr_cfg.attach(tr);

  // eval-purity
  auto* pur = app.add_subcommand("eval-purity", "over-segmentation purity on labeled frames");
  ConfigOptions pur_cfg;
  std::string pur_seq, pur_out;
  double pur_threshold = 0.9;
  pur->add_option("--seq", pur_seq, "labeled sequence directory")->required();
  pur->add_option("--threshold", pur_threshold, "dominant-class fraction for a pure cluster");
  pur->add_option("--out", pur_out, "optional JSON output");
  pur_cfg.attach(pur);

  // synth
  auto* syn = app.add_subcommand("synth", "write a synthetic labeled sequence");
  std::string syn_preset = "two-object", syn_spec, syn_out;
  std::size_t syn_frames = 12, syn_objects = 8;
  double syn_occlusion = 0.2;
  std::uint64_t syn_seed = 1;
  syn->add_option("--preset", syn_preset, "two-object | traffic | purity");
  syn->add_option("--spec", syn_spec, "JSON scene spec (overrides --preset)")->check(CLI::ExistingFile);
  syn->add_option("--frames", syn_frames, "number of frames");
  syn->add_option("--objects", syn_objects, "objects (traffic preset)");
  syn->add_option("--occlusion", syn_occlusion, "per-frame absence probability (traffic preset)");
  syn->add_option("--seed", syn_seed, "scene seed");
  syn->add_option("--out", syn_out, "sequence directory")->required();

  // report
  auto* rep = app.add_subcommand("report", "CSV + SVG plots: loss curves, tracking durations, purity sweep");
  ConfigOptions rep_cfg;
  std::string rep_seq, rep_log, rep_traj, rep_out;
  std::vector<double> rep_eps;
  rep->add_option("--seq", rep_seq, "sequence directory (tracking histogram; purity sweep when labeled)");
  rep->add_option("--log", rep_log, "train_log.jsonl for loss curves");
  rep->add_option("--trajectories", rep_traj, "trajectory JSON (otherwise tracked from --seq)");
  rep->add_option("--eps", rep_eps, "DBSCAN radii for the purity sweep [0.15 .. 0.45]");
  rep->add_option("--out", rep_out, "output directory")->required();
  rep_cfg.attach(rep);

  CLI11_PARSE(app, argc, argv);
  if (verbose) log::set_level(log::Level::kDebug);
  if (quiet) log::set_level(log::Level::kWarning);

  try {
    if (seg->parsed()) {
      const Config cfg = seg_cfg.build();
      const auto seq = load_any(seg_seq);
      const auto prepared = pipeline::prepare_sequence(seq, cfg.pipeline, cfg.seeds.ransac, seg_cfg.threads);
      json summary = json::array();
      for (std::size_t i = 0; i < prepared.size(); ++i) {
        json j = pipeline::cluster_set_to_json(prepared[i].clusters);
        j["plane"] = pipeline::plane_to_json(prepared[i].plane);
        write_json(fs::path(seg_out) / (io::frame_file_stem(i) + ".clusters.json"), j);
        summary.push_back({{"frame", i},
                           {"points", seq.frames[i].size()},
                           {"ground", prepared[i].clusters.num_points() -
                                          prepared[i].clusters.non_ground_indices.size()},
                           {"clusters", prepared[i].clusters.num_clusters()}});
      }
      std::cout << summary.dump(2) << '\n';
    } else if (trk->parsed()) {
      const Config cfg = trk_cfg.build();
      const auto seq = load_any(trk_seq);
      const auto prepared = pipeline::prepare_sequence(seq, cfg.pipeline, cfg.seeds.ransac, trk_cfg.threads);
      const auto result = track_prepared(cfg, seq, prepared, trk_ckpt);
      json adjacent = json::array();
      for (const auto& p : result.adjacent) adjacent.push_back(track::pairs_to_json(p));
      write_json(trk_out, {{"trajectories", track::trajectories_to_json(result.trajectories)},
                           {"adjacent", adjacent}});
      std::cout << json({{"trajectories", result.trajectories.size()},
                         {"durations", duration_json(result.trajectories)}})
                       .dump(2)
                << '\n';
    } else if (mine->parsed()) {
      const Config cfg = mine_cfg.build();
      const auto seq = load_any(mine_seq);
      const auto prepared = pipeline::prepare_sequence(seq, cfg.pipeline, cfg.seeds.ransac, mine_cfg.threads);
      const auto result = track_prepared(cfg, seq, prepared, mine_ckpt);
      if (fs::path(mine_out).has_parent_path()) fs::create_directories(fs::path(mine_out).parent_path());
      std::ofstream out(mine_out);
      std::size_t total = 0;
      for (std::size_t t = 0; t + mine_interval < seq.frames.size(); ++t) {
        const auto pairs = track::emit_interframe_pairs(result.trajectories, t, mine_interval);
        total += pairs.count();
        out << track::pairs_to_json(pairs).dump() << '\n';
      }
      if (!out) throw IoError("cannot write " + mine_out);
      std::cout << json({{"interval", mine_interval}, {"pairs", total}}).dump() << '\n';
    } else if (tr->parsed()) {
      const Config cfg = tr_cfg.build();
      Sequence seq;
      if (!tr_preset.empty()) {
        synth::SynthSceneSpec spec;
        if (tr_preset == "two-object") {
          spec = synth::two_object_spec(tr_frames);
        } else if (tr_preset == "traffic") {
          spec = synth::traffic_spec(tr_frames, 8, 0.2, tr_scene_seed);
        } else {
          throw InvalidArgument("unknown preset '" + tr_preset + "'");
        }
        seq = synth::generate_synthetic(spec, tr_scene_seed).sequence;
      } else if (!tr_seq.empty()) {
        seq = load_any(tr_seq);
      } else {
        throw InvalidArgument("train-toy needs --seq or --preset");
      }
      train::RunOptions opts;
      opts.out_dir = tr_out;
      opts.threads = tr_cfg.threads;
      if (!tr_resume.empty()) opts.resume = tr_resume;
      if (tr_stop > 0) opts.stop_after = tr_stop;
      const auto reports = train::run(cfg, seq, opts);
      std::cout << json({{"steps_run", reports.size()}, {"out", tr_out}}).dump() << '\n';
      if (fs::exists(fs::path(tr_out) / "metrics.json") && reports.size() > 0) {
        std::ifstream in(fs::path(tr_out) / "metrics.json");
        std::cout << in.rdbuf();
      }
    } else if (pur->parsed()) {
      const Config cfg = pur_cfg.build();
      const auto seq = load_any(pur_seq);
      const auto prepared = pipeline::prepare_sequence(seq, cfg.pipeline, cfg.seeds.ransac, pur_cfg.threads);
      const auto r = pipeline::sequence_purity(seq, prepared, pur_threshold);
      json clusters = json::array();
      for (const auto& c : r.clusters) {
        clusters.push_back({{"cluster", c.cluster_id},
                            {"dominant_class", c.dominant_class},
                            {"fraction", c.fraction},
                            {"points", c.point_count}});
      }
      const json j = {{"eps", cfg.pipeline.cluster.dbscan.eps},
                      {"threshold", r.threshold},
                      {"clusters", r.clusters.size()},
                      {"pure", r.pure_count},
                      {"proportion", r.proportion},
                      {"per_cluster", clusters}};
      if (!pur_out.empty()) write_json(pur_out, j);
      json brief = j;
      brief.erase("per_cluster");
      std::cout << brief.dump(2) << '\n';
    } else if (syn->parsed()) {
      synth::SynthSceneSpec spec;
      if (!syn_spec.empty()) {
        std::ifstream in(syn_spec);
        spec = synth::spec_from_json(json::parse(in));
      } else if (syn_preset == "two-object") {
        spec = synth::two_object_spec(syn_frames);
      } else if (syn_preset == "traffic") {
        spec = synth::traffic_spec(syn_frames, syn_objects, syn_occlusion, syn_seed);
      } else if (syn_preset == "purity") {
        spec = synth::purity_spec(syn_frames);
      } else {
        throw InvalidArgument("unknown preset '" + syn_preset + "'");
      }
      const auto out = synth::generate_synthetic(spec, syn_seed);
      io::write_sequence(syn_out, out.sequence);
      synth::write_ground_truth_json(fs::path(syn_out) / "truth.json", out.truth);
      std::size_t points = 0;
      for (const auto& f : out.sequence.frames) points += f.size();
      std::cout << json({{"frames", out.sequence.frames.size()}, {"points", points}, {"out", syn_out}}).dump()
                << '\n';
    } else if (rep->parsed()) {
      const Config cfg = rep_cfg.build();
      std::vector<fs::path> written;
      if (!rep_log.empty()) {
        const auto w = report::write_loss_curves(report::read_train_log(rep_log), rep_out);
        written.insert(written.end(), w.begin(), w.end());
      }
      std::vector<track::Trajectory> trajs;
      if (!rep_traj.empty()) {
        std::ifstream in(rep_traj);
        if (!in) throw IoError("cannot open " + rep_traj);
        const json j = json::parse(in);
        trajs = track::trajectories_from_json(j.contains("trajectories") ? j["trajectories"] : j);
      }
      if (!rep_seq.empty()) {
        const auto seq = load_any(rep_seq);
        if (rep_traj.empty()) {
          const auto prepared =
              pipeline::prepare_sequence(seq, cfg.pipeline, cfg.seeds.ransac, rep_cfg.threads);
          trajs = track_prepared(cfg, seq, prepared, "").trajectories;
        }
        bool labeled = false;
        for (const auto& f : seq.frames) labeled = labeled || f.has_labels();
        if (labeled) {
          const auto eps = rep_eps.empty() ? report::default_eps_sweep() : rep_eps;
          const auto rows = report::purity_sweep(seq, cfg.pipeline, eps, cfg.seeds.ransac);
          const auto w = report::write_purity_sweep(rows, rep_out);
          written.insert(written.end(), w.begin(), w.end());
        } else {
          log::warning("sequence has no labels; skipping the purity sweep");
        }
      }
      if (!rep_traj.empty() || !rep_seq.empty()) {
        const auto w = report::write_tracking_histogram(trajs, rep_out);
        written.insert(written.end(), w.begin(), w.end());
      }
      if (written.empty()) throw InvalidArgument("report needs --log, --seq or --trajectories");
      json files = json::array();
      for (const auto& p : written) files.push_back(p.string());
      std::cout << json({{"written", files}}).dump(2) << '\n';
    }
  } catch (const stssl::Error& e) {
    log::error(e.what());
    return 2;
  } catch (const std::exception& e) {
    log::error(std::string("unexpected failure: ") + e.what());
    return 3;
  }
  return 0;
}
