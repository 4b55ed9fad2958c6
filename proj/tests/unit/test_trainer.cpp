#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>
#include <random>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "stssl/checkpoint.hpp"
#include "stssl/error.hpp"
#include "stssl/kmeans.hpp"
#include "stssl/synth.hpp"
#include "stssl/trainer.hpp"

using namespace stssl;
using namespace stssl::train;
namespace fs = std::filesystem;

namespace {

// Desk-scale settings: the raw-sum losses need a far smaller step than the
// full-scale defaults.
Config desk_config(std::size_t epochs, std::size_t steps_per_epoch) {
  Config c;
  c.train.epochs = epochs;
  c.train.steps_per_epoch = steps_per_epoch;
  c.train.lr_init = 1e-4;
  c.train.lr_min = 2.5e-5;
  c.train.kmeans_k = 2;
  return c;
}

const Sequence& scene(std::size_t frames) {
  static std::map<std::size_t, Sequence> cache;
  auto it = cache.find(frames);
  if (it == cache.end()) {
    it = cache.emplace(frames, synth::generate_synthetic(synth::two_object_spec(frames), 11).sequence).first;
  }
  return it->second;
}

bool same_files(const fs::path& a, const fs::path& b) { return oracle::read_file(a) == oracle::read_file(b); }

}  // namespace

TEST(Schedule, LrMidpointUnderDefaults) {
  EXPECT_NEAR(lr_at(0.5, TrainConfig{}), 0.0225, 1e-15);
  EXPECT_EQ(lr_at(0.0, TrainConfig{}), 0.036);
  EXPECT_EQ(lr_at(1.0, TrainConfig{}), 0.009);
}

TEST(Schedule, LrLinearInStep) {
  TrainConfig t;
  const std::size_t total = 41;
  for (std::size_t s = 0; s < total; ++s) {
    const double expected = 0.036 + (0.009 - 0.036) * static_cast<double>(s) / (total - 1);
    EXPECT_NEAR(lr_at(progress_at(s, total), t), expected, 1e-15);
  }
}

TEST(Schedule, SamplePairRespectsIntervalAndRange) {
  Config c = desk_config(4, 25);
  for (std::size_t step = 0; step < 100; ++step) {
    const auto p = sample_pair(c, 10, step, 0);
    EXPECT_EQ(p.interval, track::interval_at(progress_at(step, 100), 5));
    EXPECT_EQ(p.n, p.m + p.interval);
    EXPECT_LT(p.n, 10u);
  }
  c.train.curriculum = false;
  c.train.fixed_interval = 5;
  EXPECT_EQ(sample_pair(c, 10, 0, 0).interval, 5u);
  EXPECT_EQ(sample_pair(c, 3, 0, 0).interval, 2u);  // shortened to fit
}

TEST(Trainer, LambdaZeroComputesButDoesNotApplyInterTerm) {
  Config c = desk_config(1, 100);
  const auto& seq = scene(4);
  Trainer with(c, seq);
  with.refresh_tracking();
  Trainer without(c, seq);
  without.refresh_tracking();
  without.state().trajectories.clear();

  const std::vector<FramePair> pairs{{0, 1, 1}};
  const auto r = with.train_on(pairs);
  const auto r0 = without.train_on(pairs);
  EXPECT_EQ(r.lambda, 0.0);
  EXPECT_GT(r.inter_pairs, 0u);
  EXPECT_GT(r.l_inter, 0.0);
  EXPECT_EQ(r.l_total, r.l_p2c);
  EXPECT_EQ(r0.inter_pairs, 0u);
  EXPECT_EQ(r.l_p2c, r0.l_p2c);
  EXPECT_EQ(with.state().net.online_encoder.params(), without.state().net.online_encoder.params());
  EXPECT_EQ(with.state().net.predictor.params(), without.state().net.predictor.params());
}

TEST(Trainer, WeightDecayNeverTouchesTarget) {
  Config c = desk_config(1, 10);
  c.train.weight_decay = 0.5;  // large enough to show up if misapplied
  Trainer t(c, scene(3));
  for (int i = 0; i < 3; ++i) {
    const auto before = t.state().net;
    t.step();
    const auto& after = t.state().net;
    const double m = after.momentum;
    const Eigen::VectorXd expect_enc =
        m * before.target_encoder.params() + (1 - m) * after.online_encoder.params();
    const Eigen::VectorXd expect_proj =
        m * before.target_projector.params() + (1 - m) * after.online_projector.params();
    EXPECT_LT((after.target_encoder.params() - expect_enc).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((after.target_projector.params() - expect_proj).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Trainer, StageSwitchesExactlyOnce) {
  Config c = desk_config(1, 20);
  Trainer t(c, scene(4));
  std::size_t switched_at = 0;
  for (std::size_t s = 0; s < 20; ++s) {
    const auto r = t.step();
    if (t.state().head_reinits == 1 && switched_at == 0) {
      switched_at = s;
      EXPECT_GT(r.lambda, 0.0);
      EXPECT_EQ(r.stage, "spatiotemporal");
    }
  }
  EXPECT_EQ(t.state().head_reinits, 1u);
  EXPECT_EQ(t.state().stage, Stage::kSpatiotemporal);
  // first step with progress > 0.4
  EXPECT_EQ(switched_at, 8u);
}

TEST(Trainer, NoClustersMeansSkippedStep) {
  Sequence seq;
  Frame f;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 300; ++i) f.points.push_back({static_cast<float>(u(rng)), static_cast<float>(u(rng)), 0, 0});
  seq.frames = {f};
  Config c = desk_config(1, 3);
  c.train.holdout_frames = 0;
  Trainer t(c, seq);
  const auto before = t.state().net.online_encoder.params();
  const auto r = t.step();
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(t.state().step, 1u);
  EXPECT_EQ(t.state().net.online_encoder.params(), before);
}

// One frame, frozen data: the point-to-cluster loss should fall over 50 steps.
TEST(Trainer, FiftyStepsOnOneFrameReduceP2c) {
  Sequence seq;
  seq.frames = {scene(1).frames[0]};
  std::size_t ok = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Config c = desk_config(1, 50);
    c.train.holdout_frames = 0;
    c.seeds.override_all(seed);
    Trainer t(c, seq);
    std::vector<double> p2c;
    for (int s = 0; s < 50; ++s) p2c.push_back(t.step().l_p2c_mean);
    double warm = 0, tail = 0;
    for (int s = 5; s < 15; ++s) warm += p2c[s] / 10;
    for (int s = 40; s < 50; ++s) tail += p2c[s] / 10;
    ok += tail < warm;
  }
  EXPECT_GE(ok, 9u);
}

TEST(Trainer, RejectsBadSetups) {
  Config c = desk_config(1, 5);
  c.train.holdout_frames = 4;
  EXPECT_THROW(Trainer(c, scene(4)), InvalidArgument);
  c = desk_config(1, 5);
  c.train.lr_init = -1;
  EXPECT_THROW(Trainer(c, scene(4)), InvalidArgument);
}

TEST(Run, InvalidConfigFailsBeforeAnyOutput) {
  Config c = desk_config(1, 5);
  c.pipeline.cluster.dbscan.eps = -1;
  const auto dir = oracle::temp_dir("run") / "out";
  RunOptions o;
  o.out_dir = dir;
  EXPECT_THROW(run(c, scene(3), o), InvalidArgument);
  EXPECT_FALSE(fs::exists(dir));
}

TEST(Run, ZeroEpochsWritesOnlyInitCheckpoint) {
  Config c = desk_config(0, 5);
  const auto dir = oracle::temp_dir("run");
  RunOptions o;
  o.out_dir = dir;
  EXPECT_TRUE(run(c, scene(3), o).empty());
  std::set<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) files.insert(e.path().filename().string());
  EXPECT_EQ(files, (std::set<std::string>{"config.json", "ckpt_init.bin", "ckpt_init.json"}));
}

TEST(Run, ResumeIsBitIdentical) {
  Config c = desk_config(2, 6);
  c.train.checkpoint_every = 4;
  const auto& seq = scene(5);
  const auto full = oracle::temp_dir("full");
  const auto part = oracle::temp_dir("part");
  RunOptions o;
  o.out_dir = full;
  const auto a = run(c, seq, o);
  o.out_dir = part;
  o.stop_after = 7;
  run(c, seq, o);
  ASSERT_TRUE(fs::exists(part / "ckpt_stop.bin"));
  ASSERT_FALSE(fs::exists(part / "ckpt_final.bin"));
  o.stop_after.reset();
  o.resume = part / "ckpt_stop";
  const auto b = run(c, seq, o);
  ASSERT_EQ(a.size(), 12u);
  ASSERT_EQ(b.size(), 12u);
  EXPECT_TRUE(same_files(full / "train_log.jsonl", part / "train_log.jsonl"));
  EXPECT_TRUE(same_files(full / "ckpt_final.bin", part / "ckpt_final.bin"));
  EXPECT_TRUE(same_files(full / "ckpt_final.json", part / "ckpt_final.json"));
  EXPECT_TRUE(same_files(full / "metrics.json", part / "metrics.json"));
}

TEST(Run, ResumeNeedsMatchingLog) {
  Config c = desk_config(1, 6);
  const auto dir = oracle::temp_dir("run");
  RunOptions o;
  o.out_dir = dir;
  o.stop_after = 3;
  run(c, scene(3), o);
  fs::remove(dir / "train_log.jsonl");
  o.stop_after.reset();
  o.resume = dir / "ckpt_stop";
  EXPECT_THROW(run(c, scene(3), o), IntegrityError);
}

TEST(Run, MetricsBundle) {
  Config c = desk_config(1, 4);
  const auto dir = oracle::temp_dir("run");
  RunOptions o;
  o.out_dir = dir;
  run(c, scene(3), o);
  std::ifstream in(dir / "metrics.json");
  const auto m = nlohmann::json::parse(in);
  EXPECT_EQ(m["steps"], 4);
  EXPECT_DOUBLE_EQ(m["purity"]["proportion"].get<double>(), 1.0);
  EXPECT_EQ(m["kmeans"]["k"], 2);
  EXPECT_TRUE(m["kmeans"]["agreement"].is_number());
  EXPECT_TRUE(m["loss"].contains("p2c_reduction"));
  EXPECT_EQ(m["tracking"]["durations"].size(), 5u);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  Config c = desk_config(1, 4);
  c.seeds.aug = 77;
  Trainer t(c, scene(3));
  t.step();
  t.step();
  const auto dir = oracle::temp_dir("ckpt");
  ckpt::save(dir / "a", t.state(), c);
  const auto l = ckpt::load(dir / "a");
  EXPECT_EQ(l.state.step, 2u);
  EXPECT_EQ(l.config.seeds.aug, 77u);
  EXPECT_EQ(l.state.net.online_encoder.params(), t.state().net.online_encoder.params());
  EXPECT_EQ(l.state.net.target_projector.params(), t.state().net.target_projector.params());
  EXPECT_EQ(l.state.velocity.predictor, t.state().velocity.predictor);
  EXPECT_EQ(l.state.trajectories.size(), t.state().trajectories.size());
  EXPECT_EQ(l.state.tracked_epoch, t.state().tracked_epoch);
  ckpt::save(dir / "b", l.state, l.config);
  EXPECT_TRUE(same_files(dir / "a.bin", dir / "b.bin"));
  EXPECT_TRUE(same_files(dir / "a.json", dir / "b.json"));

  {
    std::fstream f(dir / "a.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x7f');
  }
  EXPECT_THROW(ckpt::load(dir / "a"), IntegrityError);
  EXPECT_THROW(ckpt::load(dir / "missing"), IoError);
  std::ofstream(dir / "c.json") << "{not json";
  std::ofstream(dir / "c.bin") << "";
  EXPECT_THROW(ckpt::load(dir / "c"), FormatError);
}

TEST(KMeans, SingleClusterInertiaIsTotalVariance) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 2);
  Eigen::MatrixXd x(50, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = n(rng);
  const auto r = analysis::kmeans(x, 1, 3);
  for (int l : r.labels) EXPECT_EQ(l, 0);
  const Eigen::RowVector3d mean = x.colwise().mean();
  const double ss = (x.rowwise() - mean).squaredNorm();
  EXPECT_NEAR(r.inertia, ss, 1e-9 * ss);
}

TEST(KMeans, TwoSeparatedBlobs) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 0.3);
  Eigen::MatrixXd x(80, 4);
  std::vector<int> truth;
  for (Eigen::Index i = 0; i < 80; ++i) {
    const double c = i < 40 ? 0.0 : 10.0;
    for (Eigen::Index j = 0; j < 4; ++j) x(i, j) = c + n(rng);
    truth.push_back(i < 40 ? 0 : 1);
  }
  const auto a = kmeans_feature_analysis(x, 2, 5, &truth);
  ASSERT_TRUE(a.agreement);
  EXPECT_EQ(*a.agreement, 1.0);
}

TEST(KMeans, InertiaNonIncreasing) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd x(200, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = u(rng);
    const auto r = analysis::kmeans(x, 6, rng());
    ASSERT_FALSE(r.inertia_history.empty());
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i) {
      EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] * (1 + 1e-12));
    }
  }
}

TEST(KMeans, DeterministicAndErrors) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(30, 2);
  EXPECT_EQ(analysis::kmeans(x, 3, 9).labels, analysis::kmeans(x, 3, 9).labels);
  EXPECT_THROW(analysis::kmeans(x, 31, 1), InvalidArgument);
  EXPECT_THROW(analysis::kmeans(x, 0, 1), InvalidArgument);
}

TEST(KMeans, BestPermutationAgreement) {
  const std::vector<int> pred{1, 1, 0, 0, 2}, truth{5, 5, 7, 7, 7};
  EXPECT_DOUBLE_EQ(analysis::best_permutation_agreement(pred, truth), 0.8);
}
