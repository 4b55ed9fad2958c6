#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "oracles.hpp"
#include "stssl/encoder.hpp"
#include "stssl/error.hpp"
#include "stssl/losses.hpp"
#include "stssl/mlp.hpp"
#include "stssl/pipeline.hpp"
#include "stssl/synth.hpp"

using namespace stssl;
using namespace stssl::encoder;

namespace {

struct Scene {
  Sequence seq;
  std::vector<pipeline::PreparedFrame> prepared;
};

const Scene& two_objects() {
  static const Scene s = [] {
    Scene out;
    out.seq = synth::generate_synthetic(synth::two_object_spec(2), 5).sequence;
    out.prepared = pipeline::prepare_sequence(out.seq, PipelineConfig{}, 3);
    return out;
  }();
  return s;
}

View scene_view() {
  const auto& s = two_objects();
  return make_view(s.seq.frames[0], s.prepared[0].clusters, s.prepared[0].plane);
}

double pairwise_ratio_error(const View& a, const View& b, double factor) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); i += 37) {
    for (std::size_t j = i + 1; j < a.size(); j += 53) {
      const double da = (a.points[i] - a.points[j]).norm();
      const double db = (b.points[i] - b.points[j]).norm();
      worst = std::max(worst, std::abs(db - factor * da));
    }
  }
  return worst;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int r, int c, double s = 1.0) {
  std::normal_distribution<double> n(0, s);
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

}  // namespace

TEST(Augment, IdentitySpecReturnsInput) {
  const View v = scene_view();
  const View a = augment(v, AugmentSpec::identity());
  EXPECT_EQ(a.points, v.points);
  EXPECT_EQ(a.heights, v.heights);
  EXPECT_EQ(a.cluster_of, v.cluster_of);
  EXPECT_EQ(a.source_index, v.source_index);
  EXPECT_TRUE(a.dropped.empty());
  EXPECT_TRUE(a.excluded_clusters.empty());
}

TEST(Augment, FlipIsAnInvolution) {
  const View v = scene_view();
  auto spec = AugmentSpec::identity();
  spec.flip_x_prob = 1.0;
  spec.seed = 99;
  AugmentRecord rec;
  const View once = augment(v, spec, &rec);
  EXPECT_TRUE(rec.flip_x);
  EXPECT_NE(once.points, v.points);
  EXPECT_EQ(augment(once, spec).points, v.points);
}

TEST(Augment, RotationAndFlipsAreIsometries) {
  const View v = scene_view();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto spec = AugmentSpec::identity();
    spec.flip_x_prob = spec.flip_y_prob = 0.5;
    spec.max_rotation = M_PI;
    spec.seed = seed;
    const View a = augment(v, spec);
    EXPECT_LT(pairwise_ratio_error(v, a, 1.0), 1e-6);
    EXPECT_EQ(a.heights, v.heights);
  }
}

TEST(Augment, ScaleMultipliesDistances) {
  const View v = scene_view();
  auto spec = AugmentSpec::identity();
  spec.scale_range = 0.2;
  spec.max_rotation = 1.0;
  spec.seed = 4;
  AugmentRecord rec;
  const View a = augment(v, spec, &rec);
  EXPECT_NE(rec.scale, 1.0);
  EXPECT_LT(pairwise_ratio_error(v, a, rec.scale), 1e-6);
  EXPECT_NEAR(a.heights[5], rec.scale * v.heights[5], 1e-12);
}

TEST(Augment, DeterministicAndClipBookkeeping) {
  const View v = scene_view();
  AugmentSpec spec;
  spec.clip_min_fraction = 0.6;
  spec.seed = 12;
  const View a = augment(v, spec), b = augment(v, spec);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.size() + a.dropped.size(), v.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.cluster_of[i], v.cluster_of[a.source_index[i]]);
  }
}

TEST(Augment, ClusterCroppedAwayIsExcluded) {
  const View v = scene_view();
  ASSERT_EQ(v.num_clusters, 2u);
  // objects sit at x = -3 and x = +3; a narrow crop keeps at most one
  bool saw_exclusion = false;
  for (std::uint64_t seed = 0; seed < 40 && !saw_exclusion; ++seed) {
    auto spec = AugmentSpec::identity();
    spec.clip_min_fraction = 0.2;
    spec.seed = seed;
    const View a = augment(v, spec);
    for (int id : a.excluded_clusters) {
      saw_exclusion = true;
      EXPECT_EQ(std::count(a.cluster_of.begin(), a.cluster_of.end(), id), 0);
    }
  }
  EXPECT_TRUE(saw_exclusion);
}

TEST(Augment, InvalidSpecRejected) {
  AugmentSpec s;
  s.flip_x_prob = 1.5;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = {};
  s.clip_min_fraction = 0;
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(Encode, ZeroWeightsGiveZeroFeatures) {
  EncoderConfig cfg;
  nn::Mlp enc = make_encoder(cfg);
  enc.params().setZero();
  const auto y = encode_points(enc, scene_view(), cfg);
  EXPECT_EQ(y.cols(), cfg.dim);
  EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Encode, DuplicatedPointsGiveIdenticalRows) {
  View v = scene_view();
  v.points.push_back(v.points[10]);
  v.heights.push_back(v.heights[10]);
  v.cluster_of.push_back(v.cluster_of[10]);
  v.source_index.push_back(v.source_index[10]);
  EncoderConfig cfg;
  nn::Mlp enc = make_encoder(cfg);
  enc.init(3);
  const auto y = encode_points(enc, v, cfg);
  EXPECT_EQ(y.row(10), y.row(static_cast<Eigen::Index>(v.size() - 1)));
  EXPECT_TRUE(y.allFinite());
}

TEST(Encode, DescriptorHeightFallsBackToZ) {
  const auto& s = two_objects();
  const View v = make_view(s.seq.frames[0], s.prepared[0].clusters, std::nullopt);
  for (std::size_t i = 0; i < v.size(); i += 101) EXPECT_EQ(v.heights[i], v.points[i].z());
}

TEST(Encode, NonFiniteActivationFailsFast) {
  nn::Mlp m({2, 3, 1});
  m.init(1);
  Eigen::MatrixXd x(1, 2);
  x << std::numeric_limits<double>::quiet_NaN(), 0;
  EXPECT_THROW(m.forward(x), NumericalError);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    nn::Mlp m({5, 7, 6, 4});
    m.init(rng());
    const Eigen::MatrixXd x = random_matrix(rng, 3, 5);
    const Eigen::MatrixXd w = random_matrix(rng, 3, 4);
    nn::Mlp::Cache cache;
    m.forward(x, &cache);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.num_params()));
    const Eigen::MatrixXd gx = m.backward(cache, w, g);
    auto f = [&](const Eigen::VectorXd& p) {
      nn::Mlp q = m;
      q.params() = p;
      return (q.forward(x).array() * w.array()).sum();
    };
    EXPECT_LT(oracle::rel_err(g, oracle::central_diff(f, m.params())), 1e-5);
    auto fx = [&](const Eigen::VectorXd& flat) {
      const Eigen::MatrixXd xx = Eigen::Map<const Eigen::MatrixXd>(flat.data(), 3, 5);
      return (m.forward(xx).array() * w.array()).sum();
    };
    const Eigen::VectorXd xflat = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
    const Eigen::VectorXd gxflat = Eigen::Map<const Eigen::VectorXd>(gx.data(), gx.size());
    EXPECT_LT(oracle::rel_err(gxflat, oracle::central_diff(fx, xflat)), 1e-5);
  }
}

// Whole online stack (encoder -> projector -> predictor) through a p2c loss.
TEST(Byol, FullGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  EncoderConfig cfg;
  cfg.dim = 4;
  cfg.hiddens = {6};
  cfg.head_hidden = 5;
  for (int trial = 0; trial < 3; ++trial) {
    ByolState s = make_byol(cfg, 0.99, rng());
    const Eigen::MatrixXd x = random_matrix(rng, 6, kDescriptorDim);
    const std::vector<int> members{0, 0, 1, 1, 1, 2};
    const auto target = group_and_pool(target_forward(s, x), members);
    auto loss_of = [&](const ByolState& st, HeadCache* cache, Eigen::MatrixXd* grad_out) {
      const Eigen::MatrixXd out = online_forward(st, x, cache);
      const auto bank = group_and_pool(out, members);
      const auto r = losses::loss_p2c(bank, target);
      if (grad_out) {
        *grad_out = Eigen::MatrixXd::Zero(out.rows(), out.cols());
        for (std::size_t i = 0; i < bank.groups.size(); ++i) {
          for (std::size_t j = 0; j < bank.groups[i].rows.size(); ++j) {
            grad_out->row(static_cast<Eigen::Index>(bank.groups[i].rows[j])) +=
                r.grad_points[i].row(static_cast<Eigen::Index>(j));
          }
        }
      }
      return r.value;
    };
    HeadCache cache;
    Eigen::MatrixXd gout;
    loss_of(s, &cache, &gout);
    ByolGrads g(s);
    online_backward(s, cache, gout, g);

    auto check = [&](nn::Mlp ByolState::*net, const Eigen::VectorXd& analytic) {
      auto f = [&](const Eigen::VectorXd& p) {
        ByolState t = s;
        (t.*net).params() = p;
        return loss_of(t, nullptr, nullptr);
      };
      EXPECT_LT(oracle::rel_err(analytic, oracle::central_diff(f, (s.*net).params())), 1e-5);
    };
    check(&ByolState::online_encoder, g.encoder);
    check(&ByolState::online_projector, g.projector);
    check(&ByolState::predictor, g.predictor);
  }
}

TEST(Pool, SinglePointCluster) {
  Eigen::MatrixXd f(1, 3);
  f << 0.5, -2, 3;
  const std::vector<int> member{0};
  const auto bank = group_and_pool(f, member);
  ASSERT_EQ(bank.groups.size(), 1u);
  EXPECT_EQ(bank.groups[0].pooled, Eigen::Vector3d(0.5, -2, 3));
}

TEST(Pool, ComponentwiseMax) {
  Eigen::MatrixXd f(2, 2);
  f << 1, 0, 0, 1;
  const std::vector<int> member{4, 4};
  const auto bank = group_and_pool(f, member);
  ASSERT_EQ(bank.groups.size(), 1u);
  EXPECT_EQ(bank.groups[0].cluster_id, 4);
  EXPECT_EQ(bank.groups[0].pooled, Eigen::Vector2d(1, 1));
  EXPECT_EQ(bank.groups[0].argmax, (std::vector<std::size_t>{0, 1}));
}

TEST(Pool, DominanceAndPartition) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd f = random_matrix(rng, 40, 6);
    std::vector<int> member(40);
    for (auto& m : member) m = static_cast<int>(rng() % 6) - 1;  // -1 = unclustered
    const auto bank = group_and_pool(f, member);
    std::size_t covered = 0;
    for (const auto& g : bank.groups) {
      covered += g.rows.size();
      for (std::size_t j = 0; j < g.rows.size(); ++j) {
        EXPECT_EQ(member[g.rows[j]], g.cluster_id);
        EXPECT_EQ(g.grouped.row(static_cast<Eigen::Index>(j)), f.row(static_cast<Eigen::Index>(g.rows[j])));
      }
      for (Eigen::Index t = 0; t < f.cols(); ++t) {
        EXPECT_EQ(g.pooled(t), g.grouped.col(t).maxCoeff());
        EXPECT_EQ(g.pooled(t), g.grouped(static_cast<Eigen::Index>(g.argmax[t]), t));
      }
    }
    EXPECT_EQ(covered, static_cast<std::size_t>(std::count_if(member.begin(), member.end(), [](int m) { return m >= 0; })));
  }
}

TEST(Pool, MissingClusterOmittedAndPooledMatrixChecks) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Ones(2, 3);
  const std::vector<int> member{0, 2};
  const auto bank = group_and_pool(f, member);
  EXPECT_EQ(bank.groups.size(), 2u);
  EXPECT_EQ(bank.find(1), nullptr);
  EXPECT_THROW(bank.pooled_matrix(3), Error);
}

TEST(Ema, MomentumOneKeepsTarget) {
  ByolState s = make_byol(EncoderConfig{}, 0.5, 1);
  s.online_encoder.params().array() += 1.0;
  const Eigen::VectorXd before = s.target_encoder.params();
  s.momentum = 1.0;
  ema_update(s);
  EXPECT_EQ(s.target_encoder.params(), before);
}

TEST(Ema, MomentumZeroCopiesOnline) {
  ByolState s = make_byol(EncoderConfig{}, 0.5, 1);
  s.online_encoder.params().array() += 1.0;
  s.online_projector.params().array() -= 0.5;
  s.momentum = 0.0;
  ema_update(s);
  EXPECT_EQ(s.target_encoder.params(), s.online_encoder.params());
  EXPECT_EQ(s.target_projector.params(), s.online_projector.params());
}

TEST(Ema, ClosedFormDecay) {
  ByolState s = make_byol(EncoderConfig{}, 0.99, 2);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  for (Eigen::Index i = 0; i < s.online_encoder.params().size(); ++i) s.online_encoder.params()(i) += n(rng);
  const double d0 = (s.target_encoder.params() - s.online_encoder.params()).norm();
  for (int i = 0; i < 100; ++i) ema_update(s);
  const double d = (s.target_encoder.params() - s.online_encoder.params()).norm();
  const double expected = oracle::ema_decay_factor(0.99, 100);
  EXPECT_NEAR(d / d0, expected, 1e-9 * expected);
}

TEST(Ema, ShapeMismatchRejected) {
  ByolState s = make_byol(EncoderConfig{}, 0.99, 2);
  s.target_encoder = nn::Mlp({5, 3});
  EXPECT_THROW(ema_update(s), InvalidArgument);
}

TEST(ReinitHeads, EncoderUntouchedHeadsRedrawn) {
  ByolState s = make_byol(EncoderConfig{}, 0.99, 4);
  s.online_encoder.params().array() += 0.25;
  const ByolState before = s;
  reinit_heads(s, 1234);
  const auto& a = before.online_encoder.params();
  const auto& b = s.online_encoder.params();
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()), 0);
  EXPECT_EQ(s.target_encoder.params(), before.target_encoder.params());
  EXPECT_NE(s.online_projector.params(), before.online_projector.params());
  EXPECT_NE(s.predictor.params(), before.predictor.params());
  EXPECT_EQ(s.target_projector.params(), s.online_projector.params());
}

// Loss right after a head re-init should look like the loss of any fresh head
// on the same batch: inside mean +- 3 sd of 10 fresh draws.
TEST(ReinitHeads, LossWithinFreshInitBand) {
  const View v = scene_view();
  EncoderConfig cfg;
  const auto rows = v.clustered_rows();
  std::vector<int> member;
  for (std::size_t r : rows) member.push_back(v.cluster_of[r]);
  const Eigen::MatrixXd x = descriptors(v, rows, cfg);

  ByolState trained = make_byol(cfg, 0.99, 5);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 0.05);
  for (Eigen::Index i = 0; i < trained.online_encoder.params().size(); ++i) {
    trained.online_encoder.params()(i) += n(rng);
  }
  trained.target_encoder = trained.online_encoder;

  auto loss = [&](const ByolState& s) {
    const auto on = group_and_pool(online_forward(s, x, nullptr), member);
    const auto tg = group_and_pool(target_forward(s, x), member);
    return losses::loss_p2c(on, tg).value;
  };
  std::vector<double> band;
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    ByolState s = trained;
    reinit_heads(s, seed);
    band.push_back(loss(s));
  }
  double mean = 0, var = 0;
  for (double b : band) mean += b / band.size();
  for (double b : band) var += (b - mean) * (b - mean) / (band.size() - 1);
  ByolState s = trained;
  reinit_heads(s, 7777);
  const double l = loss(s);
  EXPECT_GE(l, mean - 3 * std::sqrt(var));
  EXPECT_LE(l, mean + 3 * std::sqrt(var));
}
