// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//   acceptance --cli <path to stssl> --work <scratch dir> [--only N]

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "stssl/cluster.hpp"
#include "stssl/config.hpp"
#include "stssl/encoder.hpp"
#include "stssl/ground.hpp"
#include "stssl/hungarian.hpp"
#include "stssl/log.hpp"
#include "stssl/losses.hpp"
#include "stssl/pipeline.hpp"
#include "stssl/synth.hpp"
#include "stssl/track.hpp"
#include "stssl/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace stssl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work;
std::string g_cli;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

// 1: Hungarian against exhaustive search
Outcome hungarian_vs_brute_force() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> dim(1, 7);
  std::uniform_real_distribution<double> u(0, 10);
  std::uniform_int_distribution<int> coin(0, 3);
  int bad = 0;
  const int n = 1200;
  for (int t = 0; t < n; ++t) {
    const int r = dim(rng), c = dim(rng);
    Eigen::MatrixXd cost(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) cost(i, j) = coin(rng) == 0 ? std::floor(u(rng)) : u(rng);  // ties too
    const auto a = track::hungarian(cost);
    double sum = 0.0;
    for (auto [i, j] : a.pairs) sum += cost(i, j);
    const double best = oracle::brute_force_assignment(cost);
    if (a.pairs.size() != static_cast<std::size_t>(std::min(r, c)) || std::abs(sum - best) > 1e-9 ||
        std::abs(a.cost - best) > 1e-9)
      ++bad;
  }
  return {bad == 0, std::to_string(n) + " matrices, " + std::to_string(bad) + " mismatches"};
}

// 2: DBSCAN with min_pts 1 against eps-graph components
Outcome dbscan_vs_components() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> count(1, 300);
  std::uniform_real_distribution<double> eps(0.1, 1.5);
  int bad = 0;
  for (int f = 0; f < 100; ++f) {
    const auto pts = oracle::random_points(rng, static_cast<std::size_t>(count(rng)), 6.0);
    const double e = eps(rng);
    if (!oracle::same_partition(cluster::dbscan(pts, e, 1), oracle::eps_components(pts, e))) ++bad;
  }
  return {bad == 0, "100 frames, " + std::to_string(bad) + " partition mismatches"};
}

// 3: RANSAC normal within 1 degree of a least-squares fit to the true inliers
Outcome ransac_normal() {
  int good = 0;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    std::mt19937_64 rng(300 + s);
    std::uniform_real_distribution<double> u(-10, 10), uz(-3, 5), slope(-0.15, 0.15);
    std::normal_distribution<double> noise(0, 0.02);
    const double a = slope(rng), b = slope(rng);
    std::vector<Eigen::Vector3d> all, inl;
    for (int i = 0; i < 1000; ++i) {
      if (i < 700) {
        const double x = u(rng), y = u(rng);
        inl.emplace_back(x, y, a * x + b * y + noise(rng));
        all.push_back(inl.back());
      } else {
        all.emplace_back(u(rng), u(rng), uz(rng));
      }
    }
    std::shuffle(all.begin(), all.end(), rng);
    const auto plane = ground::fit_plane_ransac(all, ground::RansacConfig{}, s);
    if (!plane) continue;
    const double ang = oracle::angle_deg(plane->normal, oracle::ls_plane_normal(inl));
    worst = std::max(worst, ang);
    if (ang <= 1.0) ++good;
  }
  return {good >= 49, std::to_string(good) + "/50 within 1 deg, worst " + fmt(worst) + " deg"};
}

// 4: loss values against direct sums, gradients against central differences
Outcome loss_checks() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> dim(2, 6), groups(1, 4), members(1, 5);
  double worst_val = 0.0, worst_grad = 0.0, target_grad = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int d = dim(rng);
    std::vector<Eigen::MatrixXd> pg;
    std::vector<Eigen::VectorXd> cf;
    const int g = groups(rng);
    for (int i = 0; i < g; ++i) {
      pg.push_back(random_matrix(rng, members(rng), d));
      cf.push_back(random_matrix(rng, d, 1).col(0));
    }
    const auto r = losses::loss_p2c(pg, cf);
    const double direct = oracle::direct_p2c(pg, cf);
    worst_val = std::max(worst_val, std::abs(r.value - direct) / std::max(1.0, std::abs(direct)));
    for (const auto& gc : r.grad_clusters) target_grad = std::max(target_grad, gc.cwiseAbs().maxCoeff());
    for (int i = 0; i < g; ++i) {
      Eigen::Map<const Eigen::VectorXd> x0(pg[i].data(), pg[i].size());
      auto f = [&](const Eigen::VectorXd& x) {
        auto copy = pg;
        copy[i] = Eigen::Map<const Eigen::MatrixXd>(x.data(), pg[i].rows(), pg[i].cols());
        return oracle::direct_p2c(copy, cf);
      };
      const Eigen::VectorXd fd = oracle::central_diff(f, x0);
      Eigen::Map<const Eigen::VectorXd> an(r.grad_points[i].data(), r.grad_points[i].size());
      worst_grad = std::max(worst_grad, oracle::rel_err(an, fd));
    }

    const int m = members(rng);
    const Eigen::MatrixXd cm = random_matrix(rng, m, d), cn = random_matrix(rng, m, d);
    const auto ri = losses::loss_inter(cm, cn);
    const double di = oracle::direct_inter(cm, cn);
    worst_val = std::max(worst_val, std::abs(ri.value - di) / std::max(1.0, std::abs(di)));
    target_grad = std::max(target_grad, ri.grad_n.size() ? ri.grad_n.cwiseAbs().maxCoeff() : 0.0);
    Eigen::Map<const Eigen::VectorXd> x0(cm.data(), cm.size());
    auto fi = [&](const Eigen::VectorXd& x) {
      return oracle::direct_inter(Eigen::Map<const Eigen::MatrixXd>(x.data(), m, d), cn);
    };
    Eigen::Map<const Eigen::VectorXd> an(ri.grad_m.data(), ri.grad_m.size());
    worst_grad = std::max(worst_grad, oracle::rel_err(an, oracle::central_diff(fi, x0)));
  }
  const bool ok = worst_val <= 1e-10 && worst_grad <= 1e-5 && target_grad == 0.0;
  return {ok, "200 instances, value err " + fmt(worst_val) + ", grad err " + fmt(worst_grad) +
                  ", max target grad " + fmt(target_grad)};
}

// 5: losses ignore feature magnitude; assignment ignores positive cost scaling
Outcome scale_invariance() {
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> scale(0.01, 100.0), u(0, 10);
  double worst = 0.0;
  int changed = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<Eigen::MatrixXd> pg{random_matrix(rng, 4, 5), random_matrix(rng, 3, 5)};
    std::vector<Eigen::VectorXd> cf{random_matrix(rng, 5, 1).col(0), random_matrix(rng, 5, 1).col(0)};
    const double base = losses::loss_p2c(pg, cf).value;
    for (auto& g : pg) g *= scale(rng);
    for (auto& c : cf) c *= scale(rng);
    worst = std::max(worst, std::abs(losses::loss_p2c(pg, cf).value - base) / std::max(1.0, base));

    const Eigen::MatrixXd cm = random_matrix(rng, 4, 5), cn = random_matrix(rng, 4, 5);
    const double bi = losses::loss_inter(cm, cn).value;
    const double si = losses::loss_inter(cm * scale(rng), cn * scale(rng)).value;
    worst = std::max(worst, std::abs(si - bi) / std::max(1.0, bi));

    Eigen::MatrixXd cost(5, 6);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 6; ++j) cost(i, j) = u(rng);
    const auto a = track::hungarian(cost);
    const auto b = track::hungarian(cost * scale(rng));
    if (a.pairs != b.pairs) ++changed;
  }
  return {worst <= 1e-12 && changed == 0,
          "max relative loss change " + fmt(worst) + ", " + std::to_string(changed) + " assignments changed"};
}

// 6: tracking duration statistics against the ground-truth presence runs
Outcome tracking_durations() {
  const auto s = synth::generate_synthetic(synth::traffic_spec(40, 8, 0.2, 606), 606);
  const auto sets = pipeline::cluster_sets(pipeline::prepare_sequence(s.sequence, PipelineConfig{}, 3));
  track::MatchConfig cfg;
  cfg.feature_mode = track::FeatureMode::kLocationOnly;
  const auto result = track::track_sequence(sets, cfg);
  const auto lengths = oracle::gt_trajectory_lengths(s.truth);
  const std::vector<std::size_t> ks{1, 2, 3, 5, 10};
  const auto st = track::tracking_stats(result.trajectories, ks);
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double want = oracle::fraction_at_least(lengths, ks[i]);
    if (ks[i] == 3) ok = std::abs(st[i].fraction - want) <= 0.02;
    detail += "k>=" + std::to_string(ks[i]) + " " + fmt(st[i].fraction) + " (gt " + fmt(want) + ") ";
  }
  return {ok, detail + "| " + std::to_string(result.trajectories.size()) + " trajectories"};
}

int run_cli(const std::string& args) {
  const std::string cmd = g_cli + " -q " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 7: one report invocation writes the purity sweep table and chart
Outcome purity_report() {
  const auto seq = g_work / "purity_seq";
  const auto out = g_work / "purity_report";
  fs::remove_all(seq);
  fs::remove_all(out);
  if (run_cli("synth --preset purity --out " + seq.string()) != 0) return {false, "synth failed"};
  if (run_cli("report --seq " + seq.string() + " --out " + out.string()) != 0) return {false, "report failed"};
  const auto csv = out / "purity_sweep.csv";
  if (!fs::exists(csv) || !fs::exists(out / "purity_sweep.svg")) return {false, "missing csv or svg"};
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);  // header
  std::size_t rows = 0;
  double worst = 1.0;
  bool ok = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(std::stod(cell));
    if (cells.size() != 4 || cells[1] == 0) ok = false;
    if (cells.size() == 4) worst = std::min(worst, cells[3]);
    ++rows;
  }
  ok = ok && rows == 7 && worst >= 0.95;
  return {ok, std::to_string(rows) + " eps values, lowest proportion " + fmt(worst)};
}

Config desk_config() {
  Config c;
  c.train.epochs = 4;
  c.train.steps_per_epoch = 50;
  c.train.lr_init = 1e-4;
  c.train.lr_min = 2.5e-5;
  c.train.kmeans_k = 2;
  return c;
}

// 8: toy training on the two-object scene across seeds
Outcome toy_training() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto seq = synth::generate_synthetic(synth::two_object_spec(12), 11).sequence;
  int good = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Config c = desk_config();
    c.seeds.override_all(seed);
    const auto dir = g_work / ("toy_seed_" + std::to_string(seed));
    fs::remove_all(dir);
    train::run(c, seq, {dir, std::nullopt, 1, std::nullopt});
    std::ifstream in(dir / "metrics.json");
    const json m = json::parse(in);
    const double red = m["loss"]["p2c_reduction"].get<double>();
    const double agr = m["kmeans"]["agreement"].get<double>();
    if (red >= 0.5 && agr >= 0.9) ++good;
    detail += fmt(red) + "/" + fmt(agr) + " ";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {good >= 8 && secs < 300.0, std::to_string(good) + "/10 seeds pass in " + fmt(secs) +
                                         " s (reduction/agreement: " + detail + ")"};
}

// 9: identical runs produce identical bytes
Outcome determinism() {
  const auto seq = synth::generate_synthetic(synth::two_object_spec(5), 9).sequence;
  Config c = desk_config();
  c.train.epochs = 2;
  c.train.steps_per_epoch = 6;
  c.train.checkpoint_every = 4;
  const auto a = g_work / "det_a", b = g_work / "det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  train::run(c, seq, {a, std::nullopt, 1, std::nullopt});
  train::run(c, seq, {b, std::nullopt, 1, std::nullopt});
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto name = e.path().filename();
    const bool relevant = name == "train_log.jsonl" || name.string().rfind("ckpt_", 0) == 0;
    if (!relevant) continue;
    ++files;
    if (!fs::exists(b / name) || oracle::read_file(e.path()) != oracle::read_file(b / name)) ++differ;
  }
  return {files >= 5 && differ == 0,
          std::to_string(files) + " log and checkpoint files, " + std::to_string(differ) + " differ"};
}

// 10: schedule endpoints and EMA closed form
Outcome schedules() {
  const Config c;
  const double l0 = losses::lambda_at(0.0, c.train.lambda);
  const double l1 = losses::lambda_at(1.0, c.train.lambda);
  const double lr = train::lr_at(0.5, c.train);
  encoder::ByolState s = encoder::make_byol(c.encoder, 0.99, 10);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0, 1);
  for (Eigen::Index i = 0; i < s.online_encoder.params().size(); ++i) s.online_encoder.params()(i) += n(rng);
  const double d0 = (s.target_encoder.params() - s.online_encoder.params()).norm();
  for (int i = 0; i < 100; ++i) encoder::ema_update(s);
  const double d = (s.target_encoder.params() - s.online_encoder.params()).norm();
  const double want = oracle::ema_decay_factor(0.99, 100);
  const double ema_err = std::abs(d / d0 - want) / want;
  const bool ok = l0 == 0.0 && l1 == 4.0 && std::abs(lr - 0.0225) <= 1e-12 && ema_err <= 1e-9;
  return {ok, "lambda(0) " + fmt(l0) + ", lambda(1) " + fmt(l1) + ", lr(0.5) " + fmt(lr) +
                  ", ema relative err " + fmt(ema_err)};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string k = argv[i];
    if (k == "--cli") g_cli = argv[i + 1];
    else if (k == "--work") g_work = argv[i + 1];
    else if (k == "--only") only = std::atoi(argv[i + 1]);
  }
  if (g_cli.empty() || g_work.empty()) {
    std::cerr << "usage: acceptance --cli <stssl> --work <dir> [--only N]\n";
    return 2;
  }
  fs::create_directories(g_work);
  log::set_level(log::Level::kError);

  struct Criterion {
    const char* name;
    std::function<Outcome()> fn;
    double limit_s;  // 0 = no wall-clock limit of its own
  };
  const std::vector<Criterion> all{
      {"hungarian matches exhaustive search", hungarian_vs_brute_force, 10.0},
      {"dbscan min_pts=1 equals eps components", dbscan_vs_components, 30.0},
      {"ransac normal within 1 deg", ransac_normal, 0.0},
      {"loss values and gradients", loss_checks, 0.0},
      {"scale invariance", scale_invariance, 0.0},
      {"tracking durations vs ground truth", tracking_durations, 0.0},
      {"purity report over eps sweep", purity_report, 0.0},
      {"toy training reduces p2c and separates objects", toy_training, 0.0},
      {"bit-identical reruns", determinism, 0.0},
      {"lambda, lr and ema schedules", schedules, 0.0},
  };

  int failed = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (only && static_cast<int>(i + 1) != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = all[i].fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (all[i].limit_s > 0 && secs >= all[i].limit_s) {
      o.pass = false;
      o.detail += " (over the " + fmt(all[i].limit_s) + " s limit)";
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %2zu %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", i + 1, all[i].name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
