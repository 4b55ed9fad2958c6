#include "stssl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "stssl/error.hpp"
#include "stssl/rng.hpp"

namespace stssl::synth {
namespace {

using json = nlohmann::json;

enum : std::uint64_t { kTagObject = 1, kTagGround = 2, kTagJitter = 3 };

struct SurfaceSample {
  Eigen::Vector3d local;
  Eigen::Vector3d normal;   // outward, local frame
  Eigen::Vector3d anchor;   // face center for planar faces, the point itself when curved
};

Eigen::Matrix3d yaw_rotation(double yaw) {
  return Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

std::size_t sample_count(double area, double density) {
  return static_cast<std::size_t>(std::llround(area * density));
}

// Planar rectangular face: center c, in-plane axes u, v with half sizes.
void sample_rect(const Eigen::Vector3d& c, const Eigen::Vector3d& n,
                 const Eigen::Vector3d& u, double hu, const Eigen::Vector3d& v,
                 double hv, double density, Rng& rng,
                 std::vector<SurfaceSample>& out) {
  std::uniform_real_distribution<double> du(-hu, hu), dv(-hv, hv);
  const std::size_t count = sample_count(4.0 * hu * hv, density);
  for (std::size_t i = 0; i < count; ++i) {
    const double a = du(rng);
    const double b = dv(rng);
    out.push_back({c + a * u + b * v, n, c});
  }
}

std::vector<SurfaceSample> sample_object_surface(const SynthObject& obj, Rng& rng) {
  std::vector<SurfaceSample> out;
  const Eigen::Vector3d ex = Eigen::Vector3d::UnitX();
  const Eigen::Vector3d ey = Eigen::Vector3d::UnitY();
  const Eigen::Vector3d ez = Eigen::Vector3d::UnitZ();
  if (obj.shape == Shape::kBox) {
    const double hl = obj.size.x() / 2, hw = obj.size.y() / 2, h = obj.size.z();
    sample_rect({hl, 0, h / 2}, ex, ey, hw, ez, h / 2, obj.point_density, rng, out);
    sample_rect({-hl, 0, h / 2}, -ex, ey, hw, ez, h / 2, obj.point_density, rng, out);
    sample_rect({0, hw, h / 2}, ey, ex, hl, ez, h / 2, obj.point_density, rng, out);
    sample_rect({0, -hw, h / 2}, -ey, ex, hl, ez, h / 2, obj.point_density, rng, out);
    sample_rect({0, 0, h}, ez, ex, hl, ey, hw, obj.point_density, rng, out);
  } else {
    const double r = obj.size.x() / 2, h = obj.size.z();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t side = sample_count(2 * std::numbers::pi * r * h, obj.point_density);
    for (std::size_t i = 0; i < side; ++i) {
      const double th = 2 * std::numbers::pi * unit(rng);
      const double z = h * unit(rng);
      const Eigen::Vector3d n(std::cos(th), std::sin(th), 0.0);
      const Eigen::Vector3d p(r * n.x(), r * n.y(), z);
      out.push_back({p, n, p});
    }
    const std::size_t top = sample_count(std::numbers::pi * r * r, obj.point_density);
    for (std::size_t i = 0; i < top; ++i) {
      const double th = 2 * std::numbers::pi * unit(rng);
      const double rr = r * std::sqrt(unit(rng));
      out.push_back({{rr * std::cos(th), rr * std::sin(th), h}, ez, {0, 0, h}});
    }
  }
  return out;
}

void validate(const SynthSceneSpec& spec) {
  if (spec.n_frames == 0) throw InvalidArgument("synthetic scene needs >= 1 frame");
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const auto& o = spec.objects[i];
    const bool degenerate = o.shape == Shape::kBox
                                ? (o.size.x() <= 0 || o.size.y() <= 0 || o.size.z() <= 0)
                                : (o.size.x() <= 0 || o.size.z() <= 0);
    if (degenerate || !o.size.allFinite()) {
      throw InvalidArgument("object " + std::to_string(i) + " has zero size");
    }
    if (o.point_density <= 0) {
      throw InvalidArgument("object " + std::to_string(i) + " has non-positive density");
    }
    if (o.trajectory.size() != spec.n_frames) {
      throw InvalidArgument("object " + std::to_string(i) + " trajectory has " +
                            std::to_string(o.trajectory.size()) + " poses for " +
                            std::to_string(spec.n_frames) + " frames");
    }
  }
  if (spec.ground.enabled &&
      (spec.ground.normal.norm() < 1e-12 || spec.ground.half_extent <= 0)) {
    throw InvalidArgument("degenerate ground specification");
  }
}

}  // namespace

std::vector<BoxFace> box_faces(const Eigen::Vector3d& size, const Pose& pose) {
  const Eigen::Matrix3d r = yaw_rotation(pose.yaw);
  const double hl = size.x() / 2, hw = size.y() / 2, h = size.z();
  const std::vector<BoxFace> local = {
      {{hl, 0, h / 2}, Eigen::Vector3d::UnitX(), {hw, h / 2}},
      {{-hl, 0, h / 2}, -Eigen::Vector3d::UnitX(), {hw, h / 2}},
      {{0, hw, h / 2}, Eigen::Vector3d::UnitY(), {hl, h / 2}},
      {{0, -hw, h / 2}, -Eigen::Vector3d::UnitY(), {hl, h / 2}},
      {{0, 0, h}, Eigen::Vector3d::UnitZ(), {hl, hw}},
  };
  std::vector<BoxFace> out;
  for (const auto& f : local) {
    out.push_back({r * f.center + pose.translation, r * f.normal, f.half_extent});
  }
  return out;
}

SyntheticSequence generate_synthetic(const SynthSceneSpec& spec, std::uint64_t seed) {
  validate(spec);

  std::vector<std::vector<SurfaceSample>> surfaces;
  surfaces.reserve(spec.objects.size());
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    Rng rng(derive_seed(seed, {kTagObject, i}));
    surfaces.push_back(sample_object_surface(spec.objects[i], rng));
  }

  std::vector<Eigen::Vector3d> ground;
  if (spec.ground.enabled) {
    const Eigen::Vector3d n = spec.ground.normal.normalized();
    const Eigen::Vector3d seed_axis =
        std::abs(n.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
    const Eigen::Vector3d e1 = n.cross(seed_axis).normalized();
    const Eigen::Vector3d e2 = n.cross(e1);
    const Eigen::Vector3d origin = -spec.ground.offset / spec.ground.normal.norm() * n;
    const double h = spec.ground.half_extent;
    Rng rng(derive_seed(seed, {kTagGround}));
    std::uniform_real_distribution<double> du(-h, h);
    std::normal_distribution<double> noise(0.0, spec.ground.noise_sigma);
    const std::size_t count = sample_count(4 * h * h, spec.ground.point_density);
    ground.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const double a = du(rng), b = du(rng);
      const double e = spec.ground.noise_sigma > 0 ? noise(rng) : 0.0;
      ground.push_back(origin + a * e1 + b * e2 + e * n);
    }
  }

  SyntheticSequence out;
  out.sequence.source = SequenceSource::kSynthetic;
  out.sequence.frame_rate_hz = 10.0;
  for (const auto& o : spec.objects) out.truth.object_classes.push_back(o.class_id);

  for (std::size_t k = 0; k < spec.n_frames; ++k) {
    Frame frame;
    frame.frame_index = k;
    std::vector<PointLabel> labels;
    Rng jitter_rng(derive_seed(seed, {kTagJitter, k}));
    std::normal_distribution<double> jitter(0.0, spec.frame_jitter_sigma);
    auto emit = [&](const Eigen::Vector3d& p, PointLabel label) {
      Eigen::Vector3d q = p;
      if (spec.frame_jitter_sigma > 0) {
        q += Eigen::Vector3d(jitter(jitter_rng), jitter(jitter_rng), jitter(jitter_rng));
      }
      frame.points.push_back({static_cast<float>(q.x()), static_cast<float>(q.y()),
                              static_cast<float>(q.z()), 0.5f});
      labels.push_back(label);
    };

    for (const auto& g : ground) emit(g, {kGroundInstance, kGroundClass});

    GroundTruth::FrameEntry entry;
    entry.frame_index = k;
    for (std::size_t i = 0; i < spec.objects.size(); ++i) {
      const auto& obj = spec.objects[i];
      const auto& pose = obj.trajectory[k];
      if (!pose) continue;
      const Eigen::Matrix3d r = yaw_rotation(pose->yaw);
      const auto id = static_cast<std::int32_t>(i + 1);
      std::size_t emitted = 0;
      for (const auto& s : surfaces[i]) {
        const Eigen::Vector3d pw = r * s.local + pose->translation;
        if (spec.angle_dependent_sampling) {
          const Eigen::Vector3d nw = r * s.normal;
          const Eigen::Vector3d aw = r * s.anchor + pose->translation;
          if (nw.dot(spec.sensor_origin - aw) <= 0.0) continue;
        }
        emit(pw, {id, obj.class_id});
        ++emitted;
      }
      if (emitted == 0) continue;
      entry.instances.push_back(id);
      entry.point_counts.push_back(emitted);
      Eigen::Vector3d disp = Eigen::Vector3d::Zero();
      if (k > 0 && obj.trajectory[k - 1]) {
        disp = pose->translation - obj.trajectory[k - 1]->translation;
      }
      entry.displacements.push_back(disp);
    }
    frame.labels = std::move(labels);
    out.sequence.frames.push_back(std::move(frame));
    out.truth.frames.push_back(std::move(entry));
  }
  return out;
}

void write_ground_truth_json(const std::filesystem::path& path, const GroundTruth& truth) {
  json j;
  j["object_classes"] = truth.object_classes;
  auto& frames = j["frames"] = json::array();
  for (const auto& f : truth.frames) {
    json jf;
    jf["frame_index"] = f.frame_index;
    jf["instances"] = f.instances;
    jf["point_counts"] = f.point_counts;
    auto& d = jf["displacements"] = json::array();
    for (const auto& v : f.displacements) d.push_back({v.x(), v.y(), v.z()});
    frames.push_back(std::move(jf));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

GroundTruth read_ground_truth_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    const json j = json::parse(in);
    GroundTruth t;
    t.object_classes = j.at("object_classes").get<std::vector<std::int32_t>>();
    for (const auto& jf : j.at("frames")) {
      GroundTruth::FrameEntry f;
      f.frame_index = jf.at("frame_index").get<std::size_t>();
      f.instances = jf.at("instances").get<std::vector<std::int32_t>>();
      f.point_counts = jf.at("point_counts").get<std::vector<std::size_t>>();
      for (const auto& d : jf.at("displacements")) {
        f.displacements.emplace_back(d.at(0).get<double>(), d.at(1).get<double>(),
                                     d.at(2).get<double>());
      }
      t.frames.push_back(std::move(f));
    }
    return t;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Presets

namespace {

SynthObject linear_object(Shape shape, Eigen::Vector3d size, std::int32_t cls, Eigen::Vector3d start,
                          Eigen::Vector3d velocity, double yaw, std::size_t n_frames, double density) {
  SynthObject o;
  o.shape = shape;
  o.size = size;
  o.class_id = cls;
  o.point_density = density;
  for (std::size_t k = 0; k < n_frames; ++k) {
    o.trajectory.push_back(Pose{start + static_cast<double>(k) * velocity, yaw});
  }
  return o;
}

}  // namespace

SynthSceneSpec two_object_spec(std::size_t n_frames) {
  SynthSceneSpec spec;
  spec.n_frames = n_frames;
  spec.ground.half_extent = 10.0;
  spec.objects.push_back(linear_object(Shape::kBox, {1.6, 1.0, 1.0}, 1, {-3.0, 0.0, 0.3}, {0.05, 0.0, 0.0},
                                       0.3, n_frames, 100.0));
  spec.objects.push_back(linear_object(Shape::kCylinder, {1.0, 1.0, 1.2}, 2, {3.0, 0.5, 0.3},
                                       {-0.05, 0.0, 0.0}, 0.0, n_frames, 100.0));
  return spec;
}

SynthSceneSpec traffic_spec(std::size_t n_frames, std::size_t n_objects, double occlusion_rate,
                            std::uint64_t seed) {
  if (!(occlusion_rate >= 0.0 && occlusion_rate < 1.0)) {
    throw InvalidArgument("occlusion rate must be in [0, 1)");
  }
  SynthSceneSpec spec;
  spec.n_frames = n_frames;
  Rng rng(derive_seed(seed, {0x74726166ull}));
  std::uniform_real_distribution<double> speed(0.1, 0.4);
  std::uniform_real_distribution<double> offset(-4.0, 4.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double lane0 = -2.0 * (static_cast<double>(n_objects) - 1.0);
  double max_travel = 0.0;
  for (std::size_t i = 0; i < n_objects; ++i) {
    const double v = speed(rng);
    const double sign = i % 2 == 0 ? 1.0 : -1.0;
    const double travel = v * static_cast<double>(n_frames);
    max_travel = std::max(max_travel, travel);
    const Eigen::Vector3d start{offset(rng) - sign * travel / 2.0, lane0 + 4.0 * static_cast<double>(i), 0.3};
    const bool box = i % 2 == 0;
    auto o = linear_object(box ? Shape::kBox : Shape::kCylinder,
                           box ? Eigen::Vector3d{1.8, 1.0, 1.2} : Eigen::Vector3d{1.0, 1.0, 1.4},
                           box ? 1 : 2, start, {sign * v, 0.0, 0.0}, 0.0, n_frames, 80.0);
    for (auto& pose : o.trajectory) {
      if (unit(rng) < occlusion_rate) pose.reset();
    }
    spec.objects.push_back(std::move(o));
  }
  spec.ground.half_extent = std::max(-lane0 + 4.0, max_travel / 2.0 + 8.0);
  return spec;
}

SynthSceneSpec purity_spec(std::size_t n_frames) {
  SynthSceneSpec spec;
  spec.n_frames = n_frames;
  spec.ground.half_extent = 12.0;
  spec.ground.point_density = 40.0;
  struct Item {
    Shape shape;
    Eigen::Vector3d size;
    std::int32_t cls;
    Eigen::Vector2d at;
  };
  const Item items[] = {
      {Shape::kBox, {4.0, 1.8, 1.5}, 1, {-6.0, -4.0}},   {Shape::kBox, {4.2, 1.9, 1.6}, 1, {2.0, -4.5}},
      {Shape::kCylinder, {0.8, 0.8, 1.7}, 2, {-6.0, 3.0}}, {Shape::kCylinder, {0.7, 0.7, 1.6}, 2, {-1.0, 3.5}},
      {Shape::kBox, {1.2, 0.6, 1.1}, 3, {5.0, 3.0}},     {Shape::kBox, {2.5, 2.5, 3.0}, 3, {7.0, -8.0}},
  };
  for (const auto& it : items) {
    spec.objects.push_back(linear_object(it.shape, it.size, it.cls, {it.at.x(), it.at.y(), 0.3},
                                         Eigen::Vector3d::Zero(), 0.2, n_frames, 120.0));
  }
  return spec;
}

SynthSceneSpec spec_from_json(const nlohmann::json& j) {
  auto vec3 = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    if (v.size() != 3) throw FormatError("expected a 3-vector");
    return Eigen::Vector3d(v[0], v[1], v[2]);
  };
  try {
    SynthSceneSpec spec;
    spec.n_frames = j.at("n_frames").get<std::size_t>();
    spec.angle_dependent_sampling = j.value("angle_dependent_sampling", false);
    spec.frame_jitter_sigma = j.value("frame_jitter_sigma", 0.0);
    if (j.contains("sensor_origin")) spec.sensor_origin = vec3(j["sensor_origin"]);
    if (j.contains("ground")) {
      const auto& g = j["ground"];
      spec.ground.enabled = g.value("enabled", true);
      if (g.contains("normal")) spec.ground.normal = vec3(g["normal"]);
      spec.ground.offset = g.value("offset", 0.0);
      spec.ground.half_extent = g.value("half_extent", spec.ground.half_extent);
      spec.ground.noise_sigma = g.value("noise_sigma", spec.ground.noise_sigma);
      spec.ground.point_density = g.value("point_density", spec.ground.point_density);
    }
    for (const auto& jo : j.value("objects", nlohmann::json::array())) {
      const auto shape_name = jo.value("shape", std::string("box"));
      Shape shape;
      if (shape_name == "box") {
        shape = Shape::kBox;
      } else if (shape_name == "cylinder") {
        shape = Shape::kCylinder;
      } else {
        throw FormatError("unknown shape '" + shape_name + "'");
      }
      auto o = linear_object(shape, vec3(jo.at("size")), jo.value("class_id", 1), vec3(jo.at("start")),
                             jo.contains("velocity") ? vec3(jo["velocity"]) : Eigen::Vector3d::Zero(),
                             jo.value("yaw", 0.0), spec.n_frames, jo.value("point_density", 100.0));
      for (std::size_t k : jo.value("absent", std::vector<std::size_t>{})) {
        if (k >= spec.n_frames) throw FormatError("absent frame out of range");
        o.trajectory[k].reset();
      }
      spec.objects.push_back(std::move(o));
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed scene spec: ") + e.what());
  }
}

}  // namespace stssl::synth
