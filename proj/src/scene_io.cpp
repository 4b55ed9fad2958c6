#include "stssl/scene_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stssl/error.hpp"
#include "stssl/log.hpp"

namespace stssl {

std::vector<Eigen::Vector3d> Frame::xyz() const {
  std::vector<Eigen::Vector3d> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.xyz());
  return out;
}

namespace io {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::size_t kBytesPerPoint = 16;

float load_f32_le(const unsigned char* b) {
  const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                          (static_cast<std::uint32_t>(b[1]) << 8) |
                          (static_cast<std::uint32_t>(b[2]) << 16) |
                          (static_cast<std::uint32_t>(b[3]) << 24);
  return std::bit_cast<float>(u);
}

void store_f32_le(float v, unsigned char* b) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  b[0] = static_cast<unsigned char>(u & 0xffu);
  b[1] = static_cast<unsigned char>((u >> 8) & 0xffu);
  b[2] = static_cast<unsigned char>((u >> 16) & 0xffu);
  b[3] = static_cast<unsigned char>((u >> 24) & 0xffu);
}

std::vector<unsigned char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

Frame decode_kitti_bin(std::span<const unsigned char> bytes) {
  if (bytes.empty()) throw EmptyFrameError("empty velodyne scan");
  if (bytes.size() % kBytesPerPoint != 0) {
    throw FormatError("velodyne scan length " + std::to_string(bytes.size()) +
                      " is not a multiple of 16 bytes");
  }
  Frame frame;
  const std::size_t n = bytes.size() / kBytesPerPoint;
  frame.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* b = bytes.data() + i * kBytesPerPoint;
    Point3 p{load_f32_le(b), load_f32_le(b + 4), load_f32_le(b + 8),
             load_f32_le(b + 12)};
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      ++frame.invalid_dropped;
      continue;
    }
    frame.points.push_back(p);
  }
  return frame;
}

Frame read_kitti_bin(const fs::path& path) {
  const auto bytes = slurp(path);
  try {
    return decode_kitti_bin(bytes);
  } catch (const EmptyFrameError&) {
    throw EmptyFrameError("empty velodyne scan: " + path.string());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<unsigned char> encode_kitti_bin(const Frame& frame) {
  std::vector<unsigned char> out(frame.points.size() * kBytesPerPoint);
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    unsigned char* b = out.data() + i * kBytesPerPoint;
    const auto& p = frame.points[i];
    store_f32_le(p.x, b);
    store_f32_le(p.y, b + 4);
    store_f32_le(p.z, b + 8);
    store_f32_le(p.intensity, b + 12);
  }
  return out;
}

void write_frame_bin(const fs::path& path, const Frame& frame) {
  const auto bytes = encode_kitti_bin(frame);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Sequence load_sequence(const fs::path& dir, const std::string& pattern) {
  if (!fs::is_directory(dir)) {
    throw IoError("sequence directory not found: " + dir.string());
  }
  const std::regex re(pattern);
  std::vector<std::pair<unsigned long long, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    std::smatch m;
    if (!std::regex_match(name, m, re) || m.size() < 2) continue;
    files.emplace_back(std::stoull(m[1].str()), entry.path());
  }
  if (files.empty()) {
    throw IoError("no files matching '" + pattern + "' in " + dir.string());
  }
  std::sort(files.begin(), files.end());

  Sequence seq;
  seq.source = SequenceSource::kReal;
  seq.frames.reserve(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (i > 0 && files[i].first == files[i - 1].first) {
      throw FormatError("duplicate frame number " +
                        std::to_string(files[i].first) + " in " + dir.string());
    }
    if (i > 0 && files[i].first != files[i - 1].first + 1) {
      std::ostringstream msg;
      msg << "frame numbering gap between " << files[i - 1].first << " and "
          << files[i].first << "; re-indexed contiguously";
      seq.warnings.push_back(msg.str());
      log::warning(msg.str());
    }
    Frame f = read_kitti_bin(files[i].second);
    f.frame_index = i;
    if (f.invalid_dropped > 0) {
      log::debug(files[i].second.string() + ": dropped " +
                 std::to_string(f.invalid_dropped) + " non-finite points");
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

fs::path kitti_velodyne_dir(const fs::path& root, int sequence_id) {
  std::ostringstream nn;
  nn << std::setw(2) << std::setfill('0') << sequence_id;
  return root / "sequences" / nn.str() / "velodyne";
}

std::string frame_file_stem(std::size_t frame_index) {
  std::ostringstream s;
  s << std::setw(6) << std::setfill('0') << frame_index;
  return s.str();
}

void write_labels_json(const fs::path& path, const Frame& frame) {
  if (!frame.labels) throw InvalidArgument("frame has no labels to write");
  json j;
  j["frame_index"] = frame.frame_index;
  auto& inst = j["instance_ids"] = json::array();
  auto& cls = j["class_ids"] = json::array();
  for (const auto& l : *frame.labels) {
    inst.push_back(l.instance_id);
    cls.push_back(l.class_id);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump() << '\n';
}

std::vector<PointLabel> read_labels_json(const fs::path& path) {
  const json j = read_json(path);
  try {
    const auto inst = j.at("instance_ids").get<std::vector<std::int32_t>>();
    const auto cls = j.at("class_ids").get<std::vector<std::int32_t>>();
    if (inst.size() != cls.size()) {
      throw FormatError(path.string() + ": instance/class length mismatch");
    }
    std::vector<PointLabel> labels(inst.size());
    for (std::size_t i = 0; i < inst.size(); ++i) labels[i] = {inst[i], cls[i]};
    return labels;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Sequence load_labeled_sequence(const fs::path& seq_dir) {
  Sequence seq = load_sequence(seq_dir / "velodyne");
  const fs::path label_dir = seq_dir / "labels";
  if (!fs::is_directory(label_dir)) return seq;

  // Pair labels by file stem, which load_sequence discarded after sorting.
  std::vector<fs::path> bins;
  const std::regex re(R"(^(\d+)\.bin$)");
  for (const auto& e : fs::directory_iterator(seq_dir / "velodyne")) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, re)) bins.push_back(e.path());
  }
  std::sort(bins.begin(), bins.end(), [](const fs::path& a, const fs::path& b) {
    return std::stoull(a.stem().string()) < std::stoull(b.stem().string());
  });
  for (std::size_t i = 0; i < bins.size() && i < seq.frames.size(); ++i) {
    const fs::path lp = label_dir / (bins[i].stem().string() + ".json");
    if (!fs::exists(lp)) continue;
    auto labels = read_labels_json(lp);
    auto& frame = seq.frames[i];
    if (frame.invalid_dropped > 0) {
      throw IntegrityError(lp.string() +
                           ": labels cannot be aligned to a scan with "
                           "dropped non-finite points");
    }
    if (labels.size() != frame.points.size()) {
      throw IntegrityError(lp.string() + ": " + std::to_string(labels.size()) +
                           " labels for " + std::to_string(frame.size()) +
                           " points");
    }
    frame.labels = std::move(labels);
    seq.source = SequenceSource::kSynthetic;
  }
  return seq;
}

void write_sequence(const fs::path& seq_dir, const Sequence& seq) {
  const fs::path vdir = seq_dir / "velodyne";
  fs::create_directories(vdir);
  bool any_labels = false;
  for (const auto& f : seq.frames) any_labels = any_labels || f.has_labels();
  if (any_labels) fs::create_directories(seq_dir / "labels");
  for (const auto& f : seq.frames) {
    const std::string stem = frame_file_stem(f.frame_index);
    write_frame_bin(vdir / (stem + ".bin"), f);
    if (f.has_labels()) write_labels_json(seq_dir / "labels" / (stem + ".json"), f);
  }
}

}  // namespace io
}  // namespace stssl
