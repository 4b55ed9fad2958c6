#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stssl/scene.hpp"

namespace stssl::io {

// KITTI velodyne .bin: consecutive little-endian float32 quadruples
// (x, y, z, intensity), 16 bytes per point, no header.

/// Decodes a KITTI scan. Throws FormatError when the byte count is not a
/// multiple of 16 and EmptyFrameError on an empty file. Points with a
/// non-finite coordinate are dropped and counted in Frame::invalid_dropped.
Frame read_kitti_bin(const std::filesystem::path& path);
Frame decode_kitti_bin(std::span<const unsigned char> bytes);

void write_frame_bin(const std::filesystem::path& path, const Frame& frame);
std::vector<unsigned char> encode_kitti_bin(const Frame& frame);

/// Loads every file in `dir` whose name matches `pattern` (ECMAScript regex
/// with one capture group holding the frame number). Frames are ordered by
/// that number and re-indexed 0..T-1; numbering gaps become warnings.
Sequence load_sequence(const std::filesystem::path& dir,
                       const std::string& pattern = R"(^(\d+)\.bin$)");

/// `<root>/sequences/<NN>/velodyne`
std::filesystem::path kitti_velodyne_dir(const std::filesystem::path& root,
                                         int sequence_id);

// Label sidecars live next to the velodyne directory:
//   <seq>/velodyne/000000.bin
//   <seq>/labels/000000.json
//   <seq>/correspondence.json
void write_labels_json(const std::filesystem::path& path, const Frame& frame);
std::vector<PointLabel> read_labels_json(const std::filesystem::path& path);

/// Loads `<seq_dir>/velodyne` and attaches `<seq_dir>/labels/*.json` when
/// present. Label files must match the point count of their frame.
Sequence load_labeled_sequence(const std::filesystem::path& seq_dir);

/// Writes frames (and labels when present) in the `<seq_dir>` layout above.
void write_sequence(const std::filesystem::path& seq_dir, const Sequence& seq);

std::string frame_file_stem(std::size_t frame_index);

}  // namespace stssl::io
