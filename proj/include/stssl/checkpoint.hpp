#pragma once

#include <filesystem>

#include "stssl/config.hpp"
#include "stssl/trainer.hpp"

namespace stssl::ckpt {

/// Writes `<stem>.bin` (little-endian float64 tensors, back to back) and
/// `<stem>.json` (tensor shapes and offsets, stage, step, seeds, config,
/// trajectories, blob checksum).
void save(const std::filesystem::path& stem, const train::TrainState& state, const Config& cfg);

struct Loaded {
  train::TrainState state;
  Config config;
};

/// Throws IoError for missing files, FormatError for malformed manifests and
/// IntegrityError when the blob disagrees with the manifest.
Loaded load(const std::filesystem::path& stem);

}  // namespace stssl::ckpt
