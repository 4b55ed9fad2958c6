#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "stssl/config.hpp"
#include "stssl/losses.hpp"
#include "stssl/scene.hpp"
#include "stssl/track.hpp"

namespace stssl::report {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Standalone SVG line chart (one polyline per series, with a legend).
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series);

/// Standalone SVG bar chart.
std::string svg_bar_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<std::string>& labels, const std::vector<double>& values);

/// Comma-separated rows with a header line; numbers use shortest round-trip form.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

/// Reads a JSON-lines training log.
std::vector<losses::LossReport> read_train_log(const std::filesystem::path& path);

struct PuritySweepRow {
  double eps = 0.0;
  std::size_t clusters = 0;
  std::size_t pure = 0;
  double proportion = 0.0;
};

/// 0.15, 0.20, ..., 0.45.
std::vector<double> default_eps_sweep();

/// Ground is fitted once per frame; each eps re-clusters the non-ground
/// points and scores purity on the labeled frames.
std::vector<PuritySweepRow> purity_sweep(const Sequence& seq, const PipelineConfig& cfg,
                                         const std::vector<double>& eps_values, std::uint64_t ransac_seed,
                                         double threshold = 0.9);

/// Each writer emits <name>.csv and <name>.svg under out_dir and returns
/// the paths written.
std::vector<std::filesystem::path> write_loss_curves(const std::vector<losses::LossReport>& log,
                                                     const std::filesystem::path& out_dir);
std::vector<std::filesystem::path> write_tracking_histogram(std::span<const track::Trajectory> trajectories,
                                                            const std::filesystem::path& out_dir);
std::vector<std::filesystem::path> write_purity_sweep(const std::vector<PuritySweepRow>& rows,
                                                      const std::filesystem::path& out_dir);

}  // namespace stssl::report
