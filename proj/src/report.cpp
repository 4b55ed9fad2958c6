#include "stssl/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stssl/error.hpp"
#include "stssl/ground.hpp"
#include "stssl/pipeline.hpp"

namespace stssl::report {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 150.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame2d {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

void widen(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
}

void axes(std::ostringstream& s, const Frame2d& f, const std::string& title, const std::string& xl,
          const std::string& yl, bool x_ticks) {
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
    << "</text>\n";
  const double xa = kLeft, xb = kWidth - kRight, ya = kTop, yb = kHeight - kBottom;
  s << "<line x1=\"" << xa << "\" y1=\"" << yb << "\" x2=\"" << xb << "\" y2=\"" << yb << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << xa << "\" y1=\"" << ya << "\" x2=\"" << xa << "\" y2=\"" << yb << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s << "<line x1=\"" << xa - 4 << "\" y1=\"" << f.py(y) << "\" x2=\"" << xa << "\" y2=\"" << f.py(y)
      << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << xa - 6 << "\" y=\"" << f.py(y) + 4 << "\" text-anchor=\"end\">" << num(y) << "</text>\n";
    if (x_ticks) {
      const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
      s << "<text x=\"" << f.px(x) << "\" y=\"" << yb + 16 << "\" text-anchor=\"middle\">" << num(x)
        << "</text>\n";
    }
  }
  s << "<text x=\"" << (xa + xb) / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">" << escape(xl)
    << "</text>\n";
  s << "<text x=\"16\" y=\"" << (ya + yb) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (ya + yb) / 2 << ")\">" << escape(yl) << "</text>\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series) {
  Frame2d f{INFINITY, -INFINITY, INFINITY, -INFINITY};
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw InvalidArgument("series " + s.name + " has mismatched x/y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      f.x0 = std::min(f.x0, s.x[i]);
      f.x1 = std::max(f.x1, s.x[i]);
      f.y0 = std::min(f.y0, s.y[i]);
      f.y1 = std::max(f.y1, s.y[i]);
    }
  }
  if (!std::isfinite(f.x0)) f = {0, 1, 0, 1};
  widen(f.x0, f.x1);
  widen(f.y0, f.y1);
  std::ostringstream s;
  axes(s, f, title, x_label, y_label, true);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % std::size(kColors)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[k].x.size(); ++i) {
      if (!std::isfinite(series[k].x[i]) || !std::isfinite(series[k].y[i])) continue;
      s << num(f.px(series[k].x[i])) << ',' << num(f.py(series[k].y[i])) << ' ';
    }
    s << "\"/>\n";
    const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
    s << "<line x1=\"" << kWidth - kRight + 10 << "\" y1=\"" << ly << "\" x2=\"" << kWidth - kRight + 30
      << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << kWidth - kRight + 35 << "\" y=\"" << ly + 4 << "\">" << escape(series[k].name)
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string svg_bar_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<std::string>& labels, const std::vector<double>& values) {
  if (labels.size() != values.size()) throw InvalidArgument("bar labels and values differ in length");
  double top = 0.0;
  for (double v : values) top = std::max(top, v);
  Frame2d f{0.0, static_cast<double>(std::max<std::size_t>(values.size(), 1)), 0.0, top > 0.0 ? top : 1.0};
  std::ostringstream s;
  axes(s, f, title, x_label, y_label, false);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x0 = f.px(static_cast<double>(i) + 0.1);
    const double x1 = f.px(static_cast<double>(i) + 0.9);
    const double y = f.py(values[i]);
    s << "<rect x=\"" << num(x0) << "\" y=\"" << num(y) << "\" width=\"" << num(x1 - x0) << "\" height=\""
      << num(f.py(0.0) - y) << "\" fill=\"" << kColors[0] << "\"/>\n";
    s << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << kHeight - kBottom + 16
      << "\" text-anchor=\"middle\">" << escape(labels[i]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw InvalidArgument("csv row width differs from header");
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << nlohmann::json(row[i]).dump();
    out << '\n';
  }
  if (!out) throw IoError("cannot write " + path.string());
}

std::vector<losses::LossReport> read_train_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open training log " + path.string());
  std::vector<losses::LossReport> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(losses::report_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<double> default_eps_sweep() { return {0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45}; }

std::vector<PuritySweepRow> purity_sweep(const Sequence& seq, const PipelineConfig& cfg,
                                         const std::vector<double>& eps_values, std::uint64_t ransac_seed,
                                         double threshold) {
  std::vector<ground::GroundSplit> splits;
  splits.reserve(seq.frames.size());
  bool any_labels = false;
  for (const auto& f : seq.frames) {
    any_labels = any_labels || f.has_labels();
    const auto pts = f.xyz();
    std::optional<ground::PlaneModel> plane;
    if (pts.size() >= 3) {
      plane = ground::fit_plane_ransac(pts, cfg.ransac, pipeline::frame_ransac_seed(ransac_seed, f.frame_index));
    }
    splits.push_back(ground::split_ground(pts, plane, cfg.ransac.dist_threshold, cfg.ransac.max_tilt_deg));
  }
  if (!any_labels) throw UnsupportedError("purity sweep requires labeled data");

  std::vector<PuritySweepRow> rows;
  for (double eps : eps_values) {
    auto ccfg = cfg.cluster;
    ccfg.dbscan.eps = eps;
    ccfg.validate();
    std::vector<cluster::PurityReport> reports;
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
      if (!seq.frames[i].has_labels()) continue;
      const auto set = cluster::cluster_frame(seq.frames[i], splits[i], ccfg);
      reports.push_back(cluster::purity(set, seq.frames[i], threshold));
    }
    const auto merged = cluster::merge_purity(reports);
    rows.push_back({eps, merged.clusters.size(), merged.pure_count, merged.proportion});
  }
  return rows;
}

std::vector<fs::path> write_loss_curves(const std::vector<losses::LossReport>& log, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<std::vector<double>> rows;
  Series p2c{"L_p2c / pair", {}, {}};
  Series inter{"L_inter / pair", {}, {}};
  Series lambda{"lambda / 4", {}, {}};
  for (const auto& r : log) {
    const double step = static_cast<double>(r.step);
    rows.push_back({step, r.l_p2c, r.l_inter, r.lambda, r.l_total, r.l_p2c_mean, r.l_inter_mean, r.lr,
                    r.skipped ? 1.0 : 0.0});
    if (r.skipped) continue;
    p2c.x.push_back(step);
    p2c.y.push_back(r.l_p2c_mean);
    if (r.inter_pairs) {
      inter.x.push_back(step);
      inter.y.push_back(r.l_inter_mean);
    }
    lambda.x.push_back(step);
    lambda.y.push_back(r.lambda / 4.0);
  }
  const auto csv = out_dir / "loss_curves.csv";
  const auto svg = out_dir / "loss_curves.svg";
  write_csv(csv, {"step", "l_p2c", "l_inter", "lambda", "l_total", "l_p2c_mean", "l_inter_mean", "lr", "skipped"},
            rows);
  write_text(svg, svg_line_chart("Training losses", "step", "loss per pair", {p2c, inter, lambda}));
  return {csv, svg};
}

std::vector<fs::path> write_tracking_histogram(std::span<const track::Trajectory> trajectories,
                                               const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::map<std::size_t, std::size_t> hist;
  for (const auto& t : trajectories) ++hist[t.length()];
  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;
  std::vector<double> counts;
  for (const auto& [len, count] : hist) {
    rows.push_back({static_cast<double>(len), static_cast<double>(count)});
    labels.push_back(std::to_string(len));
    counts.push_back(static_cast<double>(count));
  }
  const auto csv = out_dir / "tracking_durations.csv";
  const auto svg = out_dir / "tracking_durations.svg";
  write_csv(csv, {"length", "trajectories"}, rows);
  write_text(svg, svg_bar_chart("Trajectory durations", "frames tracked", "trajectories", labels, counts));
  return {csv, svg};
}

std::vector<fs::path> write_purity_sweep(const std::vector<PuritySweepRow>& rows, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<std::vector<double>> table;
  Series s{"pure proportion", {}, {}};
  for (const auto& r : rows) {
    table.push_back({r.eps, static_cast<double>(r.clusters), static_cast<double>(r.pure), r.proportion});
    s.x.push_back(r.eps);
    s.y.push_back(r.proportion);
  }
  const auto csv = out_dir / "purity_sweep.csv";
  const auto svg = out_dir / "purity_sweep.svg";
  write_csv(csv, {"eps", "clusters", "pure", "proportion"}, table);
  write_text(svg, svg_line_chart("Over-segmentation purity", "DBSCAN eps (m)", "pure cluster proportion", {s}));
  return {csv, svg};
}

}  // namespace stssl::report
