#include "scdd/analysis/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "scdd/core/errors.hpp"

namespace scdd {

namespace fs = std::filesystem;

namespace {

const std::vector<cv::Scalar> kPalette{
    {180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214}, {189, 103, 148},
    {75, 86, 140},  {194, 119, 227}, {127, 127, 127}, {34, 189, 188}, {207, 190, 23}};

cv::Scalar colour(std::size_t i) { return kPalette[i % kPalette.size()]; }

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.4, cv::Scalar c = {0, 0, 0}) {
  cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, c, 1, cv::LINE_AA);
}

// Axes box inside an image with a linear data-to-pixel mapping.
struct Panel {
  cv::Rect box;
  double x0, x1, y0, y1;
  bool integer_x = false;

  cv::Point map(double x, double y) const {
    const double fx = x1 > x0 ? (x - x0) / (x1 - x0) : 0.5;
    const double fy = y1 > y0 ? (y - y0) / (y1 - y0) : 0.5;
    return {box.x + static_cast<int>(std::lround(fx * box.width)),
            box.y + box.height - static_cast<int>(std::lround(fy * box.height))};
  }

  void draw(cv::Mat& img, const std::string& title, bool log_y) const {
    cv::rectangle(img, box, {0, 0, 0}, 1);
    text(img, title, {box.x, box.y - 8}, 0.45);
    for (int t = 0; t <= 4; ++t) {
      const double yv = y0 + (y1 - y0) * t / 4.0;
      const auto p = map(x0, yv);
      cv::line(img, p, {p.x - 4, p.y}, {0, 0, 0}, 1);
      text(img, number(log_y ? std::pow(10.0, yv) : yv), {2, p.y + 4}, 0.35);
      double xv = x0 + (x1 - x0) * t / 4.0;
      if (integer_x) xv = std::floor(xv);
      const auto q = map(xv, y0);
      cv::line(img, q, {q.x, q.y + 4}, {0, 0, 0}, 1);
      text(img, number(xv), {q.x - 10, q.y + 16}, 0.35);
    }
  }
};

void write_png(const fs::path& file, const cv::Mat& img) {
  std::error_code ec;
  fs::create_directories(file.parent_path(), ec);
  bool ok = false;
  try {
    ok = cv::imwrite(file.string(), img);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + file.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + file.string());
}

std::pair<double, double> padded(double lo, double hi) {
  if (!(hi > lo)) return {lo - 0.5, hi + 0.5};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace

fs::path emit_trajectory_plot(const std::vector<TrajectoryPoint>& trajectory, const fs::path& out_dir) {
  if (trajectory.empty()) throw PreconditionError("trajectory plot needs at least one point");
  cv::Mat img(420, 640, CV_8UC3, cv::Scalar(255, 255, 255));
  auto lg = [](Real v) { return std::log10(std::max<Real>(v, 1e-8)); };
  double lo = 1e300, hi = -1e300;
  for (const auto& p : trajectory) {
    if (!std::isfinite(p.ce) || !std::isfinite(p.bn)) throw PreconditionError("trajectory contains non-finite values");
    lo = std::min({lo, lg(p.ce), lg(p.bn)});
    hi = std::max({hi, lg(p.ce), lg(p.bn)});
  }
  const auto [y0, y1] = padded(lo, hi);
  Panel panel{{60, 30, 540, 340}, static_cast<double>(trajectory.front().iter),
              static_cast<double>(std::max(trajectory.back().iter, trajectory.front().iter + 1)), y0, y1};
  panel.draw(img, "recovery loss (log scale)", true);
  const std::vector<std::pair<std::string, Real TrajectoryPoint::*>> curves{{"ce", &TrajectoryPoint::ce},
                                                                             {"bn", &TrajectoryPoint::bn}};
  for (std::size_t c = 0; c < curves.size(); ++c) {
    std::vector<cv::Point> pts;
    for (const auto& p : trajectory) pts.push_back(panel.map(p.iter, lg(p.*curves[c].second)));
    if (pts.size() == 1) cv::circle(img, pts[0], 3, colour(c), cv::FILLED);
    cv::polylines(img, pts, false, colour(c), 2, cv::LINE_AA);
    cv::line(img, {480, 50 + 18 * static_cast<int>(c)}, {505, 50 + 18 * static_cast<int>(c)}, colour(c), 2);
    text(img, curves[c].first, {510, 54 + 18 * static_cast<int>(c)});
  }
  text(img, "iteration", {290, 405});
  const fs::path file = out_dir / "trajectory.png";
  write_png(file, img);
  return file;
}

std::vector<fs::path> emit_bn_plots(const std::vector<std::pair<std::string, BNStatSnapshot>>& snapshots,
                                    const fs::path& out_dir) {
  if (snapshots.empty()) throw PreconditionError("bn plot needs at least one snapshot");
  const auto& first = snapshots.front().second;
  for (const auto& [name, s] : snapshots) {
    s.validate();
    if (s.layers.size() != first.layers.size()) throw ShapeError("bn plot snapshots have different layer counts");
    for (std::size_t k = 0; k < s.layers.size(); ++k)
      if (s.layers[k].mean.size() != first.layers[k].mean.size())
        throw ShapeError("bn plot snapshots differ in channels at layer " + std::to_string(k));
  }
  std::vector<fs::path> files;
  for (std::size_t k = 0; k < first.layers.size(); ++k) {
    const int C = static_cast<int>(first.layers[k].mean.size());
    cv::Mat img(520, 720, CV_8UC3, cv::Scalar(255, 255, 255));
    const std::vector<std::pair<std::string, std::vector<Real> BNLayerStats::*>> rows{
        {"running mean", &BNLayerStats::mean}, {"running variance", &BNLayerStats::variance}};
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double lo = 0, hi = 0;
      for (const auto& [name, s] : snapshots)
        for (Real v : s.layers[k].*rows[r].second) {
          lo = std::min(lo, static_cast<double>(v));
          hi = std::max(hi, static_cast<double>(v));
        }
      const auto [y0, y1] = padded(lo, hi);
      Panel panel{{60, 40 + 240 * static_cast<int>(r), 620, 180}, 0.0, static_cast<double>(C), y0, y1, true};
      panel.draw(img, "layer " + std::to_string(k) + " " + rows[r].first + " per channel", false);
      cv::line(img, panel.map(0, 0), panel.map(C, 0), {160, 160, 160}, 1);
      const double slot = 1.0 / static_cast<double>(snapshots.size());
      for (std::size_t s = 0; s < snapshots.size(); ++s) {
        const auto& values = snapshots[s].second.layers[k].*rows[r].second;
        for (int c = 0; c < C; ++c) {
          const double left = c + 0.1 + 0.8 * slot * static_cast<double>(s);
          cv::rectangle(img, panel.map(left, 0), panel.map(left + 0.8 * slot, values[static_cast<std::size_t>(c)]),
                        colour(s), cv::FILLED);
        }
      }
    }
    for (std::size_t s = 0; s < snapshots.size(); ++s) {
      const int y = 505 - 14 * static_cast<int>(snapshots.size() - 1 - s);
      cv::rectangle(img, cv::Rect(520, y - 9, 10, 10), colour(s), cv::FILLED);
      text(img, snapshots[s].first, {536, y});
    }
    const fs::path file = out_dir / ("bn_layer_" + std::to_string(k) + ".png");
    write_png(file, img);
    files.push_back(file);
  }
  return files;
}

fs::path emit_cluster_plot(const ClusterReport& report, const fs::path& out_dir) {
  const int N = report.points.rank() == 2 ? report.points.dim(0) : 0;
  if (N == 0 || report.points.dim(1) != 3) throw ShapeError("cluster plot needs (N, 3) points");
  if (report.assignments.size() != static_cast<std::size_t>(N) || report.classes.size() != static_cast<std::size_t>(N))
    throw ShapeError("cluster plot needs one assignment and class per point");
  // orthographic view: azimuth 35 degrees, elevation 25 degrees
  const double az = 35.0 * M_PI / 180.0, el = 25.0 * M_PI / 180.0;
  auto project = [&](const Real* p) {
    const double x = std::cos(az) * p[0] - std::sin(az) * p[1];
    const double depth = std::sin(az) * p[0] + std::cos(az) * p[1];
    const double y = std::cos(el) * p[2] - std::sin(el) * depth;
    return std::pair<double, double>{x, y};
  };
  std::vector<std::pair<double, double>> xy;
  double xl = 1e300, xh = -1e300, yl = 1e300, yh = -1e300;
  for (int i = 0; i < N; ++i) {
    xy.push_back(project(report.points.data() + static_cast<std::size_t>(i) * 3));
    xl = std::min(xl, xy.back().first);
    xh = std::max(xh, xy.back().first);
    yl = std::min(yl, xy.back().second);
    yh = std::max(yh, xy.back().second);
  }
  const auto [x0, x1] = padded(xl, xh);
  const auto [y0, y1] = padded(yl, yh);
  cv::Mat img(560, 560, CV_8UC3, cv::Scalar(255, 255, 255));
  Panel panel{{40, 40, 480, 480}, x0, x1, y0, y1};
  cv::rectangle(img, panel.box, {0, 0, 0}, 1);
  text(img, "PCA-3D kmeans, purity " + number(report.purity), {40, 28}, 0.5);
  std::vector<int> class_ids = report.classes;
  std::sort(class_ids.begin(), class_ids.end());
  class_ids.erase(std::unique(class_ids.begin(), class_ids.end()), class_ids.end());
  const std::vector<int> markers{cv::MARKER_CROSS, cv::MARKER_SQUARE, cv::MARKER_TRIANGLE_UP, cv::MARKER_DIAMOND,
                                 cv::MARKER_STAR, cv::MARKER_TILTED_CROSS, cv::MARKER_TRIANGLE_DOWN};
  for (int i = 0; i < N; ++i) {
    const auto m = static_cast<std::size_t>(
        std::lower_bound(class_ids.begin(), class_ids.end(), report.classes[static_cast<std::size_t>(i)]) - class_ids.begin());
    cv::drawMarker(img, panel.map(xy[static_cast<std::size_t>(i)].first, xy[static_cast<std::size_t>(i)].second),
                   colour(static_cast<std::size_t>(report.assignments[static_cast<std::size_t>(i)])),
                   markers[m % markers.size()], 9, 1, cv::LINE_AA);
  }
  for (std::size_t c = 0; c < class_ids.size(); ++c) {
    const cv::Point at{470, 60 + 16 * static_cast<int>(c)};
    cv::drawMarker(img, at, {0, 0, 0}, markers[c % markers.size()], 9, 1, cv::LINE_AA);
    text(img, "class " + std::to_string(class_ids[c]), {at.x + 8, at.y + 4}, 0.35);
  }
  const fs::path file = out_dir / "cluster_scatter.png";
  write_png(file, img);
  return file;
}

}  // namespace scdd
