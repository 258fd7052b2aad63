#pragma once

#include <algorithm>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "moss/bench/metrics.hpp"
#include "moss/points.hpp"

namespace moss::bench {

/// A table rendered either as aligned text or CSV from the same cell strings,
/// so both outputs always carry identical numbers.
struct Table {
  std::string title;
  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> rows;

  std::string text() const {
    std::vector<std::size_t> width(headers.size());
    for (std::size_t c = 0; c < headers.size(); ++c) width[c] = headers[c].size();
    for (const auto& r : rows)
      for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
    std::ostringstream os;
    if (!title.empty()) os << title << "\n";
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t c = 0; c < width.size(); ++c) {
        const std::string cell = c < cells.size() ? cells[c] : "";
        os << (c ? "  " : "") << cell << std::string(width[c] - cell.size(), ' ');
      }
      os << "\n";
    };
    line(headers);
    std::size_t total = 0;
    for (auto w : width) total += w;
    os << std::string(total + 2 * (width.size() - 1), '-') << "\n";
    for (const auto& r : rows) line(r);
    return os.str();
  }

  std::string csv() const {
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t c = 0; c < cells.size(); ++c) os << (c ? "," : "") << cells[c];
      os << "\n";
    };
    line(headers);
    for (const auto& r : rows) line(r);
    return os.str();
  }
};

inline std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::vector<std::string> error_headers() {
  return {"MERS (mm)", "MERS (%)", "MERT (mm)", "MERT (%)", "fps"};
}

inline std::vector<std::string> error_cells(const ShapeErrorReport& r) {
  return {fixed(r.mers_mm), fixed(r.mers_pct), fixed(r.mert_mm), fixed(r.mert_pct), fixed(r.fps, 1)};
}

/// One row per method, in the layout of a quantitative results table.
inline Table results_table(const std::vector<std::pair<std::string, ShapeErrorReport>>& methods) {
  Table t;
  t.headers = {"Method"};
  for (auto& h : error_headers()) t.headers.push_back(h);
  for (const auto& [name, r] : methods) {
    std::vector<std::string> row{name};
    for (auto& c : error_cells(r)) row.push_back(c);
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Table fps_table(const FpsReport& r) {
  Table t;
  t.title = "latency per frame (" + std::to_string(r.frames) + " frames, " + std::to_string(r.warmup) + " warmup)";
  t.headers = {"stage", "mean (ms)", "std (ms)", "median (ms)"};
  const std::pair<const char*, const StageStats*> stages[] = {
      {"preprocess", &r.preprocess}, {"forward", &r.forward}, {"fit", &r.fit}, {"total", &r.total}};
  for (const auto& [name, s] : stages) t.rows.push_back({name, fixed(s->mean_ms, 4), fixed(s->std_ms, 4), fixed(s->median_ms, 4)});
  t.rows.push_back({"fps", "", fixed(r.fps_std, 2), fixed(r.fps, 2)});
  return t;
}

/// Predicted (solid) and true (dashed) centerlines in three orthographic
/// views: x-z, y-z and x-y, in millimeters.
inline std::string curves_svg(const PointMatrix& predicted, const PointMatrix& truth, const std::string& caption = "") {
  constexpr double panel = 260.0, margin = 20.0;
  const int axes[3][2] = {{0, 2}, {1, 2}, {0, 1}};
  const char* names[3] = {"x-z", "y-z", "x-y"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 3 * panel + 4 * margin << "\" height=\""
     << panel + 3 * margin << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!caption.empty()) os << "<text x=\"" << margin << "\" y=\"14\" font-size=\"12\">" << caption << "</text>\n";
  for (int v = 0; v < 3; ++v) {
    const int a = axes[v][0], b = axes[v][1];
    double lo_a = std::numeric_limits<double>::infinity(), hi_a = -lo_a, lo_b = lo_a, hi_b = -lo_a;
    for (const PointMatrix* m : {&predicted, &truth})
      for (Eigen::Index i = 0; i < m->rows(); ++i) {
        lo_a = std::min(lo_a, (*m)(i, a));
        hi_a = std::max(hi_a, (*m)(i, a));
        lo_b = std::min(lo_b, (*m)(i, b));
        hi_b = std::max(hi_b, (*m)(i, b));
      }
    const double span = std::max({hi_a - lo_a, hi_b - lo_b, 1e-6});
    const double ox = margin + v * (panel + margin), oy = 2 * margin;
    const double ca = 0.5 * (lo_a + hi_a), cb = 0.5 * (lo_b + hi_b);
    auto px = [&](double x) { return ox + panel / 2 + (x - ca) / span * (panel - 20); };
    auto py = [&](double y) { return oy + panel / 2 - (y - cb) / span * (panel - 20); };
    os << "<rect x=\"" << ox << "\" y=\"" << oy << "\" width=\"" << panel << "\" height=\"" << panel
       << "\" fill=\"none\" stroke=\"#bbb\"/>\n";
    os << "<text x=\"" << ox + 4 << "\" y=\"" << oy + 14 << "\" font-size=\"11\">" << names[v] << "</text>\n";
    auto polyline = [&](const PointMatrix& m, const char* style) {
      os << "<polyline fill=\"none\" " << style << " points=\"";
      for (Eigen::Index i = 0; i < m.rows(); ++i) os << (i ? " " : "") << px(m(i, a)) << "," << py(m(i, b));
      os << "\"/>\n";
    };
    polyline(truth, "stroke=\"#222\" stroke-dasharray=\"5,3\" stroke-width=\"1.5\"");
    polyline(predicted, "stroke=\"#d33\" stroke-width=\"2\"");
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace moss::bench
