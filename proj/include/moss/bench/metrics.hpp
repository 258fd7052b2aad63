#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "moss/curvefit/curvefit.hpp"
#include "moss/error.hpp"
#include "moss/points.hpp"

namespace moss::bench {

/// Sensed length of the robot; percentages are relative to it.
inline constexpr double kSensedLengthMm = 250.0;

namespace detail {
inline void check_pair(const PointMatrix& predicted, const PointMatrix& truth, int degree, const char* what) {
  if (predicted.rows() != truth.rows())
    throw InvalidInput(std::string(what) + ": point counts differ (" + std::to_string(predicted.rows()) + " vs " +
                       std::to_string(truth.rows()) + ")");
  const auto need = static_cast<Eigen::Index>(curvefit::min_query_points(degree));
  if (predicted.rows() < need)
    throw InvalidInput(std::string(what) + ": M = " + std::to_string(predicted.rows()) + " is below 2(n+1) = " +
                       std::to_string(need));
}
}  // namespace detail

/// Mean Euclidean distance over corresponding points, in millimeters.
inline double mers(const PointMatrix& predicted, const PointMatrix& truth, int degree = 4) {
  detail::check_pair(predicted, truth, degree, "mers");
  double sum = 0.0;
  for (Eigen::Index j = 0; j < truth.rows(); ++j) sum += (predicted.row(j) - truth.row(j)).norm();
  return 1000.0 * sum / static_cast<double>(truth.rows());
}

/// Distance between the last (tip) points, in millimeters.
inline double mert(const PointMatrix& predicted, const PointMatrix& truth, int degree = 4) {
  detail::check_pair(predicted, truth, degree, "mert");
  const auto tip = truth.rows() - 1;
  return 1000.0 * (predicted.row(tip) - truth.row(tip)).norm();
}

inline double percent_of_length(double mm) { return mm / kSensedLengthMm * 100.0; }

struct ShapeErrorReport {
  double mers_mm = 0.0, mert_mm = 0.0;
  double mers_pct = 0.0, mert_pct = 0.0;
  double max_point_error_mm = 0.0;
  double fps = 0.0;  // 0 when not measured
  std::size_t samples = 0;
  std::string config_digest;
};

/// Averages per-sample MERS and MERT over a set of predictions.
inline ShapeErrorReport evaluate_predictions(const std::vector<PointMatrix>& predicted,
                                             const std::vector<PointMatrix>& truth, int degree = 4) {
  if (predicted.size() != truth.size()) throw InvalidInput("evaluate: prediction and truth counts differ");
  if (predicted.empty()) throw InvalidInput("evaluate: empty set");
  ShapeErrorReport r;
  r.samples = predicted.size();
  double s_mers = 0.0, s_mert = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    s_mers += mers(predicted[i], truth[i], degree);
    s_mert += mert(predicted[i], truth[i], degree);
    for (Eigen::Index j = 0; j < truth[i].rows(); ++j)
      r.max_point_error_mm = std::max(r.max_point_error_mm, 1000.0 * (predicted[i].row(j) - truth[i].row(j)).norm());
  }
  r.mers_mm = s_mers / static_cast<double>(r.samples);
  r.mert_mm = s_mert / static_cast<double>(r.samples);
  r.mers_pct = percent_of_length(r.mers_mm);
  r.mert_pct = percent_of_length(r.mert_mm);
  return r;
}

inline void to_json(nlohmann::json& j, const ShapeErrorReport& r) {
  j = nlohmann::json{{"mers_mm", r.mers_mm},   {"mers_pct", r.mers_pct},
                     {"mert_mm", r.mert_mm},   {"mert_pct", r.mert_pct},
                     {"max_point_error_mm", r.max_point_error_mm},
                     {"fps", r.fps},           {"samples", r.samples},
                     {"config_digest", r.config_digest}};
}

/// Per-frame latency split into pipeline stages, in milliseconds.
struct FrameTiming {
  double preprocess_ms = 0.0, forward_ms = 0.0, fit_ms = 0.0;
  double total_ms() const { return preprocess_ms + forward_ms + fit_ms; }
};

struct StageStats {
  double mean_ms = 0.0, std_ms = 0.0, median_ms = 0.0;
};

struct FpsReport {
  /// 1000 / median total latency; the median ignores frames stretched by
  /// preemption on a shared machine.
  double fps = 0.0;
  double fps_std = 0.0;
  StageStats total, preprocess, forward, fit;
  std::size_t frames = 0, warmup = 0;
};

inline StageStats stage_stats(const std::vector<double>& v) {
  StageStats s;
  s.mean_ms = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean_ms) * (x - s.mean_ms);
  s.std_ms = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  const auto h = sorted.size() / 2;
  s.median_ms = sorted.size() % 2 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
  return s;
}

/// Runs `frame(i)` for i in `order`, one at a time. The first `warmup` calls
/// are discarded; if the order is shorter than warmup + 1 it is cycled.
inline FpsReport measure_fps(const std::function<FrameTiming(std::size_t)>& frame, const std::vector<std::size_t>& order,
                             std::size_t warmup = 10) {
  if (order.empty()) throw InvalidInput("measure_fps: empty test set");
  for (std::size_t k = 0; k < warmup; ++k) frame(order[k % order.size()]);
  std::vector<double> pre, fwd, fit, total, fps;
  for (std::size_t i : order) {
    const auto t = frame(i);
    pre.push_back(t.preprocess_ms);
    fwd.push_back(t.forward_ms);
    fit.push_back(t.fit_ms);
    total.push_back(t.total_ms());
    fps.push_back(t.total_ms() > 0 ? 1000.0 / t.total_ms() : 0.0);
  }
  FpsReport r;
  r.frames = order.size();
  r.warmup = warmup;
  r.total = stage_stats(total);
  r.preprocess = stage_stats(pre);
  r.forward = stage_stats(fwd);
  r.fit = stage_stats(fit);
  r.fps = r.total.median_ms > 0 ? 1000.0 / r.total.median_ms : 0.0;
  r.fps_std = stage_stats(fps).std_ms;
  return r;
}

inline void to_json(nlohmann::json& j, const StageStats& s) { j = {{"mean_ms", s.mean_ms}, {"std_ms", s.std_ms}, {"median_ms", s.median_ms}}; }

inline void to_json(nlohmann::json& j, const FpsReport& r) {
  j = nlohmann::json{{"fps", r.fps},         {"fps_std", r.fps_std},       {"frames", r.frames},
                     {"warmup", r.warmup},   {"total", r.total},           {"preprocess", r.preprocess},
                     {"forward", r.forward}, {"fit", r.fit}};
}

}  // namespace moss::bench
