#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "moss/error.hpp"
#include "moss/points.hpp"
#include "moss/rod/statics.hpp"

namespace moss::rod {

inline constexpr int kGroundTruthPoints = 251;

/// Centerline points equally spaced in the rod's reference arclength.
struct GroundTruthCenterline {
  PointMatrix points;
  double length = 0.0;

  Eigen::Index size() const { return points.rows(); }
  double spacing() const { return length / static_cast<double>(points.rows() - 1); }
};

/// Cubic Hermite interpolation on the integration grid using the exact
/// centerline tangents, evaluated at count equally spaced arclengths.
inline GroundTruthCenterline sample_centerline(const RodState& st, int count = kGroundTruthPoints) {
  if (count < 2) throw InvalidInput("sample_centerline: count must be >= 2");
  if (st.size() < 2) throw InvalidInput("sample_centerline: empty rod state");
  const auto intervals = static_cast<Eigen::Index>(st.size() - 1);
  const double L = st.length;
  const double h = L / static_cast<double>(intervals);

  GroundTruthCenterline gt;
  gt.length = L;
  gt.points.resize(count, 3);
  for (int j = 0; j < count; ++j) {
    const double s = L * j / (count - 1);
    const double u = s / h;
    const auto i = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(u)), 0, intervals - 1);
    const double t = u - static_cast<double>(i);
    const double t2 = t * t, t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t, h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
    const Eigen::Vector3d p = h00 * st.p[i] + h10 * h * st.dp_out[i] + h01 * st.p[i + 1] + h11 * h * st.dp_in[i + 1];
    gt.points.row(j) = p.transpose();
  }
  return gt;
}

/// Interpolates a polyline whose rows are equally spaced in arclength at the
/// relative arclengths `s` (0 = first row, 1 = last row). Four-point cubic
/// Lagrange stencil, shifted inward at the ends.
inline PointMatrix resample_uniform(const PointMatrix& points, std::span<const double> s) {
  const Eigen::Index n = points.rows();
  if (n < 4) throw InvalidInput("resample_uniform: need at least 4 points");
  PointMatrix out(static_cast<Eigen::Index>(s.size()), 3);
  for (std::size_t q = 0; q < s.size(); ++q) {
    if (!(s[q] >= 0.0 && s[q] <= 1.0)) throw InvalidInput("resample_uniform: query outside [0, 1]");
    const double u = s[q] * static_cast<double>(n - 1);
    const auto w = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(u)) - 1, 0, n - 4);
    const double t = u - static_cast<double>(w);  // local coordinate, nodes at 0..3
    double c[4];
    for (int a = 0; a < 4; ++a) {
      c[a] = 1.0;
      for (int b = 0; b < 4; ++b)
        if (b != a) c[a] *= (t - b) / static_cast<double>(a - b);
    }
    out.row(static_cast<Eigen::Index>(q)) =
        c[0] * points.row(w) + c[1] * points.row(w + 1) + c[2] * points.row(w + 2) + c[3] * points.row(w + 3);
  }
  return out;
}

}  // namespace moss::rod
