#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "moss/error.hpp"
#include "moss/render/camera.hpp"
#include "moss/render/image.hpp"
#include "moss/rod/geometry.hpp"
#include "moss/rod/statics.hpp"

namespace moss::render {

using Color = std::array<double, 3>;

struct RenderStyle {
  std::array<std::uint8_t, 3> background{128, 128, 128};
  /// Optional backdrop; must match the camera resolution.
  const Image* backdrop = nullptr;
  std::vector<Color> segment_colors{{235, 225, 205}, {190, 210, 240}};
  Color disk_color{70, 70, 80};
  double disk_radius = 0.011;
  double disk_thickness = 0.003;
  int radial_segments = 16;
  /// Direction towards the light, in the camera frame.
  Eigen::Vector3d light_direction = Eigen::Vector3d(-0.4, -0.6, -1.0).normalized();
  double ambient = 0.3;
  double diffuse = 0.7;
};

struct RenderedFrame {
  Image rgb;
  /// z-depth in meters, 0 where nothing was hit.
  std::vector<float> depth;

  int width() const { return rgb.width; }
  int height() const { return rgb.height; }
  float depth_at(int row, int col) const { return depth[static_cast<std::size_t>(row) * rgb.width + col]; }
  bool hit(int row, int col) const { return depth_at(row, col) > 0.0f; }

  /// Depth in millimeters, saturated to 16 bits.
  Image16 depth_mm() const {
    Image16 out{rgb.width, rgb.height, std::vector<std::uint16_t>(depth.size())};
    for (std::size_t i = 0; i < depth.size(); ++i)
      out.data[i] = static_cast<std::uint16_t>(std::clamp(std::lround(depth[i] * 1000.0), 0L, 65535L));
    return out;
  }
};

struct Mesh {
  struct Vertex {
    Eigen::Vector3d position, normal;
  };
  struct Triangle {
    std::array<int, 3> v;
    int color;
  };
  std::vector<Vertex> vertices;
  std::vector<Triangle> triangles;
  std::vector<Color> colors;
};

namespace detail {

inline void add_ring(Mesh& mesh, const Eigen::Vector3d& c, const Eigen::Matrix3d& R, double radius, int radial) {
  for (int k = 0; k < radial; ++k) {
    const double a = 2.0 * std::numbers::pi * k / radial;
    const Eigen::Vector3d dir = R * Eigen::Vector3d(std::cos(a), std::sin(a), 0.0);
    mesh.vertices.push_back({c + radius * dir, dir});
  }
}

inline void connect_rings(Mesh& mesh, int first, int second, int radial, int color) {
  for (int k = 0; k < radial; ++k) {
    const int k1 = (k + 1) % radial;
    mesh.triangles.push_back({{first + k, first + k1, second + k}, color});
    mesh.triangles.push_back({{first + k1, second + k1, second + k}, color});
  }
}

inline void add_cap(Mesh& mesh, const Eigen::Vector3d& c, const Eigen::Matrix3d& R, double radius, int radial,
                    const Eigen::Vector3d& normal, int color) {
  const int center = static_cast<int>(mesh.vertices.size());
  mesh.vertices.push_back({c, normal});
  const int ring = static_cast<int>(mesh.vertices.size());
  for (int k = 0; k < radial; ++k) {
    const double a = 2.0 * std::numbers::pi * k / radial;
    mesh.vertices.push_back({c + radius * (R * Eigen::Vector3d(std::cos(a), std::sin(a), 0.0)), normal});
  }
  for (int k = 0; k < radial; ++k) mesh.triangles.push_back({{center, ring + k, ring + (k + 1) % radial}, color});
}

}  // namespace detail

/// Swept tube of the outer diameter along the centerline, closed at both
/// ends, plus a slightly wider short cylinder at every spacer disk.
inline Mesh build_robot_mesh(const rod::RodState& st, const rod::RobotGeometry& g, const RenderStyle& style) {
  const int radial = style.radial_segments;
  if (radial < 3) throw InvalidInput("render: radial_segments must be >= 3");
  if (style.segment_colors.empty()) throw InvalidInput("render: no segment colors");
  if (st.size() != static_cast<std::size_t>(g.integration_steps + 1))
    throw InvalidInput("render: rod state does not match the geometry's integration grid");
  Mesh mesh;
  mesh.colors = style.segment_colors;
  const int disk_color = static_cast<int>(mesh.colors.size());
  mesh.colors.push_back(style.disk_color);
  const double radius = g.outer_diameter / 2.0;
  const int N = static_cast<int>(st.size());
  const int sps = g.steps_per_segment();
  auto seg_color = [&](int interval) {
    return std::min(interval / sps, static_cast<int>(style.segment_colors.size()) - 1);
  };

  std::vector<int> ring_start(N);
  for (int i = 0; i < N; ++i) {
    ring_start[i] = static_cast<int>(mesh.vertices.size());
    detail::add_ring(mesh, st.p[i], st.R[i], radius, radial);
  }
  for (int i = 0; i + 1 < N; ++i) detail::connect_rings(mesh, ring_start[i], ring_start[i + 1], radial, seg_color(i));
  detail::add_cap(mesh, st.p.front(), st.R.front(), radius, radial, -st.R.front().col(2), seg_color(0));
  detail::add_cap(mesh, st.p.back(), st.R.back(), radius, radial, st.R.back().col(2), seg_color(N - 2));

  const int spd = g.steps_per_disk();
  for (int k = 1; k <= g.disk_count(); ++k) {
    const int node = k * spd;
    const Eigen::Matrix3d& R = st.R[node];
    const Eigen::Vector3d axis = R.col(2);
    // the tip disk sits flush with the end of the tube
    const double lo = (k == g.disk_count()) ? -style.disk_thickness : -style.disk_thickness / 2;
    const double hi = lo + style.disk_thickness;
    const Eigen::Vector3d c0 = st.p[node] + lo * axis, c1 = st.p[node] + hi * axis;
    const int r0 = static_cast<int>(mesh.vertices.size());
    detail::add_ring(mesh, c0, R, style.disk_radius, radial);
    const int r1 = static_cast<int>(mesh.vertices.size());
    detail::add_ring(mesh, c1, R, style.disk_radius, radial);
    detail::connect_rings(mesh, r0, r1, radial, disk_color);
    detail::add_cap(mesh, c0, R, style.disk_radius, radial, -axis, disk_color);
    detail::add_cap(mesh, c1, R, style.disk_radius, radial, axis, disk_color);
  }
  return mesh;
}

namespace detail {

struct ClipVertex {
  Eigen::Vector3d pc;  // camera frame
  Eigen::Vector3d n;   // camera frame normal
};

/// Sutherland-Hodgman against the plane z = near.
inline int clip_near(const std::array<ClipVertex, 3>& in, double near_z, std::array<ClipVertex, 4>& out) {
  int count = 0;
  for (int i = 0; i < 3; ++i) {
    const ClipVertex& a = in[i];
    const ClipVertex& b = in[(i + 1) % 3];
    const bool ain = a.pc.z() >= near_z, bin = b.pc.z() >= near_z;
    if (ain) out[count++] = a;
    if (ain != bin) {
      const double t = (near_z - a.pc.z()) / (b.pc.z() - a.pc.z());
      out[count++] = {a.pc + t * (b.pc - a.pc), a.n + t * (b.n - a.n)};
    }
  }
  return count;
}

}  // namespace detail

/// Z-buffered triangle rasterization with one sample per pixel center.
inline RenderedFrame rasterize(const Mesh& mesh, const CameraModel& cam, const RenderStyle& style) {
  cam.validate();
  const int W = cam.width, H = cam.height;
  RenderedFrame frame;
  if (style.backdrop) {
    if (style.backdrop->width != W || style.backdrop->height != H || style.backdrop->channels != 3)
      throw InvalidInput("render: backdrop must be an RGB image of the camera resolution");
    frame.rgb = *style.backdrop;
  } else {
    frame.rgb = Image(W, H, 3);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) std::copy(style.background.begin(), style.background.end(), frame.rgb.at(r, c));
  }
  frame.depth.assign(static_cast<std::size_t>(W) * H, 0.0f);
  std::vector<double> zbuf(static_cast<std::size_t>(W) * H, std::numeric_limits<double>::infinity());

  std::vector<detail::ClipVertex> cv(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
    cv[i] = {cam.to_camera(mesh.vertices[i].position), cam.rotation * mesh.vertices[i].normal};

  const Eigen::Vector3d L = style.light_direction.normalized();
  std::size_t covered = 0;

  auto raster_tri = [&](const detail::ClipVertex& a, const detail::ClipVertex& b, const detail::ClipVertex& c,
                        const Color& base) {
    const Eigen::Vector2d pa = cam.project_camera(a.pc), pb = cam.project_camera(b.pc), pc = cam.project_camera(c.pc);
    const double area = (pb.x() - pa.x()) * (pc.y() - pa.y()) - (pb.y() - pa.y()) * (pc.x() - pa.x());
    if (!(std::abs(area) > 1e-12)) return;
    const double xmin = std::min({pa.x(), pb.x(), pc.x()}), xmax = std::max({pa.x(), pb.x(), pc.x()});
    const double ymin = std::min({pa.y(), pb.y(), pc.y()}), ymax = std::max({pa.y(), pb.y(), pc.y()});
    const int c0 = std::max(0, static_cast<int>(std::ceil(xmin - 0.5)));
    const int c1 = std::min(W - 1, static_cast<int>(std::floor(xmax - 0.5)));
    const int r0 = std::max(0, static_cast<int>(std::ceil(ymin - 0.5)));
    const int r1 = std::min(H - 1, static_cast<int>(std::floor(ymax - 0.5)));
    if (c0 > c1 || r0 > r1) return;
    const double iza = 1.0 / a.pc.z(), izb = 1.0 / b.pc.z(), izc = 1.0 / c.pc.z();
    for (int r = r0; r <= r1; ++r) {
      const double y = r + 0.5;
      for (int col = c0; col <= c1; ++col) {
        const double x = col + 0.5;
        const double w0 = ((pb.x() - x) * (pc.y() - y) - (pb.y() - y) * (pc.x() - x)) / area;
        const double w1 = ((pc.x() - x) * (pa.y() - y) - (pc.y() - y) * (pa.x() - x)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        const double iz = w0 * iza + w1 * izb + w2 * izc;
        const double z = 1.0 / iz;
        if (z < cam.near_clip || z > cam.far_clip) continue;
        const std::size_t idx = static_cast<std::size_t>(r) * W + col;
        if (!(z < zbuf[idx])) continue;
        zbuf[idx] = z;
        // perspective-correct normal, flipped to face the viewer
        Eigen::Vector3d n = (w0 * iza * a.n + w1 * izb * b.n + w2 * izc * c.n) * z;
        const Eigen::Vector3d p = (w0 * iza * a.pc + w1 * izb * b.pc + w2 * izc * c.pc) * z;
        if (n.dot(p) > 0) n = -n;
        const double nn = n.norm();
        const double lambert = nn > 0 ? std::max(0.0, n.dot(L) / nn) : 0.0;
        const double shade = style.ambient + style.diffuse * lambert;
        std::uint8_t* px = frame.rgb.at(r, col);
        for (int k = 0; k < 3; ++k) px[k] = static_cast<std::uint8_t>(std::clamp(std::lround(base[k] * shade), 0L, 255L));
        frame.depth[idx] = static_cast<float>(z);
      }
    }
  };

  for (const auto& t : mesh.triangles) {
    const std::array<detail::ClipVertex, 3> tri{cv[t.v[0]], cv[t.v[1]], cv[t.v[2]]};
    if (tri[0].pc.z() > cam.far_clip && tri[1].pc.z() > cam.far_clip && tri[2].pc.z() > cam.far_clip) continue;
    std::array<detail::ClipVertex, 4> poly;
    const int n = detail::clip_near(tri, cam.near_clip, poly);
    for (int k = 1; k + 1 < n; ++k) raster_tri(poly[0], poly[k], poly[k + 1], mesh.colors[t.color]);
  }
  for (float d : frame.depth) covered += d > 0.0f;
  if (covered == 0) throw DegenerateView("render: robot is entirely outside the camera frustum");
  return frame;
}

inline RenderedFrame render(const rod::RodState& st, const rod::RobotGeometry& g, const CameraModel& cam,
                            const RenderStyle& style = {}) {
  return rasterize(build_robot_mesh(st, g, style), cam, style);
}

}  // namespace moss::render
