#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <numbers>
#include <optional>

#include "moss/error.hpp"

namespace moss::render {

/// Pinhole camera. Camera frame: x right, y down, z forward. Pixel (row, col)
/// covers [col, col+1) x [row, row+1); its center is at (col + 0.5, row + 0.5).
struct CameraModel {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // base -> camera
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double near_clip = 0.005, far_clip = 5.0;

  Eigen::Vector3d to_camera(const Eigen::Vector3d& p_base) const { return rotation * p_base + translation; }
  Eigen::Vector3d position() const { return -rotation.transpose() * translation; }

  /// Image-plane coordinates (u = column, v = row) of a camera-frame point.
  Eigen::Vector2d project_camera(const Eigen::Vector3d& pc) const {
    return {fx * pc.x() / pc.z() + cx, fy * pc.y() / pc.z() + cy};
  }

  /// Projects a base-frame point; nullopt when it lies outside the clip range.
  std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& p_base) const {
    const Eigen::Vector3d pc = to_camera(p_base);
    if (pc.z() < near_clip || pc.z() > far_clip) return std::nullopt;
    return project_camera(pc);
  }

  double horizontal_fov() const { return 2.0 * std::atan(width / (2.0 * fx)); }

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw InvalidInput("camera: focal lengths must be positive");
    if (width < 1 || height < 1) throw InvalidInput("camera: empty resolution");
    if (!(cx >= 0 && cx < width && cy >= 0 && cy < height)) throw InvalidInput("camera: principal point outside image");
    if ((rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm() > 1e-9 || rotation.determinant() < 0)
      throw InvalidInput("camera: extrinsic rotation is not orthonormal");
    if (!(near_clip > 0) || !(far_clip > near_clip)) throw InvalidInput("camera: invalid clip range");
  }

  /// Camera at `eye` looking at `target`, with `up` (base frame) pointing up in the image.
  static CameraModel look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                             double horizontal_fov_rad, int width, int height) {
    const Eigen::Vector3d z = (target - eye).normalized();
    const Eigen::Vector3d x = z.cross(up).normalized();
    const Eigen::Vector3d y = z.cross(x);
    CameraModel cam;
    cam.rotation.row(0) = x.transpose();
    cam.rotation.row(1) = y.transpose();
    cam.rotation.row(2) = z.transpose();
    cam.translation = -cam.rotation * eye;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = (width / 2.0) / std::tan(horizontal_fov_rad / 2.0);
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    return cam;
  }
};

inline double degrees(double rad) { return rad * 180.0 / std::numbers::pi; }
inline double radians(double deg) { return deg * std::numbers::pi / 180.0; }

/// Oblique view framing the reachable workspace: 0.55 m away, 256 x 256, 48 degree FOV.
inline CameraModel default_camera() {
  const Eigen::Vector3d target(0.0, 0.0, 0.09);
  const double az = radians(-60.0), el = radians(20.0), dist = 0.55;
  const Eigen::Vector3d dir(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  return CameraModel::look_at(target + dist * dir, target, Eigen::Vector3d::UnitZ(), radians(48.0), 256, 256);
}

/// Small wide-angle camera 50 mm from the base: 120 degree FOV at 512 x 512.
inline CameraModel wide_angle_camera() {
  const Eigen::Vector3d eye(0.0, -0.050, 0.0);
  const Eigen::Vector3d target(0.0, 0.0, 0.050);
  CameraModel cam = CameraModel::look_at(eye, target, Eigen::Vector3d::UnitZ(), radians(120.0), 512, 512);
  cam.near_clip = 0.002;
  return cam;
}

inline void to_json(nlohmann::json& j, const CameraModel& c) {
  std::vector<double> rot(9);
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) rot[3 * r + k] = c.rotation(r, k);
  j = nlohmann::json{{"fx", c.fx},
                     {"fy", c.fy},
                     {"cx", c.cx},
                     {"cy", c.cy},
                     {"width", c.width},
                     {"height", c.height},
                     {"rotation", rot},
                     {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}},
                     {"near", c.near_clip},
                     {"far", c.far_clip}};
}

inline void from_json(const nlohmann::json& j, CameraModel& c) {
  j.at("fx").get_to(c.fx);
  j.at("fy").get_to(c.fy);
  j.at("cx").get_to(c.cx);
  j.at("cy").get_to(c.cy);
  j.at("width").get_to(c.width);
  j.at("height").get_to(c.height);
  const auto rot = j.at("rotation").get<std::vector<double>>();
  const auto t = j.at("translation").get<std::vector<double>>();
  if (rot.size() != 9 || t.size() != 3) throw InvalidInput("camera: rotation needs 9 and translation 3 values");
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) c.rotation(r, k) = rot[3 * r + k];
  c.translation = {t[0], t[1], t[2]};
  j.at("near").get_to(c.near_clip);
  j.at("far").get_to(c.far_clip);
  c.validate();
}

}  // namespace moss::render
