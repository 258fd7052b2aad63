#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "moss/error.hpp"
#include "moss/sha256.hpp"

namespace moss::rod {

/// Two-segment tendon-driven robot with a superelastic backbone. All SI.
struct RobotGeometry {
  double total_length = 0.250;
  double outer_diameter = 0.020;
  int segments = 2;
  int disks_per_segment = 10;
  double backbone_radius = 0.5e-3;
  double youngs_modulus = 54e9;
  double shear_modulus = 54e9 / (2.0 * 1.3);  // Poisson ratio 0.3
  int tendons_per_segment = 3;
  double tendon_pitch_radius = 0.008;
  /// Rotation of each segment's tendon pattern relative to the previous one.
  double segment_phase = std::numbers::pi / 3.0;
  /// Actuation limit: every tension lies in [0, max_tension].
  double max_tension = 3.0;
  Eigen::Vector3d gravity = Eigen::Vector3d::Zero();
  double backbone_density = 6450.0;
  int integration_steps = 200;

  double area() const { return std::numbers::pi * backbone_radius * backbone_radius; }
  double second_moment() const { return std::numbers::pi * std::pow(backbone_radius, 4) / 4.0; }
  double polar_moment() const { return 2.0 * second_moment(); }
  double bending_stiffness() const { return youngs_modulus * second_moment(); }

  double segment_length() const { return total_length / segments; }
  int disk_count() const { return segments * disks_per_segment; }
  int steps_per_disk() const { return integration_steps / disk_count(); }
  int steps_per_segment() const { return integration_steps / segments; }
  double step_length() const { return total_length / integration_steps; }

  /// Arclength of disk k (1-based; disk disk_count() sits at the tip).
  double disk_arclength(int k) const { return total_length * k / disk_count(); }

  double tendon_angle(int segment, int tendon) const {
    return 2.0 * std::numbers::pi * tendon / tendons_per_segment + segment * segment_phase;
  }

  /// Tendon hole position in the local disk frame.
  Eigen::Vector3d tendon_offset(int segment, int tendon) const {
    const double a = tendon_angle(segment, tendon);
    return {tendon_pitch_radius * std::cos(a), tendon_pitch_radius * std::sin(a), 0.0};
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw InvalidInput("robot geometry: " + msg); };
    if (!(total_length > 0)) fail("total_length must be positive");
    if (!(outer_diameter > 0)) fail("outer_diameter must be positive");
    if (segments < 1) fail("segments must be >= 1");
    if (disks_per_segment < 1) fail("disks_per_segment must be >= 1");
    if (!(backbone_radius > 0) || !(youngs_modulus > 0) || !(shear_modulus > 0)) fail("material parameters must be positive");
    if (tendons_per_segment < 1) fail("tendons_per_segment must be >= 1");
    if (!(tendon_pitch_radius > 0) || !(tendon_pitch_radius < outer_diameter / 2))
      fail("tendon_pitch_radius must lie inside the outer radius");
    if (!(max_tension > 0)) fail("max_tension must be positive");
    if (!gravity.allFinite() || !(backbone_density >= 0)) fail("gravity/density invalid");
    if (integration_steps < disk_count() || integration_steps % disk_count() != 0)
      fail("integration_steps must be a positive multiple of the disk count");
  }

  std::string digest() const;
};

inline void to_json(nlohmann::json& j, const RobotGeometry& g) {
  j = nlohmann::json{{"total_length", g.total_length},
                     {"outer_diameter", g.outer_diameter},
                     {"segments", g.segments},
                     {"disks_per_segment", g.disks_per_segment},
                     {"backbone_radius", g.backbone_radius},
                     {"youngs_modulus", g.youngs_modulus},
                     {"shear_modulus", g.shear_modulus},
                     {"tendons_per_segment", g.tendons_per_segment},
                     {"tendon_pitch_radius", g.tendon_pitch_radius},
                     {"segment_phase", g.segment_phase},
                     {"max_tension", g.max_tension},
                     {"gravity", {g.gravity.x(), g.gravity.y(), g.gravity.z()}},
                     {"backbone_density", g.backbone_density},
                     {"integration_steps", g.integration_steps}};
}

/// Missing keys keep their defaults, so a config file may override a subset.
inline void from_json(const nlohmann::json& j, RobotGeometry& g) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("total_length", g.total_length);
  get("outer_diameter", g.outer_diameter);
  get("segments", g.segments);
  get("disks_per_segment", g.disks_per_segment);
  get("backbone_radius", g.backbone_radius);
  get("youngs_modulus", g.youngs_modulus);
  get("shear_modulus", g.shear_modulus);
  get("tendons_per_segment", g.tendons_per_segment);
  get("tendon_pitch_radius", g.tendon_pitch_radius);
  get("segment_phase", g.segment_phase);
  get("max_tension", g.max_tension);
  if (j.contains("gravity")) {
    const auto v = j.at("gravity").get<std::vector<double>>();
    if (v.size() != 3) throw InvalidInput("robot geometry: gravity must have 3 components");
    g.gravity = {v[0], v[1], v[2]};
  }
  get("backbone_density", g.backbone_density);
  get("integration_steps", g.integration_steps);
}

inline std::string RobotGeometry::digest() const {
  nlohmann::json j = *this;
  return sha256_hex(j.dump());
}

inline RobotGeometry load_geometry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open geometry file", {path.string()});
  RobotGeometry g;
  try {
    from_json(nlohmann::json::parse(in), g);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed geometry file: ") + e.what(), {path.string()});
  }
  g.validate();
  return g;
}

/// Tendon tensions plus an optional wrench at the tip (expressed in the base frame).
struct RobotConfiguration {
  std::vector<std::vector<double>> tensions;
  Eigen::Vector3d tip_force = Eigen::Vector3d::Zero();
  Eigen::Vector3d tip_moment = Eigen::Vector3d::Zero();

  static RobotConfiguration relaxed(const RobotGeometry& g) {
    RobotConfiguration c;
    c.tensions.assign(g.segments, std::vector<double>(g.tendons_per_segment, 0.0));
    return c;
  }

  bool loaded() const { return !tip_force.isZero(0.0) || !tip_moment.isZero(0.0); }

  void validate(const RobotGeometry& g) const {
    if (static_cast<int>(tensions.size()) != g.segments)
      throw InvalidInput("configuration: expected " + std::to_string(g.segments) + " tension groups");
    for (const auto& seg : tensions) {
      if (static_cast<int>(seg.size()) != g.tendons_per_segment)
        throw InvalidInput("configuration: expected " + std::to_string(g.tendons_per_segment) + " tendons per segment");
      for (double t : seg)
        if (!std::isfinite(t) || t < 0.0 || t > g.max_tension)
          throw InvalidInput("configuration: tension " + std::to_string(t) + " outside [0, max_tension]");
    }
    if (!tip_force.allFinite() || !tip_moment.allFinite()) throw InvalidInput("configuration: non-finite tip wrench");
  }
};

inline void to_json(nlohmann::json& j, const RobotConfiguration& c) {
  j = nlohmann::json{{"tensions", c.tensions},
                     {"tip_force", {c.tip_force.x(), c.tip_force.y(), c.tip_force.z()}},
                     {"tip_moment", {c.tip_moment.x(), c.tip_moment.y(), c.tip_moment.z()}}};
}

inline void from_json(const nlohmann::json& j, RobotConfiguration& c) {
  j.at("tensions").get_to(c.tensions);
  auto vec3 = [&](const char* key) {
    const auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 3) throw InvalidInput(std::string("configuration: ") + key + " must have 3 components");
    return Eigen::Vector3d(v[0], v[1], v[2]);
  };
  c.tip_force = j.contains("tip_force") ? vec3("tip_force") : Eigen::Vector3d::Zero();
  c.tip_moment = j.contains("tip_moment") ? vec3("tip_moment") : Eigen::Vector3d::Zero();
}

}  // namespace moss::rod
