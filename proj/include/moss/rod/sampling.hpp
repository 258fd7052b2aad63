#pragma once

#include <string>
#include <string_view>

#include "moss/error.hpp"
#include "moss/random.hpp"
#include "moss/rod/geometry.hpp"

namespace moss::rod {

enum class LoadMode { free_space, loaded };

inline constexpr double kTipForceRange = 0.1;    // N, per component
inline constexpr double kTipMomentRange = 0.01;  // N m, per component

inline std::string to_string(LoadMode m) { return m == LoadMode::free_space ? "free_space" : "loaded"; }

inline LoadMode load_mode_from_string(std::string_view s) {
  if (s == "free_space") return LoadMode::free_space;
  if (s == "loaded") return LoadMode::loaded;
  throw InvalidInput("unknown load mode '" + std::string(s) + "'");
}

/// Tensions uniform in [0, max_tension]; in loaded mode every tip force and
/// moment component is uniform in its symmetric range.
inline RobotConfiguration sample_configuration(Rng& rng, LoadMode mode, const RobotGeometry& g) {
  RobotConfiguration c = RobotConfiguration::relaxed(g);
  for (auto& seg : c.tensions)
    for (double& t : seg) t = rng.uniform(0.0, g.max_tension);
  if (mode == LoadMode::loaded) {
    for (int k = 0; k < 3; ++k) c.tip_force[k] = rng.uniform(-kTipForceRange, kTipForceRange);
    for (int k = 0; k < 3; ++k) c.tip_moment[k] = rng.uniform(-kTipMomentRange, kTipMomentRange);
  }
  return c;
}

}  // namespace moss::rod
