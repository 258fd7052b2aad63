#pragma once

#include <json.hpp>

#include <cstddef>
#include <string>

#include "moss/curvefit/curvefit.hpp"
#include "moss/error.hpp"

namespace moss::net {

/// Which decoders exist. The centerline decoder is always present.
struct DecoderFlags {
  bool arclength = true;
  bool importance = true;
  bool operator==(const DecoderFlags&) const = default;
};

struct ModelConfig {
  int input_size = 128;
  int base_channels = 16;
  int stages = 4;
  int degree = 4;
  int query_points = 10;
  DecoderFlags decoders;
  double ridge = curvefit::kDefaultRelativeRidge;
  /// Centerline head output is multiplied by this many meters.
  double coordinate_scale = 0.1;

  static ModelConfig toy() {
    ModelConfig c;
    c.input_size = 64;
    return c;
  }

  int downsamplings() const { return stages - 1; }
  int bottleneck_size() const { return input_size >> downsamplings(); }
  int channels(int stage) const { return base_channels << stage; }

  void validate() const {
    if (stages < 1 || stages > 8) throw InvalidInput("model: stages must be in [1, 8]");
    if (input_size < 1 || input_size % (1 << downsamplings()) != 0)
      throw InvalidInput("model: input_size " + std::to_string(input_size) + " must be divisible by 2^" +
                         std::to_string(downsamplings()));
    if (base_channels < 2 || base_channels % 2 != 0) throw InvalidInput("model: base_channels must be even and >= 2");
    if (degree < 1) throw InvalidInput("model: degree must be >= 1");
    if (query_points < static_cast<int>(curvefit::min_query_points(degree)))
      throw InvalidInput("model: M = " + std::to_string(query_points) + " is below 2(n+1) = " +
                         std::to_string(curvefit::min_query_points(degree)));
    if (!(ridge >= 0.0)) throw InvalidInput("model: ridge must be non-negative");
    if (!(coordinate_scale > 0.0)) throw InvalidInput("model: coordinate_scale must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_size", c.input_size},
                     {"base_channels", c.base_channels},
                     {"stages", c.stages},
                     {"degree", c.degree},
                     {"query_points", c.query_points},
                     {"decoders", {{"centerline", true}, {"arclength", c.decoders.arclength},
                                   {"importance", c.decoders.importance}}},
                     {"ridge", c.ridge},
                     {"coordinate_scale", c.coordinate_scale}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.input_size = j.value("input_size", c.input_size);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.stages = j.value("stages", c.stages);
  c.degree = j.value("degree", c.degree);
  c.query_points = j.value("query_points", c.query_points);
  if (j.contains("decoders")) {
    const auto& d = j.at("decoders");
    if (!d.value("centerline", true)) throw InvalidInput("model: the centerline decoder cannot be disabled");
    c.decoders.arclength = d.value("arclength", c.decoders.arclength);
    c.decoders.importance = d.value("importance", c.decoders.importance);
  }
  c.ridge = j.value("ridge", c.ridge);
  c.coordinate_scale = j.value("coordinate_scale", c.coordinate_scale);
  c.validate();
}

}  // namespace moss::net
