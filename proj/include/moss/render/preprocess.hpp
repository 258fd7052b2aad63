#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "moss/autodiff/tensor.hpp"
#include "moss/error.hpp"
#include "moss/render/image.hpp"

namespace moss::render {

inline constexpr int kInputChannels = 5;

/// Region of interest in pixels; x is the column, y the row of its top-left corner.
struct Roi {
  int x = 0, y = 0, width = 0, height = 0;
  static Roi full(int width, int height) { return {0, 0, width, height}; }
  bool operator==(const Roi&) const = default;
};

inline void to_json(nlohmann::json& j, const Roi& r) {
  j = nlohmann::json{{"x", r.x}, {"y", r.y}, {"width", r.width}, {"height", r.height}};
}
inline void from_json(const nlohmann::json& j, Roi& r) {
  j.at("x").get_to(r.x);
  j.at("y").get_to(r.y);
  j.at("width").get_to(r.width);
  j.at("height").get_to(r.height);
}

/// Crop -> nearest downsample (top-left pixel of each block) -> RGB/255 ->
/// normalized row and column index channels. Writes 5*out*out floats.
inline void preprocess_into(const Image& rgb, const Roi& roi, int out, float* dst) {
  if (rgb.channels != 3) throw InvalidInput("preprocess: RGB image required");
  if (out < 1) throw InvalidInput("preprocess: out_size must be positive");
  if (roi.width < 1 || roi.height < 1 || roi.x < 0 || roi.y < 0 || roi.x + roi.width > rgb.width ||
      roi.y + roi.height > rgb.height)
    throw InvalidInput("preprocess: roi outside the image");
  if (roi.width % out != 0 || roi.height % out != 0)
    throw InvalidInput("preprocess: out_size " + std::to_string(out) + " must divide the roi size");
  const int kr = roi.height / out, kc = roi.width / out;
  const std::size_t plane = static_cast<std::size_t>(out) * out;
  const float denom = out > 1 ? static_cast<float>(out - 1) : 1.0f;
  for (int i = 0; i < out; ++i)
    for (int j = 0; j < out; ++j) {
      const std::uint8_t* px = rgb.at(roi.y + i * kr, roi.x + j * kc);
      const std::size_t o = static_cast<std::size_t>(i) * out + j;
      for (int c = 0; c < 3; ++c) dst[c * plane + o] = static_cast<float>(px[c]) / 255.0f;
      dst[3 * plane + o] = static_cast<float>(i) / denom;
      dst[4 * plane + o] = static_cast<float>(j) / denom;
    }
}

inline ad::Tensor<float> preprocess(const Image& rgb, const Roi& roi, int out) {
  std::vector<float> buf(static_cast<std::size_t>(kInputChannels) * out * out);
  preprocess_into(rgb, roi, out, buf.data());
  return ad::Tensor<float>({static_cast<std::size_t>(kInputChannels), static_cast<std::size_t>(out), static_cast<std::size_t>(out)},
                       std::move(buf));
}

}  // namespace moss::render
