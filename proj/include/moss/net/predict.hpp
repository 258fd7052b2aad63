#pragma once

#include <chrono>

#include "moss/net/model.hpp"
#include "moss/points.hpp"
#include "moss/render/preprocess.hpp"

namespace moss::net {

/// Wall time of each pipeline stage in milliseconds.
struct StageTimes {
  double preprocess_ms = 0.0;
  double forward_ms = 0.0;
  double fit_ms = 0.0;
  double total_ms() const { return preprocess_ms + forward_ms + fit_ms; }
};

struct ShapePrediction {
  PointMatrix points;  // M x 3, meters, at s = j/M
  curvefit::CurveParams<double> curve;
  StageTimes times;
};

/// Inference-mode forward pass. Batchnorm only reads its running statistics
/// here, so shared parameters are never written.
template <typename T>
DecoderOutputs<T> infer(const Tensor<T>& input, const NetworkParameters<T>& params, const ModelConfig& cfg) {
  return forward(input, const_cast<NetworkParameters<T>&>(params), cfg, false);
}

/// Points of a fitted curve as an M x 3 matrix.
inline PointMatrix to_points(const Tensor<double>& points) {
  PointMatrix out(static_cast<Eigen::Index>(points.dim(0)), 3);
  for (std::size_t i = 0; i < points.dim(0); ++i)
    for (std::size_t a = 0; a < 3; ++a) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = points[i * 3 + a];
  return out;
}

/// Image -> preprocess -> network -> weighted curve fit -> M points.
inline ShapePrediction predict_shape(const render::Image& rgb, const render::Roi& roi,
                                     const NetworkParameters<float>& params, const ModelConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  auto ms = [](Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
  };
  ShapePrediction out;
  const auto t0 = Clock::now();
  const auto s = static_cast<std::size_t>(cfg.input_size);
  auto input = ad::reshape(render::preprocess(rgb, roi, cfg.input_size), {1, 5, s, s});
  const auto t1 = Clock::now();
  const auto maps = infer(input, params, cfg);
  const auto t2 = Clock::now();
  auto [points, curve] = fit_curve(pixel_predictions(maps, 0), cfg);
  out.points = to_points(points);
  out.curve = std::move(curve);
  const auto t3 = Clock::now();
  out.times = {ms(t0, t1), ms(t1, t2), ms(t2, t3)};
  return out;
}

}  // namespace moss::net
