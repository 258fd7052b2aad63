#pragma once

#include <algorithm>
#include <numeric>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "moss/bench/metrics.hpp"
#include "moss/bench/report.hpp"
#include "moss/net/predict.hpp"
#include "moss/train/trainer.hpp"

namespace moss::bench {

struct AblationVariant {
  std::string label;
  net::DecoderFlags decoders;
  int degree = 4;
  int query_points = 10;
};

/// {C}, {C,A}, {C,A,I} at the base degree.
inline std::vector<AblationVariant> decoder_variants(const net::ModelConfig& base) {
  return {{"C", {false, false}, base.degree, base.query_points},
          {"C+A", {true, false}, base.degree, base.query_points},
          {"C+A+I", {true, true}, base.degree, base.query_points}};
}

/// All decoders; M = max(base M, 2(n+1)) so every degree meets the point constraint.
inline std::vector<AblationVariant> degree_variants(const net::ModelConfig& base, const std::vector<int>& degrees) {
  std::vector<AblationVariant> out;
  for (int n : degrees) {
    if (n < 1) throw InvalidInput("ablation: degree must be >= 1");
    out.push_back({"n=" + std::to_string(n), {true, true}, n,
                   std::max(base.query_points, static_cast<int>(curvefit::min_query_points(n)))});
  }
  return out;
}

struct AblationRow {
  AblationVariant variant;
  ShapeErrorReport report;
  FpsReport fps;
};

struct AblationOptions {
  train::TrainConfig train;
  std::size_t fps_frames = 50;
  std::size_t fps_warmup = 10;
};

/// End-to-end latency of predict_shape over in-memory images.
inline FpsReport measure_model_fps(const std::vector<render::Image>& images, const render::Roi& roi,
                                   const net::NetworkParameters<float>& params, const net::ModelConfig& cfg,
                                   const std::vector<std::size_t>& order, std::size_t warmup = 10) {
  return measure_fps(
      [&](std::size_t i) {
        const auto t = net::predict_shape(images[i], roi, params, cfg).times;
        return FrameTiming{t.preprocess_ms, t.forward_ms, t.fit_ms};
      },
      order, warmup);
}

/// Trains every variant from the same seed on the training split and
/// evaluates it on the test split.
inline std::vector<AblationRow> run_ablation(const data::Dataset& ds, const net::ModelConfig& base,
                                             const std::vector<AblationVariant>& variants,
                                             const AblationOptions& opt, const std::filesystem::path& run_dir,
                                             const std::function<void(const std::string&)>& log = {}) {
  const auto test_idx = ds.indices(data::Split::test);
  if (test_idx.empty()) throw InvalidInput("ablation: dataset has no test samples");
  std::vector<render::Image> images;
  for (auto i : test_idx) images.push_back(ds.image(i));
  std::vector<std::size_t> order(std::min(opt.fps_frames, images.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    auto cfg = base;
    cfg.decoders = v.decoders;
    cfg.degree = v.degree;
    cfg.query_points = v.query_points;
    cfg.validate();
    if (log) log("variant " + v.label);
    auto out = train::run_training(net::init_parameters<float>(cfg, opt.train.seed), cfg, ds, opt.train,
                                   run_dir / v.label, {{"ablation_variant", v.label}}, log);
    const auto test = train::load_samples(ds, test_idx, cfg);
    AblationRow row{v, train::evaluate(test, out.result.best, cfg), {}};
    row.fps = measure_model_fps(images, train::default_roi(ds.manifest().camera), out.result.best, cfg, order,
                                opt.fps_warmup);
    row.report.fps = row.fps.fps;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string mark(bool on) { return on ? "x" : "-"; }

/// Columns: Centerline, Arclength, Importance, then the error columns.
inline Table decoder_table(const std::vector<AblationRow>& rows) {
  Table t;
  t.title = "Decoder ablation";
  t.headers = {"Centerline", "Arclength", "Importance"};
  for (auto& h : error_headers()) t.headers.push_back(h);
  for (const auto& r : rows) {
    std::vector<std::string> cells{mark(true), mark(r.variant.decoders.arclength), mark(r.variant.decoders.importance)};
    for (auto& c : error_cells(r.report)) cells.push_back(c);
    t.rows.push_back(std::move(cells));
  }
  return t;
}

/// Columns: Polynomial Degree, then the error columns.
inline Table degree_table(const std::vector<AblationRow>& rows) {
  Table t;
  t.title = "Polynomial degree ablation";
  t.headers = {"Polynomial Degree"};
  for (auto& h : error_headers()) t.headers.push_back(h);
  for (const auto& r : rows) {
    std::vector<std::string> cells{std::to_string(r.variant.degree)};
    for (auto& c : error_cells(r.report)) cells.push_back(c);
    t.rows.push_back(std::move(cells));
  }
  return t;
}

}  // namespace moss::bench
