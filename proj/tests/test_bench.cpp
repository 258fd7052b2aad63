#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "moss/bench/ablation.hpp"
#include "moss/bench/metrics.hpp"
#include "moss/bench/report.hpp"
#include "moss/random.hpp"

using namespace moss;
using namespace moss::bench;

namespace {

PointMatrix random_curve(Rng& rng, int M = 10) {
  PointMatrix p(M, 3);
  for (int j = 0; j < M; ++j)
    for (int a = 0; a < 3; ++a) p(j, a) = 0.05 * (rng.uniform() - 0.5) + (a == 2 ? 0.025 * (j + 1) : 0.0);
  return p;
}

PointMatrix straight(int M = 10) {
  PointMatrix p = PointMatrix::Zero(M, 3);
  for (int j = 0; j < M; ++j) p(j, 2) = 0.25 * (j + 1) / M;
  return p;
}

}  // namespace

TEST(Metrics, ZeroOnIdenticalInputs) {
  Rng rng(1);
  const auto p = random_curve(rng);
  EXPECT_EQ(mers(p, p), 0.0);
  EXPECT_EQ(mert(p, p), 0.0);
}

TEST(Metrics, UniformOffsetOfOneMillimeter) {
  const auto t = straight();
  PointMatrix p = t;
  p.col(0).array() += 1e-3;
  EXPECT_NEAR(mers(p, t), 1.0, 1e-12);
  EXPECT_NEAR(mert(p, t), 1.0, 1e-12);
}

TEST(Metrics, TipOnlyOffset) {
  const auto t = straight();
  PointMatrix p = t;
  p(9, 1) += 1e-3;
  EXPECT_NEAR(mers(p, t), 0.1, 1e-12);
  EXPECT_NEAR(mert(p, t), 1.0, 1e-12);
}

TEST(Metrics, ThreeFourFiveTip) {
  const auto t = straight();
  PointMatrix p = t;
  p(9, 0) += 3e-3;
  p(9, 1) += 4e-3;
  EXPECT_NEAR(mert(p, t), 5.0, 1e-12);
}

TEST(Metrics, RigidTransformInvariance) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_curve(rng), b = random_curve(rng);
    const Eigen::Matrix3d R =
        Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized().toRotationMatrix();
    const Eigen::RowVector3d t(rng.normal(), rng.normal(), rng.normal());
    const PointMatrix ra = (a * R.transpose()).rowwise() + t, rb = (b * R.transpose()).rowwise() + t;
    EXPECT_NEAR(mers(ra, rb), mers(a, b), 1e-10);
    EXPECT_NEAR(mert(ra, rb), mert(a, b), 1e-10);
  }
}

TEST(Metrics, SymmetryAndTipBound) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_curve(rng, 12), b = random_curve(rng, 12);
    EXPECT_EQ(mers(a, b), mers(b, a));
    EXPECT_EQ(mert(a, b), mert(b, a));
    EXPECT_LE(mert(a, b), 12 * mers(a, b) * (1 + 1e-12));
    EXPECT_GE(mers(a, b), 0.0);
  }
}

TEST(Metrics, RejectsTooFewPointsAndMismatchedShapes) {
  const auto t = straight(9);
  EXPECT_THROW(mers(t, t), InvalidInput);
  EXPECT_THROW(mert(t, t), InvalidInput);
  EXPECT_NO_THROW(mers(t, t, 3));
  EXPECT_THROW(mers(straight(10), straight(11)), InvalidInput);
}

TEST(Metrics, ReportAveragesAndPercentages) {
  const auto t = straight();
  PointMatrix p1 = t, p2 = t;
  p1.col(0).array() += 1e-3;
  p2(9, 2) += 4e-3;
  const auto r = evaluate_predictions({p1, p2}, {t, t});
  EXPECT_EQ(r.samples, 2u);
  EXPECT_NEAR(r.mers_mm, (1.0 + 0.4) / 2, 1e-12);
  EXPECT_NEAR(r.mert_mm, (1.0 + 4.0) / 2, 1e-12);
  EXPECT_DOUBLE_EQ(r.mers_pct, r.mers_mm / 250.0 * 100.0);
  EXPECT_DOUBLE_EQ(r.mert_pct, r.mert_mm / 250.0 * 100.0);
  EXPECT_NEAR(r.max_point_error_mm, 4.0, 1e-12);
  EXPECT_THROW(evaluate_predictions({}, {}), InvalidInput);
  EXPECT_THROW(evaluate_predictions({p1}, {t, t}), InvalidInput);
  const nlohmann::json j = r;
  EXPECT_DOUBLE_EQ(j.at("mers_mm").get<double>(), r.mers_mm);
}

TEST(Fps, StageBreakdownAndWarmup) {
  std::vector<std::size_t> calls;
  auto frame = [&](std::size_t i) {
    calls.push_back(i);
    return FrameTiming{1.0, 2.0 + static_cast<double>(i), 1.0};
  };
  const std::vector<std::size_t> order{0, 1, 2, 3};
  const auto r = measure_fps(frame, order, 6);
  EXPECT_EQ(calls.size(), 10u);
  EXPECT_EQ(r.frames, 4u);
  EXPECT_EQ(r.warmup, 6u);
  EXPECT_DOUBLE_EQ(r.preprocess.mean_ms, 1.0);
  EXPECT_DOUBLE_EQ(r.forward.mean_ms, 3.5);
  EXPECT_DOUBLE_EQ(r.fit.mean_ms, 1.0);
  EXPECT_DOUBLE_EQ(r.total.mean_ms, 5.5);
  EXPECT_DOUBLE_EQ(r.fps, 1000.0 / 5.5);
  EXPECT_GT(r.fps_std, 0.0);
  EXPECT_THROW(measure_fps(frame, {}, 0), InvalidInput);
}

TEST(Fps, OneStalledFrameDoesNotMoveFps) {
  auto frame = [](std::size_t i) { return FrameTiming{1.0, i == 2 ? 100.0 : 3.0, 1.0}; };
  const auto r = measure_fps(frame, {0, 1, 2, 3, 4}, 0);
  EXPECT_DOUBLE_EQ(r.total.median_ms, 5.0);
  EXPECT_DOUBLE_EQ(r.fps, 200.0);
  EXPECT_DOUBLE_EQ(r.total.mean_ms, 24.4);
}

TEST(Fps, OrderIndependentForDeterministicTimings) {
  auto frame = [](std::size_t i) { return FrameTiming{0.5, 1.0 + 0.1 * static_cast<double>(i % 7), 0.25}; };
  std::vector<std::size_t> order(40);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto a = measure_fps(frame, order, 0);
  std::reverse(order.begin(), order.end());
  const auto b = measure_fps(frame, order, 0);
  EXPECT_NEAR(a.fps, b.fps, 1e-9 * a.fps);
  const auto t = fps_table(a);
  EXPECT_EQ(t.rows.size(), 5u);
  EXPECT_EQ(t.rows[0][0], "preprocess");
}

TEST(Tables, TextAndCsvCarryTheSameCells) {
  ShapeErrorReport r;
  r.mers_mm = 1.23456;
  r.mert_mm = 2.5;
  r.mers_pct = percent_of_length(r.mers_mm);
  r.mert_pct = percent_of_length(r.mert_mm);
  r.fps = 33.333;
  const auto t = results_table({{"ours", r}, {"other", r}});
  ASSERT_EQ(t.headers.size(), 6u);
  EXPECT_EQ(t.headers[1], "MERS (mm)");
  const auto text = t.text(), csv = t.csv();
  for (const auto& row : t.rows)
    for (const auto& cell : row) {
      EXPECT_NE(text.find(cell), std::string::npos) << cell;
      EXPECT_NE(csv.find(cell), std::string::npos) << cell;
    }
  EXPECT_NE(csv.find("ours,1.235,0.494,2.500,1.000,33.3"), std::string::npos) << csv;
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Tables, AblationLayouts) {
  net::ModelConfig base;
  const auto dv = decoder_variants(base);
  ASSERT_EQ(dv.size(), 3u);
  EXPECT_FALSE(dv[0].decoders.arclength);
  EXPECT_FALSE(dv[0].decoders.importance);
  EXPECT_TRUE(dv[1].decoders.arclength);
  EXPECT_FALSE(dv[1].decoders.importance);
  EXPECT_TRUE(dv[2].decoders.importance);

  const auto gv = degree_variants(base, {2, 3, 4, 5});
  ASSERT_EQ(gv.size(), 4u);
  EXPECT_EQ(gv[0].query_points, 10);
  EXPECT_EQ(gv[3].query_points, 12);
  EXPECT_THROW(degree_variants(base, {0}), InvalidInput);

  std::vector<AblationRow> rows;
  for (const auto& v : dv) rows.push_back({v, {}, {}});
  const auto dt = decoder_table(rows);
  ASSERT_EQ(dt.rows.size(), 3u);
  EXPECT_EQ(dt.headers[0], "Centerline");
  EXPECT_EQ(dt.headers.size(), 8u);
  EXPECT_EQ(dt.rows[0][1], "-");
  EXPECT_EQ(dt.rows[2][2], "x");

  rows.clear();
  for (const auto& v : gv) rows.push_back({v, {}, {}});
  const auto gt = degree_table(rows);
  ASSERT_EQ(gt.rows.size(), 4u);
  EXPECT_EQ(gt.headers[0], "Polynomial Degree");
  EXPECT_EQ(gt.rows[2][0], "4");
}

TEST(Svg, DrawsBothCurvesInThreeViews) {
  Rng rng(4);
  const auto svg = curves_svg(random_curve(rng), straight(), "sample");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  std::size_t lines = 0;
  for (auto pos = svg.find("<polyline"); pos != std::string::npos; pos = svg.find("<polyline", pos + 1)) ++lines;
  EXPECT_EQ(lines, 6u);
  EXPECT_NE(svg.find("sample"), std::string::npos);
}
