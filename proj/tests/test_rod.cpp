#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "moss/rod/centerline.hpp"
#include "moss/rod/sampling.hpp"
#include "moss/rod/statics.hpp"

using namespace moss;
using namespace moss::rod;

namespace {

RobotConfiguration random_config(std::uint64_t seed, LoadMode mode, const RobotGeometry& g = {}) {
  Rng rng(seed);
  return sample_configuration(rng, mode, g);
}

Eigen::Vector3d body_curvature(const RobotGeometry& g, const RodState& st, std::size_t i) {
  const Eigen::Vector3d kbt(g.bending_stiffness(), g.bending_stiffness(), g.shear_modulus * g.polar_moment());
  return (st.R[i].transpose() * st.m[i]).cwiseQuotient(kbt);
}

/// Planar arc of curvature k about the base x-axis, traversed at unit speed.
Eigen::Vector3d arc_about_x(double k, double s) {
  return {0.0, (std::cos(k * s) - 1.0) / k, std::sin(k * s) / k};
}

}  // namespace

TEST(RodStatics, UnloadedRodIsStraight) {
  RobotGeometry g;
  const RodState st = solve_static(g, RobotConfiguration::relaxed(g));
  EXPECT_NEAR(st.tip().x(), 0.0, 1e-9);
  EXPECT_NEAR(st.tip().y(), 0.0, 1e-9);
  EXPECT_NEAR(st.tip().z(), 0.250, 1e-9);
  EXPECT_LT(st.residual, 1e-8);
}

TEST(RodStatics, BaseFrameConvention) {
  RobotGeometry g;
  const RodState st = solve_static(g, random_config(3, LoadMode::loaded));
  EXPECT_EQ(st.p.front(), Eigen::Vector3d::Zero());
  EXPECT_EQ(st.R.front(), Eigen::Matrix3d::Identity());
  EXPECT_EQ(st.size(), static_cast<std::size_t>(g.integration_steps + 1));
  EXPECT_DOUBLE_EQ(st.s.back(), g.total_length);
}

TEST(RodStatics, PureTipMomentGivesCircularArc) {
  RobotGeometry g;
  for (double M : {0.002, -0.005, 0.01}) {
    RobotConfiguration c = RobotConfiguration::relaxed(g);
    c.tip_moment = {M, 0.0, 0.0};
    const RodState st = solve_static(g, c);
    const double k = M / g.bending_stiffness();
    const Eigen::Vector3d expected = arc_about_x(k, g.total_length);
    EXPECT_LT((st.tip() - expected).norm() / expected.norm(), 1e-6) << "M=" << M;

    const GroundTruthCenterline gt = sample_centerline(st);
    double worst = 0.0;
    for (Eigen::Index j = 0; j < gt.size(); ++j) {
      const double s = g.total_length * j / (gt.size() - 1);
      worst = std::max(worst, (gt.points.row(j).transpose() - arc_about_x(k, s)).norm());
    }
    EXPECT_LT(worst, 1e-6);
  }
}

TEST(RodStatics, SingleTendonBendsFirstSegmentIntoArc) {
  // One tendon parallel to the backbone at offset r: the cross-section moment
  // balance gives EI k = tau r exactly, and the axial strain is -tau/EA.
  RobotGeometry g;
  RobotConfiguration c = RobotConfiguration::relaxed(g);
  const double tau = 1.5;
  c.tensions[0][0] = tau;
  const RodState st = solve_static(g, c);

  const double r = g.tendon_pitch_radius;
  const double k = tau * r / g.bending_stiffness();
  const double stretch = 1.0 - tau / (g.youngs_modulus * g.area());
  const double l1 = g.segment_length();
  const double th = k * l1;
  const Eigen::Vector3d end1 = stretch * Eigen::Vector3d((1 - std::cos(th)) / k, 0.0, std::sin(th) / k);
  const Eigen::Vector3d tip = end1 + (g.total_length - l1) * Eigen::Vector3d(std::sin(th), 0.0, std::cos(th));
  EXPECT_LT((st.tip() - tip).norm(), 1e-8);
}

TEST(RodStatics, SecondSegmentStaysStraightWithoutItsTendons) {
  RobotGeometry g;
  for (int tendon = 0; tendon < g.tendons_per_segment; ++tendon) {
    RobotConfiguration c = RobotConfiguration::relaxed(g);
    c.tensions[0][tendon] = 2.5;
    const RodState st = solve_static(g, c);
    const auto start = static_cast<std::size_t>(g.steps_per_segment());
    for (std::size_t i = start; i < st.size(); ++i) {
      EXPECT_LT(body_curvature(g, st, i).norm(), 1e-9) << "node " << i;
      EXPECT_LT((st.R[i] - st.R[start]).norm(), 1e-9);
    }
  }
}

TEST(RodStatics, RotationsStayOrthonormal) {
  RobotGeometry g;
  for (std::uint64_t seed = 10; seed < 16; ++seed) {
    const RodState st = solve_static(g, random_config(seed, LoadMode::loaded));
    for (const auto& R : st.R) {
      EXPECT_LT((R.transpose() * R - Eigen::Matrix3d::Identity()).norm(), 1e-9);
      EXPECT_NEAR(R.determinant(), 1.0, 1e-9);
    }
  }
}

TEST(RodStatics, TipWrenchBoundaryConditionHolds) {
  RobotGeometry g;
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    const RobotConfiguration c = random_config(seed, seed % 2 ? LoadMode::loaded : LoadMode::free_space);
    const RodState st = solve_static(g, c);
    EXPECT_LT(st.residual, 1e-8);
    const double fs = g.bending_stiffness() / (g.total_length * g.total_length);
    EXPECT_LT((st.n.back() - c.tip_force).norm() / fs, 1e-8);
    EXPECT_LT((st.m.back() - c.tip_moment).norm() / (g.bending_stiffness() / g.total_length), 1e-8);
  }
}

TEST(RodStatics, MirroredTendonPatternReflectsCenterline) {
  RobotGeometry g;
  // partner tendon: angle -phi (mod 2 pi)
  auto partner = [&](int seg, int i) {
    for (int j = 0; j < g.tendons_per_segment; ++j) {
      const double d = std::remainder(g.tendon_angle(seg, j) + g.tendon_angle(seg, i), 2 * std::numbers::pi);
      if (std::abs(d) < 1e-12) return j;
    }
    ADD_FAILURE() << "tendon pattern has no mirror partner";
    return i;
  };
  for (std::uint64_t seed = 40; seed < 44; ++seed) {
    const RobotConfiguration c = random_config(seed, LoadMode::loaded);
    RobotConfiguration mc = c;
    for (int k = 0; k < g.segments; ++k)
      for (int i = 0; i < g.tendons_per_segment; ++i) mc.tensions[k][partner(k, i)] = c.tensions[k][i];
    // reflection y -> -y; moments are pseudovectors
    mc.tip_force = {c.tip_force.x(), -c.tip_force.y(), c.tip_force.z()};
    mc.tip_moment = {-c.tip_moment.x(), c.tip_moment.y(), -c.tip_moment.z()};
    const RodState a = solve_static(g, c), b = solve_static(g, mc);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const Eigen::Vector3d reflected(a.p[i].x(), -a.p[i].y(), a.p[i].z());
      worst = std::max(worst, (reflected - b.p[i]).norm());
    }
    EXPECT_LT(worst, 1e-8) << "seed " << seed;
  }
}

TEST(RodStatics, HalvingTheStepBarelyMovesTheTip) {
  RobotGeometry coarse, fine;
  fine.integration_steps = 2 * coarse.integration_steps;
  for (std::uint64_t seed = 50; seed < 54; ++seed) {
    const RobotConfiguration c = random_config(seed, LoadMode::loaded);
    const double d = (solve_static(coarse, c).tip() - solve_static(fine, c).tip()).norm();
    EXPECT_LT(d, 1e-7) << "seed " << seed;
  }
}

TEST(RodStatics, RejectsInvalidTensions) {
  RobotGeometry g;
  RobotConfiguration c = RobotConfiguration::relaxed(g);
  c.tensions[1][2] = -0.1;
  EXPECT_THROW(solve_static(g, c), InvalidInput);
  c.tensions[1][2] = g.max_tension * 1.01;
  EXPECT_THROW(solve_static(g, c), InvalidInput);
  c.tensions[1][2] = std::nan("");
  EXPECT_THROW(solve_static(g, c), InvalidInput);
  c = RobotConfiguration::relaxed(g);
  c.tensions.pop_back();
  EXPECT_THROW(solve_static(g, c), InvalidInput);
}

TEST(RodStatics, NonConvergenceCarriesResidual) {
  RobotGeometry g;
  SolverOptions opt;
  opt.max_iterations = 0;
  opt.min_load_increment = 0.2;
  RobotConfiguration c = RobotConfiguration::relaxed(g);
  c.tip_force = {0.1, 0.0, 0.0};
  try {
    solve_static(g, c, opt);
    FAIL() << "expected NonConvergence";
  } catch (const NonConvergence& e) {
    EXPECT_GT(e.residual(), opt.tolerance);
  }
}

TEST(Centerline, StraightRodThreePoints) {
  RobotGeometry g;
  const GroundTruthCenterline gt = sample_centerline(solve_static(g, RobotConfiguration::relaxed(g)), 3);
  ASSERT_EQ(gt.size(), 3);
  EXPECT_LT((gt.points.row(0) - Eigen::RowVector3d(0, 0, 0)).norm(), 1e-12);
  EXPECT_LT((gt.points.row(1) - Eigen::RowVector3d(0, 0, 0.125)).norm(), 1e-9);
  EXPECT_LT((gt.points.row(2) - Eigen::RowVector3d(0, 0, 0.250)).norm(), 1e-9);
}

TEST(Centerline, GridSizedSamplingReproducesGrid) {
  RobotGeometry g;
  const RodState st = solve_static(g, random_config(60, LoadMode::loaded));
  const GroundTruthCenterline gt = sample_centerline(st, static_cast<int>(st.size()));
  for (std::size_t i = 0; i < st.size(); ++i)
    EXPECT_LT((gt.points.row(static_cast<Eigen::Index>(i)).transpose() - st.p[i]).norm(), 1e-9);
}

TEST(Centerline, DefaultCountAndSpacing) {
  RobotGeometry g;
  const GroundTruthCenterline gt = sample_centerline(solve_static(g, random_config(61, LoadMode::free_space)));
  EXPECT_EQ(gt.size(), kGroundTruthPoints);
  EXPECT_DOUBLE_EQ(gt.spacing(), g.total_length / 250.0);
  // chord length never exceeds the arclength spacing (up to axial strain)
  for (Eigen::Index j = 1; j < gt.size(); ++j)
    EXPECT_LT((gt.points.row(j) - gt.points.row(j - 1)).norm(), gt.spacing() * (1 + 1e-3));
  EXPECT_THROW(sample_centerline(solve_static(g, RobotConfiguration::relaxed(g)), 1), InvalidInput);
}

TEST(Centerline, ResampleUniformOnGridAndOnArc) {
  RobotGeometry g;
  RobotConfiguration c = RobotConfiguration::relaxed(g);
  c.tip_moment = {0.008, 0, 0};
  const GroundTruthCenterline gt = sample_centerline(solve_static(g, c));
  std::vector<double> grid(250);
  for (int j = 0; j < 250; ++j) grid[j] = (j + 1) / 250.0;
  const PointMatrix same = resample_uniform(gt.points, grid);
  for (int j = 0; j < 250; ++j) EXPECT_LT((same.row(j) - gt.points.row(j + 1)).norm(), 1e-9);

  const double k = 0.008 / g.bending_stiffness();
  std::vector<double> odd;
  for (int j = 1; j <= 37; ++j) odd.push_back(j / 37.0);
  const PointMatrix pts = resample_uniform(gt.points, odd);
  for (std::size_t j = 0; j < odd.size(); ++j)
    EXPECT_LT((pts.row(static_cast<Eigen::Index>(j)).transpose() - arc_about_x(k, odd[j] * g.total_length)).norm(), 1e-6);

  const std::vector<double> bad{1.5};
  EXPECT_THROW(resample_uniform(gt.points, bad), InvalidInput);
}

TEST(Sampling, FreeSpaceHasZeroWrench) {
  RobotGeometry g;
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const RobotConfiguration c = sample_configuration(rng, LoadMode::free_space, g);
    EXPECT_FALSE(c.loaded());
    EXPECT_EQ(c.tip_force, Eigen::Vector3d::Zero());
    EXPECT_EQ(c.tip_moment, Eigen::Vector3d::Zero());
    for (const auto& seg : c.tensions)
      for (double t : seg) {
        EXPECT_GE(t, 0.0);
        EXPECT_LE(t, g.max_tension);
      }
  }
}

TEST(Sampling, LoadedRangesAreCoveredAndRespected) {
  RobotGeometry g;
  Rng rng(6);
  Eigen::Vector3d fmin = Eigen::Vector3d::Constant(1e9), fmax = -fmin, mmin = fmin, mmax = -fmin;
  for (int i = 0; i < 10000; ++i) {
    const RobotConfiguration c = sample_configuration(rng, LoadMode::loaded, g);
    fmin = fmin.cwiseMin(c.tip_force);
    fmax = fmax.cwiseMax(c.tip_force);
    mmin = mmin.cwiseMin(c.tip_moment);
    mmax = mmax.cwiseMax(c.tip_moment);
  }
  for (int k = 0; k < 3; ++k) {
    EXPECT_GE(fmin[k], -0.1);
    EXPECT_LE(fmin[k], -0.095);
    EXPECT_GE(fmax[k], 0.095);
    EXPECT_LE(fmax[k], 0.1);
    EXPECT_GE(mmin[k], -0.01);
    EXPECT_LE(mmin[k], -0.0095);
    EXPECT_GE(mmax[k], 0.0095);
    EXPECT_LE(mmax[k], 0.01);
  }
}

TEST(Sampling, FixedSeedGivesIdenticalSequence) {
  RobotGeometry g;
  Rng a(77), b(77);
  for (int i = 0; i < 50; ++i) {
    const auto ca = sample_configuration(a, LoadMode::loaded, g);
    const auto cb = sample_configuration(b, LoadMode::loaded, g);
    EXPECT_EQ(ca.tensions, cb.tensions);
    EXPECT_EQ(ca.tip_force, cb.tip_force);
    EXPECT_EQ(ca.tip_moment, cb.tip_moment);
  }
}

TEST(Geometry, JsonRoundTripAndPartialOverride) {
  RobotGeometry g;
  g.max_tension = 2.25;
  g.gravity = {0, 0, -9.81};
  const nlohmann::json j = g;
  const RobotGeometry back = j.get<RobotGeometry>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.digest(), g.digest());
  EXPECT_NE(RobotGeometry{}.digest(), g.digest());

  const RobotGeometry partial = nlohmann::json{{"backbone_radius", 0.6e-3}}.get<RobotGeometry>();
  EXPECT_DOUBLE_EQ(partial.backbone_radius, 0.6e-3);
  EXPECT_DOUBLE_EQ(partial.total_length, 0.250);
}

TEST(Geometry, Invariants) {
  RobotGeometry g;
  EXPECT_NO_THROW(g.validate());
  EXPECT_DOUBLE_EQ(g.segment_length() * g.segments, g.total_length);
  EXPECT_EQ(g.disk_count(), 20);
  for (int k = 0; k < g.segments; ++k)
    for (int i = 0; i < g.tendons_per_segment; ++i)
      EXPECT_NEAR(g.tendon_offset(k, i).norm(), g.tendon_pitch_radius, 1e-15);
  RobotGeometry bad = g;
  bad.tendon_pitch_radius = 0.011;
  EXPECT_THROW(bad.validate(), InvalidInput);
  bad = g;
  bad.integration_steps = 210;
  EXPECT_THROW(bad.validate(), InvalidInput);
  bad = g;
  bad.total_length = 0;
  EXPECT_THROW(bad.validate(), InvalidInput);
}

TEST(Geometry, ConfigurationJsonRoundTrip) {
  const RobotConfiguration c = random_config(9, LoadMode::loaded);
  const nlohmann::json j = c;
  const RobotConfiguration back = j.get<RobotConfiguration>();
  EXPECT_EQ(back.tensions, c.tensions);
  EXPECT_EQ(back.tip_force, c.tip_force);
  EXPECT_EQ(back.tip_moment, c.tip_moment);
}
