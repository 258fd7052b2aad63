#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "moss/autodiff/grad_check.hpp"
#include "moss/curvefit/curvefit.hpp"

using namespace moss;
using namespace moss::ad;
using namespace moss::curvefit;

namespace {

constexpr double kLength = 0.25;

std::vector<double> uniform_values(std::size_t n, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Evaluates sum_k c[k] s^k.
double poly(const std::vector<double>& c, double s) {
  double acc = 0.0;
  for (std::size_t k = c.size(); k-- > 0;) acc = acc * s + c[k];
  return acc;
}

struct Samples {
  Tensor<double> s, w, b;
};

// Samples three coordinate polynomials at random arclengths.
Samples polynomial_samples(const std::vector<std::vector<double>>& coeffs, std::size_t count, std::mt19937_64& rng) {
  auto s = uniform_values(count, rng);
  std::vector<double> b(count * 3);
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t a = 0; a < 3; ++a) b[i * 3 + a] = poly(coeffs[a], s[i]);
  return {Tensor<double>({count}, s), Tensor<double>::full({count}, 1.0), Tensor<double>({count, 3}, b)};
}

CurveParams<double> fit(const Samples& x, int degree, double ridge) {
  return fit_weighted(build_design(x.s, degree), x.w, x.b, ridge);
}

// Centerline-like coordinates: a smooth bent curve plus 1 mm noise.
std::vector<double> centerline_like(const std::vector<double>& s, std::mt19937_64& rng) {
  auto noise = uniform_values(s.size() * 3, rng, -1e-3, 1e-3);
  std::vector<double> b(s.size() * 3);
  for (std::size_t i = 0; i < s.size(); ++i) {
    b[i * 3 + 0] = 0.05 * s[i] * s[i] + noise[i * 3];
    b[i * 3 + 1] = -0.03 * s[i] * s[i] * s[i] + noise[i * 3 + 1];
    b[i * 3 + 2] = kLength * s[i] - 0.02 * s[i] * s[i] + noise[i * 3 + 2];
  }
  return b;
}

}  // namespace

TEST(BuildDesign, PowerRows) {
  auto a0 = build_design(Tensor<double>({1}, {0.0}), 4);
  EXPECT_EQ(a0.values(), (std::vector<double>{1, 0, 0, 0, 0}));
  auto a1 = build_design(Tensor<double>({1}, {1.0}), 4);
  EXPECT_EQ(a1.values(), (std::vector<double>{1, 1, 1, 1, 1}));
  auto ah = build_design(Tensor<double>({1}, {0.5}), 2);
  EXPECT_EQ(ah.values(), (std::vector<double>{1, 0.5, 0.25}));
  EXPECT_THROW(build_design(Tensor<double>({1}, {0.5}), 0), InvalidInput);
}

TEST(FitWeighted, RecoversStraightLine) {
  std::mt19937_64 rng(1);
  auto x = polynomial_samples({{0.0}, {0.0}, {0.0, kLength}}, 64, rng);
  auto curve = fit(x, 4, 0.0);
  ASSERT_EQ(curve.degree, 4);
  const std::vector<double> expected_z{0.0, kLength, 0.0, 0.0, 0.0};
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_NEAR(curve.coefficients[k * 3 + 2], expected_z[k], 1e-9);
    EXPECT_NEAR(curve.coefficients[k * 3 + 0], 0.0, 1e-9);
  }
}

TEST(FitWeighted, ExactOnAnyPolynomialUpToDegree) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (int deg = 1; deg <= 4; ++deg) {
    std::vector<std::vector<double>> coeffs(3, std::vector<double>(5, 0.0));
    for (auto& c : coeffs)
      for (int k = 0; k <= deg; ++k) c[k] = normal(rng);
    auto x = polynomial_samples(coeffs, 80, rng);
    auto curve = fit(x, 4, 0.0);
    for (std::size_t k = 0; k < 5; ++k)
      for (std::size_t a = 0; a < 3; ++a) EXPECT_NEAR(curve.coefficients[k * 3 + a], coeffs[a][k], 1e-9);
  }
}

TEST(FitWeighted, DuplicatedHalfWeightsMatchSingleUnitWeights) {
  std::mt19937_64 rng(3);
  const std::size_t n = 40;
  auto s = uniform_values(n, rng);
  auto b = uniform_values(n * 3, rng, -0.1, 0.1);
  auto single = fit_weighted(build_design(Tensor<double>({n}, s), 4), Tensor<double>::full({n}, 1.0),
                             Tensor<double>({n, 3}, b), 0.0);
  std::vector<double> s2(s), b2(b);
  s2.insert(s2.end(), s.begin(), s.end());
  b2.insert(b2.end(), b.begin(), b.end());
  auto doubled = fit_weighted(build_design(Tensor<double>({2 * n}, s2), 4), Tensor<double>::full({2 * n}, 0.5),
                              Tensor<double>({2 * n, 3}, b2), 0.0);
  for (std::size_t i = 0; i < single.coefficients.size(); ++i)
    EXPECT_NEAR(doubled.coefficients[i], single.coefficients[i], 1e-9 * (1.0 + std::abs(single.coefficients[i])));
}

TEST(FitWeighted, IndicatorWeightsIgnoreCorruptedSamples) {
  std::mt19937_64 rng(4);
  const std::vector<std::vector<double>> coeffs{{0.01, 0.05, -0.02, 0.03, -0.01},
                                                {0.0, -0.04, 0.06, 0.01, 0.02},
                                                {0.0, 0.24, 0.01, -0.03, 0.005}};
  std::normal_distribution<double> noise(0.0, 1e-3);
  const std::size_t clean = 60, corrupt = 40;
  auto s = uniform_values(clean + corrupt, rng);
  std::vector<double> b((clean + corrupt) * 3), w(clean + corrupt);
  for (std::size_t i = 0; i < clean + corrupt; ++i) {
    const bool is_clean = i < clean;
    for (std::size_t a = 0; a < 3; ++a)
      b[i * 3 + a] = poly(coeffs[a], s[i]) + noise(rng) + (is_clean ? 0.0 : 0.5 * std::sin(7.0 * i + a));
    w[i] = is_clean ? 1.0 : 1e-12;
  }
  const auto n = clean + corrupt;
  auto weighted =
      fit_weighted(build_design(Tensor<double>({n}, s), 4), Tensor<double>({n}, w), Tensor<double>({n, 3}, b), 0.0);
  // oracle: plain unweighted fit on the clean subset only
  std::vector<double> sc(s.begin(), s.begin() + clean), bc(b.begin(), b.begin() + clean * 3);
  auto reference = fit_weighted(build_design(Tensor<double>({clean}, sc), 4), Tensor<double>::full({clean}, 1.0),
                                Tensor<double>({clean, 3}, bc), 0.0);
  for (std::size_t i = 0; i < weighted.coefficients.size(); ++i)
    EXPECT_NEAR(weighted.coefficients[i], reference.coefficients[i], 1e-6);
}

TEST(FitWeighted, WeightScalingInvariance) {
  std::mt19937_64 rng(5);
  const std::size_t n = 50;
  auto sv = uniform_values(n, rng);
  auto s = Tensor<double>({n}, sv);
  auto b = Tensor<double>({n, 3}, centerline_like(sv, rng));
  auto w = uniform_values(n, rng, 0.05, 1.0);
  auto base = fit_weighted(build_design(s, 4), Tensor<double>({n}, w), b, 0.0);
  for (double c : {1e-3, 0.37, 12.0, 1e4}) {
    std::vector<double> wc(w);
    for (auto& v : wc) v *= c;
    auto scaled = fit_weighted(build_design(s, 4), Tensor<double>({n}, wc), b, 0.0);
    for (std::size_t i = 0; i < base.coefficients.size(); ++i)
      EXPECT_NEAR(scaled.coefficients[i], base.coefficients[i], 1e-10);
  }
}

TEST(FitWeighted, PermutationInvariance) {
  std::mt19937_64 rng(6);
  const std::size_t n = 50;
  auto s = uniform_values(n, rng);
  auto b = centerline_like(s, rng);
  auto w = uniform_values(n, rng, 0.05, 1.0);
  auto base = fit_weighted(build_design(Tensor<double>({n}, s), 4), Tensor<double>({n}, w), Tensor<double>({n, 3}, b), 0.0);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> sp(n), bp(n * 3), wp(n);
  for (std::size_t i = 0; i < n; ++i) {
    sp[i] = s[perm[i]];
    wp[i] = w[perm[i]];
    for (std::size_t a = 0; a < 3; ++a) bp[i * 3 + a] = b[perm[i] * 3 + a];
  }
  auto permuted =
      fit_weighted(build_design(Tensor<double>({n}, sp), 4), Tensor<double>({n}, wp), Tensor<double>({n, 3}, bp), 0.0);
  for (std::size_t i = 0; i < base.coefficients.size(); ++i)
    EXPECT_NEAR(permuted.coefficients[i], base.coefficients[i], 1e-12);
}

TEST(FitWeighted, ZeroWeightsAreSingularEvenWithRidge) {
  auto s = Tensor<double>({6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  EXPECT_THROW(fit_weighted(build_design(s, 4), Tensor<double>::zeros({6}), Tensor<double>::zeros({6, 3}), 1e-8),
               SingularSystem);
}

TEST(FitWeighted, TooFewSamplesRejected) {
  auto s = Tensor<double>({3}, {0.1, 0.2, 0.3});
  EXPECT_THROW(fit_weighted(build_design(s, 4), Tensor<double>::full({3}, 1.0), Tensor<double>::zeros({3, 3})),
               InvalidInput);
}

TEST(QueryCurve, StraightLineQueries) {
  CurveParams<double> curve{Tensor<double>({5, 3}, {0, 0, 0, 0, 0, kLength, 0, 0, 0, 0, 0, 0, 0, 0, 0}), 4};
  auto pts = query_curve(curve, 10);
  ASSERT_EQ(pts.shape(), (Shape{10, 3}));
  for (std::size_t j = 0; j < 10; ++j) EXPECT_NEAR(pts[j * 3 + 2], kLength * (j + 1) / 10.0, 1e-15);
}

TEST(QueryCurve, ConstantCurve) {
  std::vector<double> c(15, 0.0);
  c[0] = 0.1;
  c[1] = -0.2;
  c[2] = 0.3;
  auto pts = query_curve(CurveParams<double>{Tensor<double>({5, 3}, c), 4}, 12);
  for (std::size_t j = 0; j < 12; ++j) {
    EXPECT_DOUBLE_EQ(pts[j * 3 + 0], 0.1);
    EXPECT_DOUBLE_EQ(pts[j * 3 + 1], -0.2);
    EXPECT_DOUBLE_EQ(pts[j * 3 + 2], 0.3);
  }
}

TEST(QueryCurve, LastRowIsTipOfOnes) {
  auto q = query_matrix<double>(10, 4);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(q[9 * 5 + k], 1.0);
  for (std::size_t j = 0; j < 10; ++j) {
    EXPECT_EQ(q[j * 5], 1.0);
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_GE(q[j * 5 + k], 0.0);
      EXPECT_LE(q[j * 5 + k], 1.0);
    }
  }
  EXPECT_DOUBLE_EQ(q[0 * 5 + 1], 0.1);
}

TEST(QueryCurve, BelowMinimumCountRejected) {
  CurveParams<double> curve{Tensor<double>::zeros({5, 3}), 4};
  EXPECT_THROW(query_curve(curve, 9), InvalidInput);
  EXPECT_NO_THROW(query_curve(curve, 10));
  CurveParams<double> quintic{Tensor<double>::zeros({6, 3}), 5};
  EXPECT_THROW(query_curve(quintic, 10), InvalidInput);
}

TEST(CurveFitHead, EndToEndGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const std::size_t n = 40;
  auto s = Tensor<double>({n}, uniform_values(n, rng, 0.02, 0.98));
  auto w = Tensor<double>({n}, uniform_values(n, rng, 0.1, 0.9));
  auto b = Tensor<double>({n, 3}, uniform_values(n * 3, rng, -0.1, 0.2));
  auto target = Tensor<double>({10, 3}, uniform_values(30, rng, -0.1, 0.2));
  auto f = [&] {
    auto curve = fit_weighted(build_design(s, 4), w, b, 1e-8);
    auto diff = add(query_curve(curve, 10), scale(target, -1.0));
    return sum(mul(diff, diff));
  };
  EXPECT_LT(grad_check(f, {s, w, b}), 1e-4);
}

TEST(CurveFitHead, RidgeGradientIncludesTraceTerm) {
  std::mt19937_64 rng(8);
  auto s = Tensor<double>({12}, uniform_values(12, rng));
  auto w = Tensor<double>({12}, uniform_values(12, rng, 0.2, 1.0));
  auto b = Tensor<double>({12, 3}, uniform_values(36, rng));
  // a large ridge makes the trace dependence visible to the FD oracle
  auto f = [&] { return sum(fit_weighted(build_design(s, 2), w, b, 0.3).coefficients); };
  EXPECT_LT(grad_check(f, {s, w, b}), 1e-5);
}

TEST(CurveJson, RoundTrip) {
  std::mt19937_64 rng(9);
  CurveParams<double> curve{Tensor<double>({5, 3}, uniform_values(15, rng)), 4};
  auto j = to_json(curve);
  EXPECT_EQ(j["degree"], 4);
  EXPECT_EQ(j["coefficients"]["x"].size(), 5u);
  auto back = curve_from_json<double>(j);
  EXPECT_EQ(back.degree, 4);
  EXPECT_EQ(back.coefficients.values(), curve.coefficients.values());
}
