#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "moss/autodiff/tensor.hpp"

namespace moss::ad {

struct GradCheckOptions {
  double step = 1e-4;
  /// Leaves larger than this are probed along random directions instead of
  /// coordinate by coordinate.
  std::size_t max_coordinates = 256;
  std::size_t directions = 6;
  std::uint64_t seed = 1234;
};

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` must rebuild its graph from the leaves on every call. Coordinate checks
/// report ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf)
/// per leaf; directional checks report the same ratio over the set of random
/// unit directions d_r: max_r |g.d_r - fd_r| / max_r max(|g.d_r|, |fd_r|).
/// The returned value is the worst over all leaves.
inline double grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> leaves,
                         const GradCheckOptions& opt = {}) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad();
    leaf.zero_grad();
  }
  {
    Tape tape;
    Tape::Scope scope(tape);
    auto loss = f();
    tape.backward(loss);
  }
  auto eval = [&] { return f().item(); };

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (auto& leaf : leaves) {
    std::vector<double> analytic(leaf.size(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    auto data = leaf.mutable_data();
    const double h = opt.step;
    if (leaf.size() <= opt.max_coordinates) {
      double diff = 0.0, scale_a = 0.0, scale_n = 0.0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double orig = data[i];
        data[i] = orig + h;
        const double fp = eval();
        data[i] = orig - h;
        const double fm = eval();
        data[i] = orig;
        const double numeric = (fp - fm) / (2 * h);
        diff = std::max(diff, std::abs(numeric - analytic[i]));
        scale_a = std::max(scale_a, std::abs(analytic[i]));
        scale_n = std::max(scale_n, std::abs(numeric));
      }
      const double denom = std::max({scale_a, scale_n, 1e-12});
      worst = std::max(worst, diff / denom);
    } else {
      const std::vector<double> orig(data.begin(), data.end());
      double diff = 0.0, scale = 0.0;
      for (std::size_t r = 0; r < opt.directions; ++r) {
        std::vector<double> dir(orig.size());
        double norm = 0.0;
        for (auto& d : dir) {
          d = normal(rng);
          norm += d * d;
        }
        norm = std::sqrt(norm);
        double directional = 0.0;
        for (std::size_t i = 0; i < dir.size(); ++i) {
          dir[i] /= norm;
          directional += dir[i] * analytic[i];
        }
        for (std::size_t i = 0; i < dir.size(); ++i) data[i] = orig[i] + h * dir[i];
        const double fp = eval();
        for (std::size_t i = 0; i < dir.size(); ++i) data[i] = orig[i] - h * dir[i];
        const double fm = eval();
        std::copy(orig.begin(), orig.end(), data.begin());
        const double numeric = (fp - fm) / (2 * h);
        diff = std::max(diff, std::abs(numeric - directional));
        scale = std::max({scale, std::abs(numeric), std::abs(directional)});
      }
      worst = std::max(worst, diff / std::max(scale, 1e-12));
    }
  }
  return worst;
}

}  // namespace moss::ad
