#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "moss/autodiff/tensor.hpp"

namespace moss::ad {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// AdamW with decoupled weight decay and bias-corrected moments.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : opt_(options) {}

  const AdamWOptions& options() const { return opt_; }
  std::int64_t step_count() const { return step_; }

  /// Applies one update to every parameter that has a gradient. The whole step
  /// is rejected before any parameter changes if a gradient is non-finite.
  void step(std::vector<NamedTensor<T>>& params) {
    for (auto& p : params)
      if (p.tensor.has_grad() && !all_finite<T>(p.tensor.grad())) throw UpdateAborted(p.name);
    if (m_.empty()) {
      for (auto& p : params) {
        m_.emplace_back(p.tensor.size(), 0.0);
        v_.emplace_back(p.tensor.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw InvalidInput("AdamW: parameter list changed between steps");
    ++step_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& t = params[k].tensor;
      if (m_[k].size() != t.size()) throw InvalidInput("AdamW: state shape mismatch for " + params[k].name);
      if (!t.has_grad()) continue;
      auto data = t.mutable_data();
      auto grad = t.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = grad[i];
        double theta = data[i];
        theta -= opt_.lr * opt_.weight_decay * theta;
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
        data[i] = static_cast<T>(theta);
      }
    }
  }

 private:
  AdamWOptions opt_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace moss::ad
