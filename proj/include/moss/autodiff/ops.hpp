#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <vector>

#include "moss/autodiff/tensor.hpp"

namespace moss::ad {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw InvalidInput(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

/// Wires a unary elementwise op whose local derivative depends on (x, y).
template <typename T, typename Deriv>
Tensor<T> record_unary(const Tensor<T>& x, Tensor<T> y, Deriv deriv) {
  if (Tape* tape = recording_tape(x)) {
    y.set_requires_grad();
    auto xs = x.storage();
    auto ys = y.storage();
    tape->push({x.id()}, y, [xs, ys, deriv] {
      if (ys->grad.empty() || !xs->requires_grad) return;
      auto& gx = xs->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ys->grad[i] * deriv(xs->data[i], ys->data[i]);
    });
  }
  return y;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor<T> y(a.shape(), std::move(out));
  if (Tape* tape = detail::recording_tape(a, b)) {
    y.set_requires_grad();
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    tape->push({a.id(), b.id()}, y, [as, bs, ys] {
      if (ys->grad.empty()) return;
      for (auto* s : {as.get(), bs.get()}) {
        if (!s->requires_grad) continue;
        auto& g = s->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i];
      }
    });
  }
  return y;
}

/// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor<T> y(a.shape(), std::move(out));
  if (Tape* tape = detail::recording_tape(a, b)) {
    y.set_requires_grad();
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    tape->push({a.id(), b.id()}, y, [as, bs, ys] {
      if (ys->grad.empty()) return;
      if (as->requires_grad) {
        auto& g = as->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i] * bs->data[i];
      }
      if (bs->requires_grad) {
        auto& g = bs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ys->grad[i] * as->data[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return detail::record_unary(x, Tensor<T>(x.shape(), std::move(out)), [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T negative_slope = T(0.01)) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : negative_slope * x[i];
  return detail::record_unary(x, Tensor<T>(x.shape(), std::move(out)),
                              [negative_slope](T xi, T) { return xi > T(0) ? T(1) : negative_slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Split on sign so exp never overflows.
    const T v = x[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return detail::record_unary(x, Tensor<T>(x.shape(), std::move(out)), [](T, T yi) { return yi * (T(1) - yi); });
}

/// Sum of all elements, as a scalar tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  Tensor<T> y = Tensor<T>::scalar(total);
  if (Tape* tape = detail::recording_tape(x)) {
    y.set_requires_grad();
    auto xs = x.storage(), ys = y.storage();
    tape->push({x.id()}, y, [xs, ys] {
      if (ys->grad.empty() || !xs->requires_grad) return;
      auto& g = xs->grad_buffer();
      for (auto& gi : g) gi += ys->grad[0];
    });
  }
  return y;
}

/// Sum of a list of scalars.
template <typename T>
Tensor<T> add_scalars(const std::vector<Tensor<T>>& terms) {
  if (terms.empty()) throw InvalidInput("add_scalars: empty list");
  T total = T(0);
  bool any = false;
  for (const auto& t : terms) {
    if (t.size() != 1) throw InvalidInput("add_scalars: non-scalar term " + to_string(t.shape()));
    total += t.item();
    any = any || t.requires_grad();
  }
  Tensor<T> y = Tensor<T>::scalar(total);
  Tape* tape = Tape::active();
  if (tape && any) {
    y.set_requires_grad();
    std::vector<std::uint64_t> ids;
    std::vector<std::shared_ptr<detail::Storage<T>>> inputs;
    for (const auto& t : terms) {
      ids.push_back(t.id());
      inputs.push_back(t.storage());
    }
    auto ys = y.storage();
    tape->push(std::move(ids), y, [inputs, ys] {
      if (ys->grad.empty()) return;
      for (const auto& s : inputs)
        if (s->requires_grad) s->grad_buffer()[0] += ys->grad[0];
    });
  }
  return y;
}

/// Same values, new shape.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw InvalidInput("reshape: " + to_string(x.shape()) + " cannot become " + to_string(shape));
  Tensor<T> y(std::move(shape), x.values());
  return detail::record_unary(x, std::move(y), [](T, T) { return T(1); });
}

/// Converts precision; gradients flow back in the source precision.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(x[i]);
  Tensor<To> y(x.shape(), std::move(out));
  if (Tape* tape = detail::recording_tape(x)) {
    y.set_requires_grad();
    auto xs = x.storage();
    auto ys = y.storage();
    tape->push({x.id()}, y, [xs, ys] {
      if (ys->grad.empty() || !xs->requires_grad) return;
      auto& g = xs->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += static_cast<From>(ys->grad[i]);
    });
  }
  return y;
}

/// Matrix product of two rank-2 tensors.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw InvalidInput("matmul: incompatible shapes " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  detail::MatrixMap<T>(out.data(), m, n).noalias() =
      detail::ConstMatrixMap<T>(a.data().data(), m, k) * detail::ConstMatrixMap<T>(b.data().data(), k, n);
  Tensor<T> y({m, n}, std::move(out));
  if (Tape* tape = detail::recording_tape(a, b)) {
    y.set_requires_grad();
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    tape->push({a.id(), b.id()}, y, [as, bs, ys, m, k, n] {
      if (ys->grad.empty()) return;
      detail::ConstMatrixMap<T> gy(ys->grad.data(), m, n);
      if (as->requires_grad)
        detail::MatrixMap<T>(as->grad_buffer().data(), m, k).noalias() +=
            gy * detail::ConstMatrixMap<T>(bs->data.data(), k, n).transpose();
      if (bs->requires_grad)
        detail::MatrixMap<T>(bs->grad_buffer().data(), k, n).noalias() +=
            detail::ConstMatrixMap<T>(as->data.data(), m, k).transpose() * gy;
    });
  }
  return y;
}

/// Pixels of sample `index` of an NCHW tensor as rows: [H*W, C].
template <typename T>
Tensor<T> pixel_rows(const Tensor<T>& x, std::size_t index) {
  if (x.rank() != 4) throw InvalidInput("pixel_rows: input must be NCHW, got " + to_string(x.shape()));
  if (index >= x.dim(0)) throw InvalidInput("pixel_rows: sample index out of range");
  const auto c = x.dim(1), plane = x.dim(2) * x.dim(3), offset = index * c * plane;
  std::vector<T> out(plane * c);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < plane; ++p) out[p * c + ch] = x[offset + ch * plane + p];
  Tensor<T> y({plane, c}, std::move(out));
  if (Tape* tape = detail::recording_tape(x)) {
    y.set_requires_grad();
    auto xs = x.storage(), ys = y.storage();
    tape->push({x.id()}, y, [xs, ys, c, plane, offset] {
      if (ys->grad.empty() || !xs->requires_grad) return;
      auto& g = xs->grad_buffer();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) g[offset + ch * plane + p] += ys->grad[p * c + ch];
    });
  }
  return y;
}

/// Row norms of a [P,C] tensor divided by their maximum: [P] in [0,1].
/// The gradient flows through the (first) maximizing row as well.
template <typename T>
Tensor<T> normalized_row_norms(const Tensor<T>& x) {
  if (x.rank() != 2 || x.dim(0) == 0) throw InvalidInput("normalized_row_norms: need a non-empty [P,C] tensor");
  const auto p = x.dim(0), c = x.dim(1);
  std::vector<T> norms(p);
  std::size_t arg = 0;
  for (std::size_t i = 0; i < p; ++i) {
    T s = T(0);
    for (std::size_t j = 0; j < c; ++j) s += x[i * c + j] * x[i * c + j];
    norms[i] = std::sqrt(s);
    if (norms[i] > norms[arg]) arg = i;
  }
  const T peak = norms[arg];
  if (!(peak > T(0))) throw NumericalFailure("normalized_row_norms: all rows are zero");
  std::vector<T> out(p);
  for (std::size_t i = 0; i < p; ++i) out[i] = norms[i] / peak;
  Tensor<T> y({p}, std::move(out));
  if (Tape* tape = detail::recording_tape(x)) {
    y.set_requires_grad();
    auto xs = x.storage(), ys = y.storage();
    tape->push({x.id()}, y, [xs, ys, norms = std::move(norms), arg, peak, p, c] {
      if (ys->grad.empty() || !xs->requires_grad) return;
      auto& g = xs->grad_buffer();
      // y_i = r_i / r_a: dy_i/dr_i = 1/r_a, dy_i/dr_a = -r_i/r_a^2
      T to_peak = T(0);
      for (std::size_t i = 0; i < p; ++i) {
        to_peak -= ys->grad[i] * norms[i] / (peak * peak);
        if (norms[i] > T(0))
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += ys->grad[i] / peak * xs->data[i * c + j] / norms[i];
      }
      for (std::size_t j = 0; j < c; ++j) g[arg * c + j] += to_peak * xs->data[arg * c + j] / peak;
    });
  }
  return y;
}

}  // namespace moss::ad
