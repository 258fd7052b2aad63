#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "moss/autodiff/ops.hpp"

namespace moss::ad {

inline constexpr std::size_t kKernel = 3;

namespace detail {

struct ConvGeometry {
  std::size_t n, c, h, w, k, out_h, out_w, stride, padding;
  std::size_t patch() const { return c * kKernel * kKernel; }
  std::size_t out_plane() const { return out_h * out_w; }
};

/// In-order sum. Eigen's vectorized reductions start at an alignment-dependent
/// offset, which would make gradients depend on buffer addresses.
template <typename T>
T sequential_sum(const T* p, std::size_t count) {
  T acc = T(0);
  for (std::size_t i = 0; i < count; ++i) acc += p[i];
  return acc;
}

// col is [c*9, out_h*out_w] row-major.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const auto plane = g.out_plane();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    const T* src = image + ch * g.h * g.w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        T* dst = col + ((ch * kKernel + ky) * kKernel + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
          T* row = dst + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(row, row + g.out_w, T(0));
            continue;
          }
          const T* src_row = src + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
            row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : src_row[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* image) {
  const auto plane = g.out_plane();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    T* dst = image + ch * g.h * g.w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        const T* src = col + ((ch * kKernel + ky) * kKernel + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst_row = dst + static_cast<std::size_t>(iy) * g.w;
          const T* row = src + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst_row[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 3x3 cross-correlation over an NCHW batch. kernel is [K, C, 3, 3], bias [K].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride = 1,
                 std::size_t padding = 1) {
  if (x.rank() != 4) throw InvalidInput("conv2d: input must be NCHW, got " + to_string(x.shape()));
  if (kernel.rank() != 4 || kernel.dim(2) != kKernel || kernel.dim(3) != kKernel)
    throw InvalidInput("conv2d: kernel must be [K,C,3,3], got " + to_string(kernel.shape()));
  if (kernel.dim(1) != x.dim(1))
    throw InvalidInput("conv2d: input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                       std::to_string(kernel.dim(1)));
  if (bias.size() != kernel.dim(0)) throw InvalidInput("conv2d: bias length must equal output channels");
  if (stride == 0) throw InvalidInput("conv2d: stride must be positive");
  const auto h = x.dim(2), w = x.dim(3);
  if (h + 2 * padding < kKernel || w + 2 * padding < kKernel) throw InvalidInput("conv2d: input smaller than kernel");

  detail::ConvGeometry g{x.dim(0), x.dim(1), h, w, kernel.dim(0), (h + 2 * padding - kKernel) / stride + 1,
                         (w + 2 * padding - kKernel) / stride + 1, stride, padding};
  const auto plane = g.out_plane();
  std::vector<T> out(g.n * g.k * plane);
  std::vector<T> col(g.patch() * plane);
  detail::ConstMatrixMap<T> weights(kernel.data().data(), g.k, g.patch());
  for (std::size_t n = 0; n < g.n; ++n) {
    detail::im2col(x.data().data() + n * g.c * h * w, g, col.data());
    detail::MatrixMap<T> y(out.data() + n * g.k * plane, g.k, plane);
    y.noalias() = weights * detail::ConstMatrixMap<T>(col.data(), g.patch(), plane);
    for (std::size_t k = 0; k < g.k; ++k) y.row(static_cast<Eigen::Index>(k)).array() += bias[k];
  }
  Tensor<T> y({g.n, g.k, g.out_h, g.out_w}, std::move(out));

  if (Tape* tape = detail::recording_tape(x, kernel, bias)) {
    y.set_requires_grad();
    auto xs = x.storage(), ks = kernel.storage(), bs = bias.storage(), ys = y.storage();
    tape->push({x.id(), kernel.id(), bias.id()}, y, [xs, ks, bs, ys, g] {
      if (ys->grad.empty()) return;
      const auto plane = g.out_plane();
      std::vector<T> col(g.patch() * plane);
      detail::ConstMatrixMap<T> weights(ks->data.data(), g.k, g.patch());
      T* gk = ks->requires_grad ? ks->grad_buffer().data() : nullptr;
      T* gb = bs->requires_grad ? bs->grad_buffer().data() : nullptr;
      T* gx = xs->requires_grad ? xs->grad_buffer().data() : nullptr;
      for (std::size_t n = 0; n < g.n; ++n) {
        detail::ConstMatrixMap<T> gy(ys->grad.data() + n * g.k * plane, g.k, plane);
        if (gb)
          for (std::size_t k = 0; k < g.k; ++k) gb[k] += detail::sequential_sum(gy.data() + k * g.out_plane(), g.out_plane());
        if (gk) {
          detail::im2col(xs->data.data() + n * g.c * g.h * g.w, g, col.data());
          detail::MatrixMap<T>(gk, g.k, g.patch()).noalias() +=
              gy * detail::ConstMatrixMap<T>(col.data(), g.patch(), plane).transpose();
        }
        if (gx) {
          detail::MatrixMap<T>(col.data(), g.patch(), plane).noalias() = weights.transpose() * gy;
          detail::col2im_add(col.data(), g, gx + n * g.c * g.h * g.w);
        }
      }
    });
  }
  return y;
}

/// Pointwise convolution: kernel [K,C] (or [K,C,1,1]), bias [K].
template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  if (x.rank() != 4) throw InvalidInput("conv1x1: input must be NCHW, got " + to_string(x.shape()));
  const auto n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (kernel.size() == 0 || kernel.dim(0) == 0 || kernel.size() != kernel.dim(0) * c)
    throw InvalidInput("conv1x1: kernel " + to_string(kernel.shape()) + " does not match " + std::to_string(c) +
                       " input channels");
  const auto k = kernel.dim(0);
  if (bias.size() != k) throw InvalidInput("conv1x1: bias length must equal output channels");
  std::vector<T> out(n * k * plane);
  detail::ConstMatrixMap<T> weights(kernel.data().data(), k, c);
  for (std::size_t b = 0; b < n; ++b) {
    detail::MatrixMap<T> y(out.data() + b * k * plane, k, plane);
    y.noalias() = weights * detail::ConstMatrixMap<T>(x.data().data() + b * c * plane, c, plane);
    for (std::size_t o = 0; o < k; ++o) y.row(static_cast<Eigen::Index>(o)).array() += bias[o];
  }
  Tensor<T> y({n, k, x.dim(2), x.dim(3)}, std::move(out));

  if (Tape* tape = detail::recording_tape(x, kernel, bias)) {
    y.set_requires_grad();
    auto xs = x.storage(), ks = kernel.storage(), bs = bias.storage(), ys = y.storage();
    tape->push({x.id(), kernel.id(), bias.id()}, y, [xs, ks, bs, ys, n, c, k, plane] {
      if (ys->grad.empty()) return;
      T* gk = ks->requires_grad ? ks->grad_buffer().data() : nullptr;
      T* gb = bs->requires_grad ? bs->grad_buffer().data() : nullptr;
      T* gx = xs->requires_grad ? xs->grad_buffer().data() : nullptr;
      for (std::size_t b = 0; b < n; ++b) {
        detail::ConstMatrixMap<T> gy(ys->grad.data() + b * k * plane, k, plane);
        if (gb)
          for (std::size_t o = 0; o < k; ++o) gb[o] += detail::sequential_sum(gy.data() + o * plane, plane);
        if (gk)
          detail::MatrixMap<T>(gk, k, c).noalias() +=
              gy * detail::ConstMatrixMap<T>(xs->data.data() + b * c * plane, c, plane).transpose();
        if (gx)
          detail::MatrixMap<T>(gx + b * c * plane, c, plane).noalias() +=
              detail::ConstMatrixMap<T>(ks->data.data(), k, c).transpose() * gy;
      }
    });
  }
  return y;
}

/// 2x2 max pooling with stride 2.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x) {
  if (x.rank() != 4) throw InvalidInput("maxpool2: input must be NCHW, got " + to_string(x.shape()));
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw InvalidInput("maxpool2: spatial dims must be even, got " + to_string(x.shape()));
  const auto oh = h / 2, ow = w / 2;
  std::vector<T> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const T* src = x.data().data();
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const auto idx = p * h * w + (2 * oy + dy) * w + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        const auto o = p * oh * ow + oy * ow + ox;
        out[o] = src[best];
        argmax[o] = best;
      }
    }
  }
  Tensor<T> y({n, c, oh, ow}, std::move(out));
  if (Tape* tape = detail::recording_tape(x)) {
    y.set_requires_grad();
    auto xs = x.storage(), ys = y.storage();
    tape->push({x.id()}, y, [xs, ys, argmax = std::move(argmax)] {
      if (ys->grad.empty() || !xs->requires_grad) return;
      auto& g = xs->grad_buffer();
      for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += ys->grad[o];
    });
  }
  return y;
}

/// Depth-to-space with factor 2: [N,4C,H,W] -> [N,C,2H,2W].
/// Output (c, 2h+i, 2w+j) reads input channel 4c + 2i + j.
template <typename T>
Tensor<T> pixel_shuffle2(const Tensor<T>& x) {
  if (x.rank() != 4) throw InvalidInput("pixel_shuffle2: input must be NCHW, got " + to_string(x.shape()));
  if (x.dim(1) % 4 != 0) throw InvalidInput("pixel_shuffle2: channels must be divisible by 4, got " + to_string(x.shape()));
  const auto n = x.dim(0), c = x.dim(1) / 4, h = x.dim(2), w = x.dim(3);
  std::vector<std::size_t> source(x.size());
  std::vector<T> out(x.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t oy = 0; oy < 2 * h; ++oy)
        for (std::size_t ox = 0; ox < 2 * w; ++ox) {
          const auto in_ch = 4 * ch + 2 * (oy % 2) + (ox % 2);
          const auto src = ((b * 4 * c + in_ch) * h + oy / 2) * w + ox / 2;
          const auto dst = ((b * c + ch) * 2 * h + oy) * 2 * w + ox;
          out[dst] = x[src];
          source[dst] = src;
        }
  Tensor<T> y({n, c, 2 * h, 2 * w}, std::move(out));
  if (Tape* tape = detail::recording_tape(x)) {
    y.set_requires_grad();
    auto xs = x.storage(), ys = y.storage();
    tape->push({x.id()}, y, [xs, ys, source = std::move(source)] {
      if (ys->grad.empty() || !xs->requires_grad) return;
      auto& g = xs->grad_buffer();
      for (std::size_t i = 0; i < source.size(); ++i) g[source[i]] += ys->grad[i];
    });
  }
  return y;
}

/// Per-channel statistics tracked during training and used at inference.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// BatchNorm over (N, H, W) per channel. In training mode batch statistics are
/// used and the running statistics are updated in place; otherwise the running
/// statistics are used as constants.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                    const BatchNormOptions& opt = {}) {
  if (x.rank() != 4) throw InvalidInput("batchnorm: input must be NCHW, got " + to_string(x.shape()));
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.size() != c || beta.size() != c || stats.running_mean.size() != c || stats.running_var.size() != c)
    throw InvalidInput("batchnorm: per-channel parameters must have " + std::to_string(c) + " entries");
  if (opt.eps < 1e-5) throw InvalidInput("batchnorm: eps must be >= 1e-5");
  const auto count = n * hw;
  if (opt.training && count < 2) throw InvalidInput("batchnorm: training mode needs more than one value per channel");

  std::vector<T> mean(c), inv_std(c);
  if (opt.training) {
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data().data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = x.data().data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
      const double unbiased = ss / static_cast<double>(count - 1);
      rm[ch] = static_cast<T>((1.0 - opt.momentum) * rm[ch] + opt.momentum * mu);
      rv[ch] = static_cast<T>((1.0 - opt.momentum) * rv[ch] + opt.momentum * unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = stats.running_mean[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.running_var[ch]) + opt.eps));
    }
  }

  std::vector<T> xhat(x.size()), out(x.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const auto off = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[off + i] = (x[off + i] - mean[ch]) * inv_std[ch];
        out[off + i] = gamma[ch] * xhat[off + i] + beta[ch];
      }
    }
  Tensor<T> y(x.shape(), std::move(out));

  if (Tape* tape = detail::recording_tape(x, gamma, beta)) {
    y.set_requires_grad();
    auto xs = x.storage(), gs = gamma.storage(), bs = beta.storage(), ys = y.storage();
    const bool training = opt.training;
    tape->push({x.id(), gamma.id(), beta.id()}, y,
               [xs, gs, bs, ys, xhat = std::move(xhat), inv_std, n, c, hw, count, training] {
                 if (ys->grad.empty()) return;
                 const auto& gy = ys->grad;
                 std::vector<T> sum_gy(c, T(0)), sum_gy_xhat(c, T(0));
                 for (std::size_t b = 0; b < n; ++b)
                   for (std::size_t ch = 0; ch < c; ++ch) {
                     const auto off = (b * c + ch) * hw;
                     for (std::size_t i = 0; i < hw; ++i) {
                       sum_gy[ch] += gy[off + i];
                       sum_gy_xhat[ch] += gy[off + i] * xhat[off + i];
                     }
                   }
                 if (bs->requires_grad) {
                   auto& g = bs->grad_buffer();
                   for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_gy[ch];
                 }
                 if (gs->requires_grad) {
                   auto& g = gs->grad_buffer();
                   for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_gy_xhat[ch];
                 }
                 if (!xs->requires_grad) return;
                 auto& gx = xs->grad_buffer();
                 const T m = static_cast<T>(count);
                 for (std::size_t b = 0; b < n; ++b)
                   for (std::size_t ch = 0; ch < c; ++ch) {
                     const auto off = (b * c + ch) * hw;
                     const T k = gs->data[ch] * inv_std[ch];
                     if (training) {
                       for (std::size_t i = 0; i < hw; ++i)
                         gx[off + i] += k / m * (m * gy[off + i] - sum_gy[ch] - xhat[off + i] * sum_gy_xhat[ch]);
                     } else {
                       for (std::size_t i = 0; i < hw; ++i) gx[off + i] += k * gy[off + i];
                     }
                   }
               });
  }
  return y;
}

}  // namespace moss::ad
