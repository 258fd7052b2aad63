#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "moss/autodiff/tensor.hpp"

namespace moss::ad {

namespace detail {

/// Lower-triangular Cholesky factor of a small dense symmetric matrix.
template <typename T>
class Cholesky {
 public:
  Cholesky(const std::vector<T>& sym, std::size_t d) : d_(d), l_(d * d, T(0)) {
    for (std::size_t j = 0; j < d; ++j) {
      T diag = sym[j * d + j];
      for (std::size_t k = 0; k < j; ++k) diag -= l_[j * d + k] * l_[j * d + k];
      if (!(diag > T(0)) || !std::isfinite(diag))
        throw SingularSystem("solve_spd: matrix is not positive definite", j);
      const T ljj = std::sqrt(diag);
      l_[j * d + j] = ljj;
      for (std::size_t i = j + 1; i < d; ++i) {
        T v = sym[i * d + j];
        for (std::size_t k = 0; k < j; ++k) v -= l_[i * d + k] * l_[j * d + k];
        l_[i * d + j] = v / ljj;
      }
    }
  }

  /// Solves in place for a [d, k] right-hand side.
  void solve(std::vector<T>& rhs, std::size_t k) const {
    for (std::size_t col = 0; col < k; ++col) {
      for (std::size_t i = 0; i < d_; ++i) {
        T v = rhs[i * k + col];
        for (std::size_t j = 0; j < i; ++j) v -= l_[i * d_ + j] * rhs[j * k + col];
        rhs[i * k + col] = v / l_[i * d_ + i];
      }
      for (std::size_t ii = d_; ii-- > 0;) {
        T v = rhs[ii * k + col];
        for (std::size_t j = ii + 1; j < d_; ++j) v -= l_[j * d_ + ii] * rhs[j * k + col];
        rhs[ii * k + col] = v / l_[ii * d_ + ii];
      }
    }
  }

 private:
  std::size_t d_;
  std::vector<T> l_;
};

}  // namespace detail

/// Solves G X = Y for symmetric positive definite G via Cholesky.
///
/// G is symmetrized as (G + G^T)/2 before factorization, so the gradient with
/// respect to G is the symmetric part of -G^{-1} dX X^T.
template <typename T>
Tensor<T> solve_spd(const Tensor<T>& G, const Tensor<T>& Y) {
  if (G.rank() != 2 || G.dim(0) != G.dim(1)) throw InvalidInput("solve_spd: G must be square, got " + to_string(G.shape()));
  if (Y.rank() != 2 || Y.dim(0) != G.dim(0))
    throw InvalidInput("solve_spd: Y shape " + to_string(Y.shape()) + " incompatible with G " + to_string(G.shape()));
  const auto d = G.dim(0), k = Y.dim(1);
  std::vector<T> sym(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) sym[i * d + j] = T(0.5) * (G[i * d + j] + G[j * d + i]);
  detail::Cholesky<T> chol(sym, d);
  std::vector<T> x = Y.values();
  chol.solve(x, k);
  Tensor<T> X({d, k}, std::move(x));

  if (Tape* tape = detail::recording_tape(G, Y)) {
    X.set_requires_grad();
    auto gs = G.storage(), ysrc = Y.storage(), xs = X.storage();
    tape->push({G.id(), Y.id()}, X, [gs, ysrc, xs, chol = std::move(chol), d, k] {
      if (xs->grad.empty()) return;
      std::vector<T> gy = xs->grad;
      chol.solve(gy, k);
      if (ysrc->requires_grad) {
        auto& g = ysrc->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
      if (gs->requires_grad) {
        auto& g = gs->grad_buffer();
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < d; ++j) {
            T outer = T(0);
            for (std::size_t c = 0; c < k; ++c)
              outer += gy[i * k + c] * xs->data[j * k + c] + gy[j * k + c] * xs->data[i * k + c];
            g[i * d + j] -= T(0.5) * outer;
          }
      }
    });
  }
  return X;
}

}  // namespace moss::ad
