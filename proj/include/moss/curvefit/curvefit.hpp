#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "moss/autodiff/linalg.hpp"
#include "moss/autodiff/ops.hpp"

namespace moss::curvefit {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

inline constexpr double kDefaultRelativeRidge = 1e-8;

/// Normal equations are accumulated one precision step up so their entries do
/// not depend on pixel order.
template <typename T>
using Accumulator = std::conditional_t<std::is_same_v<T, float>, double, long double>;

/// Polynomial centerline: column a of `coefficients` ([degree+1, 3]) holds the
/// monomial coefficients of coordinate a as a function of relative arclength.
template <typename T>
struct CurveParams {
  Tensor<T> coefficients;
  int degree = 0;

  std::size_t terms() const { return static_cast<std::size_t>(degree) + 1; }
};

/// Smallest query count accepted for a degree-n fit: twice the n+1 points the
/// polynomial needs, so M >= 10 at degree 4.
constexpr std::size_t min_query_points(int degree) { return 2 * (static_cast<std::size_t>(degree) + 1); }

/// Vandermonde matrix A[i][k] = s_i^k for k = 0..degree. `s` has shape [P] or [P,1].
template <typename T>
Tensor<T> build_design(const Tensor<T>& s, int degree) {
  if (degree < 1) throw InvalidInput("build_design: degree must be >= 1, got " + std::to_string(degree));
  if (!(s.rank() == 1 || (s.rank() == 2 && s.dim(1) == 1)))
    throw InvalidInput("build_design: arclength must be [P] or [P,1], got " + ad::to_string(s.shape()));
  const auto p = s.dim(0);
  const auto d = static_cast<std::size_t>(degree) + 1;
  std::vector<T> a(p * d);
  for (std::size_t i = 0; i < p; ++i) {
    T power = T(1);
    for (std::size_t k = 0; k < d; ++k) {
      a[i * d + k] = power;
      power *= s[i];
    }
  }
  Tensor<T> A({p, d}, std::move(a));
  if (Tape* tape = ad::detail::recording_tape(s)) {
    A.set_requires_grad();
    auto ss = s.storage(), as = A.storage();
    tape->push({s.id()}, A, [ss, as, p, d] {
      if (as->grad.empty() || !ss->requires_grad) return;
      auto& g = ss->grad_buffer();
      for (std::size_t i = 0; i < p; ++i) {
        T acc = T(0);
        // d(s^k)/ds = k s^(k-1) = k * A[i][k-1]
        for (std::size_t k = 1; k < d; ++k) acc += as->grad[i * d + k] * static_cast<T>(k) * as->data[i * d + k - 1];
        g[i] += acc;
      }
    });
  }
  return A;
}

/// A^T diag(w) A for A [P,d] and weights [P] (or [P,1]).
template <typename T>
Tensor<T> weighted_gram(const Tensor<T>& A, const Tensor<T>& w) {
  if (A.rank() != 2 || w.size() != A.dim(0))
    throw InvalidInput("weighted_gram: weights " + ad::to_string(w.shape()) + " do not match rows of " +
                       ad::to_string(A.shape()));
  using Acc = Accumulator<T>;
  const auto p = A.dim(0), d = A.dim(1);
  std::vector<Acc> acc(d * d, Acc(0));
  for (std::size_t i = 0; i < p; ++i) {
    const T* row = A.data().data() + i * d;
    const Acc wi = w[i];
    for (std::size_t k = 0; k < d; ++k) {
      const Acc wk = wi * row[k];
      for (std::size_t l = k; l < d; ++l) acc[k * d + l] += wk * row[l];
    }
  }
  std::vector<T> g(d * d);
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t l = 0; l < d; ++l) g[k * d + l] = static_cast<T>(k <= l ? acc[k * d + l] : acc[l * d + k]);
  Tensor<T> G({d, d}, std::move(g));
  if (Tape* tape = ad::detail::recording_tape(A, w)) {
    G.set_requires_grad();
    auto as = A.storage(), ws = w.storage(), gs = G.storage();
    tape->push({A.id(), w.id()}, G, [as, ws, gs, p, d] {
      if (gs->grad.empty()) return;
      // symmetric part of the upstream gradient
      std::vector<T> sym(d * d);
      for (std::size_t k = 0; k < d; ++k)
        for (std::size_t l = 0; l < d; ++l) sym[k * d + l] = gs->grad[k * d + l] + gs->grad[l * d + k];
      T* ga = as->requires_grad ? as->grad_buffer().data() : nullptr;
      T* gw = ws->requires_grad ? ws->grad_buffer().data() : nullptr;
      std::vector<T> tmp(d);
      for (std::size_t i = 0; i < p; ++i) {
        const T* row = as->data.data() + i * d;
        for (std::size_t k = 0; k < d; ++k) {
          T acc = T(0);
          for (std::size_t l = 0; l < d; ++l) acc += sym[k * d + l] * row[l];
          tmp[k] = acc;  // (dG + dG^T) a_i
        }
        if (ga)
          for (std::size_t k = 0; k < d; ++k) ga[i * d + k] += ws->data[i] * tmp[k];
        if (gw) {
          T acc = T(0);
          for (std::size_t k = 0; k < d; ++k) acc += row[k] * tmp[k];
          gw[i] += T(0.5) * acc;
        }
      }
    });
  }
  return G;
}

/// A^T diag(w) B for A [P,d], weights [P], B [P,c].
template <typename T>
Tensor<T> weighted_cross(const Tensor<T>& A, const Tensor<T>& w, const Tensor<T>& B) {
  if (A.rank() != 2 || B.rank() != 2 || w.size() != A.dim(0) || B.dim(0) != A.dim(0))
    throw InvalidInput("weighted_cross: incompatible shapes " + ad::to_string(A.shape()) + ", " +
                       ad::to_string(w.shape()) + ", " + ad::to_string(B.shape()));
  using Acc = Accumulator<T>;
  const auto p = A.dim(0), d = A.dim(1), c = B.dim(1);
  std::vector<Acc> acc(d * c, Acc(0));
  for (std::size_t i = 0; i < p; ++i) {
    const T* arow = A.data().data() + i * d;
    const T* brow = B.data().data() + i * c;
    for (std::size_t k = 0; k < d; ++k) {
      const Acc wk = static_cast<Acc>(w[i]) * arow[k];
      for (std::size_t j = 0; j < c; ++j) acc[k * c + j] += wk * brow[j];
    }
  }
  Tensor<T> Y({d, c}, std::vector<T>(acc.begin(), acc.end()));
  if (Tape* tape = ad::detail::recording_tape(A, w, B)) {
    Y.set_requires_grad();
    auto as = A.storage(), ws = w.storage(), bs = B.storage(), ys = Y.storage();
    tape->push({A.id(), w.id(), B.id()}, Y, [as, ws, bs, ys, p, d, c] {
      if (ys->grad.empty()) return;
      const auto& gy = ys->grad;
      T* ga = as->requires_grad ? as->grad_buffer().data() : nullptr;
      T* gw = ws->requires_grad ? ws->grad_buffer().data() : nullptr;
      T* gb = bs->requires_grad ? bs->grad_buffer().data() : nullptr;
      std::vector<T> gyb(d);
      for (std::size_t i = 0; i < p; ++i) {
        const T* arow = as->data.data() + i * d;
        const T* brow = bs->data.data() + i * c;
        const T wi = ws->data[i];
        for (std::size_t k = 0; k < d; ++k) {
          T acc = T(0);
          for (std::size_t j = 0; j < c; ++j) acc += gy[k * c + j] * brow[j];
          gyb[k] = acc;  // (dY b_i)_k
        }
        if (ga)
          for (std::size_t k = 0; k < d; ++k) ga[i * d + k] += wi * gyb[k];
        if (gw) {
          T acc = T(0);
          for (std::size_t k = 0; k < d; ++k) acc += arow[k] * gyb[k];
          gw[i] += acc;
        }
        if (gb)
          for (std::size_t j = 0; j < c; ++j) {
            T acc = T(0);
            for (std::size_t k = 0; k < d; ++k) acc += arow[k] * gy[k * c + j];
            gb[i * c + j] += wi * acc;
          }
      }
    });
  }
  return Y;
}

/// G + relative * trace(G)/d * I. The trace term is differentiated too.
template <typename T>
Tensor<T> add_trace_ridge(const Tensor<T>& G, T relative) {
  if (G.rank() != 2 || G.dim(0) != G.dim(1)) throw InvalidInput("add_trace_ridge: G must be square");
  const auto d = G.dim(0);
  T trace = T(0);
  for (std::size_t k = 0; k < d; ++k) trace += G[k * d + k];
  const T lambda = relative * trace / static_cast<T>(d);
  std::vector<T> out = G.values();
  for (std::size_t k = 0; k < d; ++k) out[k * d + k] += lambda;
  Tensor<T> R({d, d}, std::move(out));
  if (Tape* tape = ad::detail::recording_tape(G)) {
    R.set_requires_grad();
    auto gs = G.storage(), rs = R.storage();
    tape->push({G.id()}, R, [gs, rs, d, relative] {
      if (rs->grad.empty() || !gs->requires_grad) return;
      auto& g = gs->grad_buffer();
      T diag = T(0);
      for (std::size_t k = 0; k < d; ++k) diag += rs->grad[k * d + k];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += rs->grad[i];
      for (std::size_t k = 0; k < d; ++k) g[k * d + k] += relative / static_cast<T>(d) * diag;
    });
  }
  return R;
}

/// Weighted least-squares polynomial fit: solves
/// (A^T S A + lambda I) w = A^T S B with S = diag(weights) and
/// lambda = relative_ridge * trace(A^T S A) / (n+1).
template <typename T>
CurveParams<T> fit_weighted(const Tensor<T>& A, const Tensor<T>& weights, const Tensor<T>& coords,
                            double relative_ridge = kDefaultRelativeRidge) {
  if (A.rank() != 2) throw InvalidInput("fit_weighted: design matrix must be rank 2");
  if (A.dim(0) < A.dim(1))
    throw InvalidInput("fit_weighted: need at least " + std::to_string(A.dim(1)) + " samples, got " +
                       std::to_string(A.dim(0)));
  if (relative_ridge < 0.0) throw InvalidInput("fit_weighted: ridge must be non-negative");
  auto G = weighted_gram(A, weights);
  if (relative_ridge > 0.0) G = add_trace_ridge(G, static_cast<T>(relative_ridge));
  auto Y = weighted_cross(A, weights, coords);
  return {ad::solve_spd(G, Y), static_cast<int>(A.dim(1)) - 1};
}

/// P_q with row j-1 = ((j/M)^0, ..., (j/M)^n) for j = 1..M; relative arclength
/// 0 (the base) is never queried and the last row is the tip.
template <typename T>
Tensor<T> query_matrix(std::size_t count, int degree) {
  const auto d = static_cast<std::size_t>(degree) + 1;
  std::vector<T> q(count * d);
  for (std::size_t j = 1; j <= count; ++j) {
    const T s = static_cast<T>(j) / static_cast<T>(count);
    T power = T(1);
    for (std::size_t k = 0; k < d; ++k) {
      q[(j - 1) * d + k] = power;
      power *= s;
    }
  }
  return Tensor<T>({count, d}, std::move(q));
}

/// M evenly spaced centerline points ([M,3]) at relative arclengths j/M.
template <typename T>
Tensor<T> query_curve(const CurveParams<T>& curve, std::size_t count) {
  if (count < min_query_points(curve.degree))
    throw InvalidInput("query_curve: M = " + std::to_string(count) + " is below the minimum " +
                       std::to_string(min_query_points(curve.degree)) + " for degree " + std::to_string(curve.degree));
  return ad::matmul(query_matrix<T>(count, curve.degree), curve.coefficients);
}

template <typename T>
nlohmann::json to_json(const CurveParams<T>& curve) {
  nlohmann::json j;
  j["degree"] = curve.degree;
  const auto d = curve.terms();
  const char* axes[] = {"x", "y", "z"};
  for (std::size_t a = 0; a < 3; ++a) {
    std::vector<double> column(d);
    for (std::size_t k = 0; k < d; ++k) column[k] = static_cast<double>(curve.coefficients[k * 3 + a]);
    j["coefficients"][axes[a]] = column;
  }
  return j;
}

template <typename T>
CurveParams<T> curve_from_json(const nlohmann::json& j) {
  CurveParams<T> curve;
  curve.degree = j.at("degree").get<int>();
  if (curve.degree < 1) throw InvalidInput("curve JSON: degree must be >= 1");
  const auto d = curve.terms();
  std::vector<T> coeffs(d * 3);
  const char* axes[] = {"x", "y", "z"};
  for (std::size_t a = 0; a < 3; ++a) {
    const auto column = j.at("coefficients").at(axes[a]).get<std::vector<double>>();
    if (column.size() != d) throw InvalidInput(std::string("curve JSON: wrong coefficient count for ") + axes[a]);
    for (std::size_t k = 0; k < d; ++k) coeffs[k * 3 + a] = static_cast<T>(column[k]);
  }
  curve.coefficients = Tensor<T>({d, 3}, std::move(coeffs));
  return curve;
}

}  // namespace moss::curvefit
