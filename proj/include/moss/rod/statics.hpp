#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "moss/error.hpp"
#include "moss/rod/geometry.hpp"

namespace moss::rod {

struct SolverOptions {
  /// Target for the scaled tip-wrench residual.
  double tolerance = 1e-10;
  int max_iterations = 50;
  /// Relative central-difference step for the shooting Jacobian.
  double fd_step = 1e-6;
  /// Smallest load increment tried by the continuation fallback.
  double min_load_increment = 1.0 / 1024.0;
};

/// Solution of the static boundary value problem on the integration grid.
/// n and m are the backbone's internal force and moment; at a segment's
/// termination node they are stored with that segment's tendons released.
struct RodState {
  double length = 0.0;
  std::vector<double> s;
  std::vector<Eigen::Vector3d> p;
  std::vector<Eigen::Matrix3d> R;
  std::vector<Eigen::Vector3d> n, m;
  /// Centerline tangent p' approaching each node from below and from above;
  /// they differ only where tendons terminate.
  std::vector<Eigen::Vector3d> dp_in, dp_out;
  double residual = 0.0;
  int iterations = 0;

  std::size_t size() const { return s.size(); }
  const Eigen::Vector3d& tip() const { return p.back(); }
};

namespace detail {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

inline Eigen::Matrix3d hat(const Eigen::Vector3d& u) {
  Eigen::Matrix3d h;
  h << 0, -u.z(), u.y(), u.z(), 0, -u.x(), -u.y(), u.x(), 0;
  return h;
}

/// Newton-Schulz polar iteration; converges quadratically for near-rotations.
inline Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& R) {
  Eigen::Matrix3d Q = R;
  for (int i = 0; i < 6; ++i) {
    const Eigen::Matrix3d E = Q.transpose() * Q - Eigen::Matrix3d::Identity();
    if (E.cwiseAbs().maxCoeff() < 1e-15) break;
    Q = Q * (Eigen::Matrix3d::Identity() - 0.5 * E);
  }
  return Q;
}

/// Integration state. nt/mt are the resultants over the whole cross-section
/// (backbone plus the tendons passing through it), which tendon routing
/// leaves continuous.
struct Frame {
  Eigen::Vector3d p;
  Eigen::Matrix3d R;
  Eigen::Vector3d nt, mt;
};

struct Strains {
  Eigen::Vector3d v = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d u = Eigen::Vector3d::Zero();
};

struct Tendon {
  Eigen::Vector3d r;  // hole offset in the body frame
  double tension;
};

/// Tendons run parallel to the backbone at a fixed offset and load it
/// continuously along their routing; a segment's tendons end at its last disk.
class Shooter {
 public:
  Shooter(const RobotGeometry& g, const RobotConfiguration& c) : g_(g), c_(c) {
    const double A = g.area(), I = g.second_moment();
    kse_ = Eigen::Vector3d(g.shear_modulus * A, g.shear_modulus * A, g.youngs_modulus * A);
    kbt_ = Eigen::Vector3d(g.youngs_modulus * I, g.youngs_modulus * I, g.shear_modulus * g.polar_moment());
    const double EI = g.bending_stiffness(), L = g.total_length;
    force_scale_ = EI / (L * L);
    moment_scale_ = EI / L;
    f_dist_ = g.backbone_density * A * g.gravity;
    traj_.resize(g.integration_steps + 1);
    strains_.resize(g.integration_steps + 1);
  }

  double force_scale() const { return force_scale_; }
  double moment_scale() const { return moment_scale_; }

  /// Base resultants of the undeformed rod in equilibrium with the external loads.
  Vector6d straight_guess(double lambda) const {
    const Eigen::Vector3d e3 = Eigen::Vector3d::UnitZ();
    const double L = g_.total_length;
    const Eigen::Vector3d n0 = lambda * (c_.tip_force + L * f_dist_);
    const Eigen::Vector3d m0 = lambda * (c_.tip_moment + (L * e3).cross(c_.tip_force) + 0.5 * L * L * e3.cross(f_dist_));
    Vector6d x;
    x << n0 / force_scale_, m0 / moment_scale_;
    return x;
  }

  /// Integrates base to tip from the scaled base resultants x; returns the
  /// scaled tip residual. The trajectory of the last call is retained.
  Vector6d residual(const Vector6d& x, double lambda) {
    set_load(lambda);
    const int N = g_.integration_steps;
    const double h = g_.step_length();
    Frame y{Eigen::Vector3d::Zero(), Eigen::Matrix3d::Identity(), x.head<3>() * force_scale_, x.tail<3>() * moment_scale_};
    traj_[0] = y;
    Strains guess;
    for (int i = 0; i < N; ++i) {
      guess = strains(y, segment_of_interval(i), guess);
      strains_[i] = guess;
      y = rk4(y, h, segment_of_interval(i), guess);
      traj_[i + 1] = y;
    }
    Vector6d r;
    r << (y.nt - lambda * c_.tip_force) / force_scale_, (y.mt - lambda * c_.tip_moment) / moment_scale_;
    return r;
  }

  /// Backbone force/moment and tangent at a node, using the tendons active on
  /// the interval below (before) or above (after) it.
  struct NodeLoads {
    Eigen::Vector3d n, m, dp;
  };
  NodeLoads node_loads(int node, bool after) const {
    const int N = g_.integration_steps;
    const int interval = after ? std::min(node, N - 1) : std::max(node - 1, 0);
    int seg = segment_of_interval(interval);
    if (after && node == N) seg = g_.segments;  // everything released beyond the tip
    const Frame& y = traj_[node];
    const Strains st = strains(y, seg, strains_[std::min(node, N - 1)]);
    NodeLoads out{y.nt, y.mt, y.R * st.v};
    for (int k = seg; k < g_.segments; ++k)
      for (const Tendon& t : tendons_[k]) {
        const Eigen::Vector3d w = st.v + st.u.cross(t.r);
        const Eigen::Vector3d f = t.tension * (y.R * w.normalized());
        out.n -= f;
        out.m -= (y.R * t.r).cross(f);
      }
    return out;
  }

  const std::vector<Frame>& trajectory() const { return traj_; }

 private:
  int segment_of_interval(int i) const { return i / g_.steps_per_segment(); }

  void set_load(double lambda) {
    tendons_.assign(g_.segments, {});
    for (int k = 0; k < g_.segments; ++k)
      for (int j = 0; j < g_.tendons_per_segment; ++j)
        if (c_.tensions[k][j] != 0.0) tendons_[k].push_back({g_.tendon_offset(k, j), lambda * c_.tensions[k][j]});
    lambda_ = lambda;
  }

  /// Solves the constitutive law with tendon coupling for the body strains:
  ///   Kse (v - e3) + sum t g_i = R^T nt,  Kbt u + sum t r_i x g_i = R^T mt,
  /// with g_i the unit tendon tangent along v + u x r_i. Newton from `guess`.
  Strains strains(const Frame& y, int first_segment, Strains guess) const {
    const Eigen::Vector3d N = y.R.transpose() * y.nt, M = y.R.transpose() * y.mt;
    bool any = false;
    for (int k = first_segment; k < g_.segments; ++k) any = any || !tendons_[k].empty();
    if (!any) return {N.cwiseQuotient(kse_) + Eigen::Vector3d::UnitZ(), M.cwiseQuotient(kbt_)};

    Strains s = guess;
    for (int it = 0; it < 30; ++it) {
      Vector6d F;
      F << kse_.cwiseProduct(s.v - Eigen::Vector3d::UnitZ()) - N, kbt_.cwiseProduct(s.u) - M;
      Matrix6d J = Matrix6d::Zero();
      J.topLeftCorner<3, 3>() = kse_.asDiagonal();
      J.bottomRightCorner<3, 3>() = kbt_.asDiagonal();
      for (int k = first_segment; k < g_.segments; ++k)
        for (const Tendon& t : tendons_[k]) {
          const Eigen::Vector3d w = s.v + s.u.cross(t.r);
          const double wn = w.norm();
          const Eigen::Vector3d gdir = w / wn;
          const Eigen::Matrix3d P = (Eigen::Matrix3d::Identity() - gdir * gdir.transpose()) * (t.tension / wn);
          const Eigen::Matrix3d rh = hat(t.r);
          F.head<3>() += t.tension * gdir;
          F.tail<3>() += t.tension * t.r.cross(gdir);
          // dw/dv = I, dw/du = -hat(r)
          J.topLeftCorner<3, 3>() += P;
          J.topRightCorner<3, 3>() -= P * rh;
          J.bottomLeftCorner<3, 3>() += rh * P;
          J.bottomRightCorner<3, 3>() -= rh * P * rh;
        }
      const Vector6d d = J.partialPivLu().solve(-F);
      s.v += d.head<3>();
      s.u += d.tail<3>();
      if (d.head<3>().norm() <= 1e-15 * s.v.norm() && d.tail<3>().norm() <= 1e-15 * (1.0 + s.u.norm())) break;
    }
    return s;
  }

  Frame derivative(const Frame& y, int seg, Strains& guess) const {
    guess = strains(y, seg, guess);
    Frame d;
    d.p = y.R * guess.v;
    d.R = y.R * hat(guess.u);
    d.nt = -lambda_ * f_dist_;
    d.mt = -d.p.cross(y.nt);
    return d;
  }

  static Frame axpy(const Frame& y, double a, const Frame& d) {
    return {y.p + a * d.p, y.R + a * d.R, y.nt + a * d.nt, y.mt + a * d.mt};
  }

  Frame rk4(const Frame& y, double h, int seg, Strains guess) const {
    const Frame k1 = derivative(y, seg, guess);
    const Frame k2 = derivative(axpy(y, h / 2, k1), seg, guess);
    const Frame k3 = derivative(axpy(y, h / 2, k2), seg, guess);
    const Frame k4 = derivative(axpy(y, h, k3), seg, guess);
    Frame out;
    out.p = y.p + h / 6 * (k1.p + 2 * k2.p + 2 * k3.p + k4.p);
    out.R = orthonormalize(y.R + h / 6 * (k1.R + 2 * k2.R + 2 * k3.R + k4.R));
    out.nt = y.nt + h / 6 * (k1.nt + 2 * k2.nt + 2 * k3.nt + k4.nt);
    out.mt = y.mt + h / 6 * (k1.mt + 2 * k2.mt + 2 * k3.mt + k4.mt);
    return out;
  }

  const RobotGeometry& g_;
  const RobotConfiguration& c_;
  Eigen::Vector3d kse_, kbt_, f_dist_;
  double force_scale_ = 1.0, moment_scale_ = 1.0;
  double lambda_ = 1.0;
  std::vector<std::vector<Tendon>> tendons_;
  std::vector<Frame> traj_;
  std::vector<Strains> strains_;
};

struct NewtonResult {
  Vector6d x;
  double residual;
  int iterations;
  bool converged;
};

inline NewtonResult newton(Shooter& sh, Vector6d x, double lambda, const SolverOptions& opt) {
  Vector6d r = sh.residual(x, lambda);
  double rn = r.norm();
  int it = 0;
  while (std::isfinite(rn) && rn >= opt.tolerance && it < opt.max_iterations) {
    ++it;
    Matrix6d J;
    for (int k = 0; k < 6; ++k) {
      const double hk = opt.fd_step * std::max(1.0, std::abs(x[k]));
      Vector6d xp = x, xm = x;
      xp[k] += hk;
      xm[k] -= hk;
      J.col(k) = (sh.residual(xp, lambda) - sh.residual(xm, lambda)) / (2 * hk);
    }
    const Vector6d dx = J.fullPivLu().solve(-r);
    if (!dx.allFinite()) break;
    double alpha = 1.0;
    bool accepted = false;
    while (alpha > 1e-6) {
      const Vector6d xn = x + alpha * dx;
      const Vector6d rt = sh.residual(xn, lambda);
      const double rtn = rt.norm();
      if (std::isfinite(rtn) && rtn < (1.0 - 1e-4 * alpha) * rn) {
        x = xn;
        r = rt;
        rn = rtn;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
  }
  return {x, rn, it, std::isfinite(rn) && rn < opt.tolerance};
}

}  // namespace detail

/// Static Cosserat-rod equilibrium under tendon tensions and a tip wrench.
/// Shooting on the base resultants with damped Newton; falls back to load
/// continuation when the direct solve fails.
inline RodState solve_static(const RobotGeometry& g, const RobotConfiguration& c, const SolverOptions& opt = {}) {
  g.validate();
  c.validate(g);
  detail::Shooter sh(g, c);

  int total_iterations = 0;
  detail::NewtonResult res = detail::newton(sh, sh.straight_guess(1.0), 1.0, opt);
  total_iterations += res.iterations;
  if (!res.converged) {
    double lambda = 0.0, step = 0.25;
    detail::Vector6d x = detail::Vector6d::Zero();
    while (lambda < 1.0) {
      const double target = std::min(1.0, lambda + step);
      detail::NewtonResult sub = detail::newton(sh, x + sh.straight_guess(target) - sh.straight_guess(lambda), target, opt);
      total_iterations += sub.iterations;
      if (sub.converged) {
        lambda = target;
        x = sub.x;
        step = std::min(0.5, step * 1.5);
        res = sub;
      } else {
        step *= 0.5;
        if (step < opt.min_load_increment)
          throw NonConvergence("shooting failed at load fraction " + std::to_string(lambda), sub.residual);
      }
    }
  }
  // leave the converged trajectory in the shooter
  const detail::Vector6d r = sh.residual(res.x, 1.0);

  RodState st;
  st.length = g.total_length;
  st.residual = r.norm();
  st.iterations = total_iterations;
  const auto& traj = sh.trajectory();
  const std::size_t N = traj.size();
  st.s.resize(N);
  st.p.resize(N);
  st.R.resize(N);
  st.n.resize(N);
  st.m.resize(N);
  st.dp_in.resize(N);
  st.dp_out.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    const int node = static_cast<int>(i);
    st.s[i] = g.total_length * static_cast<double>(i) / static_cast<double>(N - 1);
    st.p[i] = traj[i].p;
    st.R[i] = traj[i].R;
    const auto after = sh.node_loads(node, true);
    st.n[i] = after.n;
    st.m[i] = after.m;
    st.dp_out[i] = after.dp;
    st.dp_in[i] = sh.node_loads(node, false).dp;
  }
  return st;
}

}  // namespace moss::rod
