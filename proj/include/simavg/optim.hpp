#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace simavg {

struct BfgsOptions {
  int max_iterations = 500;
  double objective_tol = 1e-8;
  double gradient_tol = 1e-6;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
};

namespace detail {

//! Central-difference gradient with per-coordinate step scaling. Falls back
//! to one-sided differences at points where the objective is infinite.
template <class F>
Eigen::VectorXd numeric_gradient(const F& f, const Eigen::VectorXd& x, double fx)
{
  constexpr double step0 = 6.0e-6; // ~cbrt(machine eps)
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index r = 0; r < x.size(); ++r) {
    const double step = step0 * (1.0 + std::abs(x[r]));
    xp[r] = x[r] + step;
    const double fp = f(xp);
    xp[r] = x[r] - step;
    const double fm = f(xp);
    xp[r] = x[r];
    if (std::isfinite(fp) && std::isfinite(fm)) {
      g[r] = (fp - fm) / (2.0 * step);
    } else if (std::isfinite(fp)) {
      g[r] = (fp - fx) / step;
    } else if (std::isfinite(fm)) {
      g[r] = (fx - fm) / step;
    } else {
      g[r] = 0.0;
    }
  }
  return g;
}

} // namespace detail

//! BFGS with numerically estimated gradients and a backtracking Armijo line
//! search. The objective may return +inf to mark infeasible points; the
//! line search backs away from them.
template <class F>
BfgsResult bfgs_minimize(const F& f, Eigen::VectorXd x0, const BfgsOptions& opt = {})
{
  BfgsResult res;
  res.x = std::move(x0);
  res.value = f(res.x);
  const Eigen::Index d = res.x.size();
  if (d == 0) {
    res.converged = true;
    return res;
  }
  if (!std::isfinite(res.value)) {
    return res; // caller should try another start
  }

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd g = detail::numeric_gradient(f, res.x, res.value);

  for (int iter = 1; iter <= opt.max_iterations; ++iter) {
    res.iterations = iter;
    if (g.lpNorm<Eigen::Infinity>() <= opt.gradient_tol * (1.0 + std::abs(res.value))) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd dir = -(H * g);
    double deriv = g.dot(dir);
    if (!(deriv < 0.0)) {
      H.setIdentity();
      dir = -g;
      deriv = g.dot(dir);
      if (!(deriv < 0.0)) {
        res.converged = true; // zero gradient
        break;
      }
    }

    double t = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + t * dir;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= res.value + 1e-4 * t * deriv) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      break; // cannot make progress along this direction
    }

    const Eigen::VectorXd s = x_new - res.x;
    const double f_prev = res.value;
    res.x = std::move(x_new);
    res.value = f_new;

    Eigen::VectorXd g_new = detail::numeric_gradient(f, res.x, res.value);
    const Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::VectorXd Hy = H * yv;
      H -= rho * (s * Hy.transpose() + Hy * s.transpose());
      H += rho * rho * (yv.dot(Hy) + sy) * (s * s.transpose());
    }
    g = std::move(g_new);

    if (std::abs(f_prev - res.value) <= opt.objective_tol * (1.0 + std::abs(res.value))) {
      res.converged = true;
      break;
    }
  }
  return res;
}

//! Golden-section search on [lo, hi]; returns the best probed point, which
//! keeps the result usable even when f is not exactly unimodal.
template <class F>
double golden_section_min(const F& f, double lo, double hi, double tol, int max_iter = 200)
{
  constexpr double invphi = 0.6180339887498949;
  double a = lo;
  double b = hi;
  double x1 = b - invphi * (b - a);
  double x2 = a + invphi * (b - a);
  double f1 = f(x1);
  double f2 = f(x2);
  double best_x = f1 <= f2 ? x1 : x2;
  double best_f = f1 <= f2 ? f1 : f2;

  for (int it = 0; it < max_iter && (b - a) > tol; ++it) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - invphi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invphi * (b - a);
      f2 = f(x2);
    }
    if (f1 < best_f) {
      best_f = f1;
      best_x = x1;
    }
    if (f2 < best_f) {
      best_f = f2;
      best_x = x2;
    }
  }
  return best_x;
}

} // namespace simavg
