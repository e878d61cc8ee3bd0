#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "simavg/data.hpp"
#include "simavg/errors.hpp"

namespace simavg {

inline constexpr double inv_sqrt_two_pi = 0.3989422804014326779;

inline double gaussian_kernel(double u)
{
  return std::exp(-0.5 * u * u) * inv_sqrt_two_pi;
}

struct Bandwidth {
  double h = 0.0;     //!< smoothing scale on the index
  double kappa = 1.0; //!< scale factor of the n-dependent rule
};

//! h = kappa * n^(-1/5) * log(n)^(-1/6)
inline Bandwidth bandwidth_for(double kappa, Eigen::Index n)
{
  if (kappa <= 0.0) {
    throw std::invalid_argument("bandwidth scale kappa must be positive");
  }
  if (n < 2) {
    throw std::invalid_argument("bandwidth rule needs n >= 2");
  }
  const double nn = static_cast<double>(n);
  return {kappa * std::pow(nn, -0.2) * std::pow(std::log(nn), -1.0 / 6.0), kappa};
}

inline std::vector<double> default_kappa_grid()
{
  return {0.5, 1.0, 1.5, 2.0, 3.0};
}

enum class SmootherKind { Full, LeaveOneOut, LeaveBlockOut };

struct SmootherMode {
  SmootherKind kind = SmootherKind::Full;
  std::optional<BlockPartition> partition; //!< LeaveBlockOut only

  static SmootherMode full() { return {SmootherKind::Full, std::nullopt}; }
  static SmootherMode leave_one_out() { return {SmootherKind::LeaveOneOut, std::nullopt}; }
  static SmootherMode leave_block_out(const BlockPartition& p)
  {
    return {SmootherKind::LeaveBlockOut, p};
  }
};

//! Row-stochastic matrix of normalized kernel weights on the fitted index.
struct SmootherMatrix {
  Eigen::MatrixXd W;
  SmootherMode mode;
};

namespace detail {

// Eigen's vectorized exp clamps very negative arguments to a denormal
// instead of underflowing; weights past this point must be exact zeros or
// far-away points all pick up the same spurious mass.
inline constexpr double kernel_underflow_arg = -708.0;

//! In-place unnormalized Gaussian weights for scaled differences t:
//! t <- exp(-t^2/2), with true underflow to exact zero.
inline void gaussian_weights_into(Eigen::ArrayXd& t)
{
  t = -0.5 * t.square();
  t = (t > kernel_underflow_arg).select(t.exp(), 0.0);
}

//! Unnormalized Gaussian weights exp(-((v_i - v_j)/h)^2 / 2), built column
//! by column so Eigen can vectorize the exp.
inline void kernel_columns(const Eigen::VectorXd& v, double h, Eigen::MatrixXd& K)
{
  const Eigen::Index n = v.size();
  K.resize(n, n);
  const double inv_h = 1.0 / h;
  Eigen::ArrayXd t(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    t = (v.array() - v[j]) * inv_h;
    gaussian_weights_into(t);
    K.col(j) = t;
  }
}

} // namespace detail

inline SmootherMatrix smoother_matrix(const Eigen::MatrixXd& X_s,
                                      const Eigen::VectorXd& beta,
                                      const Bandwidth& bw,
                                      const SmootherMode& mode)
{
  if (beta.size() != X_s.cols()) {
    throw std::invalid_argument("smoother: coefficient length must match covariate count");
  }
  if (bw.h <= 0.0) {
    throw std::invalid_argument("smoother: bandwidth must be positive");
  }
  const Eigen::Index n = X_s.rows();
  const Eigen::VectorXd v = X_s * beta;

  Eigen::MatrixXd K;
  detail::kernel_columns(v, bw.h, K);

  switch (mode.kind) {
    case SmootherKind::Full:
      break;
    case SmootherKind::LeaveOneOut:
      K.diagonal().setZero();
      break;
    case SmootherKind::LeaveBlockOut: {
      if (!mode.partition) {
        throw std::invalid_argument("smoother: leave-block-out mode needs a partition");
      }
      const BlockPartition& part = *mode.partition;
      if (part.n() != n) {
        throw std::invalid_argument("smoother: partition size must match data");
      }
      if (part.degenerate()) {
        throw std::invalid_argument("smoother: leave-block-out needs at least two blocks");
      }
      for (Eigen::Index j = 0; j < part.block_count(); ++j) {
        const Eigen::Index b0 = part.block_begin(j);
        const Eigen::Index len = part.block_length(j);
        K.block(b0, b0, len, len).setZero();
      }
      break;
    }
  }

  const Eigen::VectorXd row_sums = K.rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (row_sums[i] == 0.0) {
      throw DegenerateRowError(i);
    }
  }
  K.array().colwise() /= row_sums.array();
  return {std::move(K), mode};
}

inline Eigen::VectorXd fitted_means(const SmootherMatrix& S, const Eigen::VectorXd& y)
{
  if (S.W.cols() != y.size()) {
    throw std::invalid_argument("fitted_means: dimension mismatch");
  }
  return S.W * y;
}

//! Gradient with respect to beta of the full-smoother Nadaraya-Watson
//! estimate at one observation, using the Gaussian kernel's derivative.
inline Eigen::VectorXd link_derivative(const Eigen::MatrixXd& X_s,
                                       const Eigen::VectorXd& beta,
                                       const Bandwidth& bw,
                                       const Eigen::VectorXd& y,
                                       Eigen::Index at_row)
{
  const Eigen::Index n = X_s.rows();
  if (beta.size() != X_s.cols() || y.size() != n) {
    throw std::invalid_argument("link_derivative: dimension mismatch");
  }
  if (at_row < 0 || at_row >= n) {
    throw std::invalid_argument("link_derivative: row out of range");
  }
  if (bw.h <= 0.0) {
    throw std::invalid_argument("link_derivative: bandwidth must be positive");
  }

  const Eigen::VectorXd v = X_s * beta;
  const double inv_h = 1.0 / bw.h;
  const Eigen::ArrayXd d = v[at_row] - v.array();
  Eigen::ArrayXd u = d * inv_h;
  detail::gaussian_weights_into(u);

  const double denom = u.sum();
  if (denom == 0.0) {
    throw DegenerateRowError(at_row);
  }
  const double numer = (u * y.array()).sum();

  // c_j = d u_j / d(index gap) collapsed onto covariate differences
  const Eigen::ArrayXd c = u * (-d) * (inv_h * inv_h);
  const double s0 = c.sum();
  const double s1 = (c * y.array()).sum();
  const Eigen::VectorXd w0 = X_s.transpose() * c.matrix();
  const Eigen::VectorXd w1 = X_s.transpose() * (c * y.array()).matrix();

  const Eigen::VectorXd xi = X_s.row(at_row).transpose();
  return ((xi * s1 - w1) * denom - (xi * s0 - w0) * numer) / (denom * denom);
}

//! Picks the kappa in the grid whose leave-block-out smoother has the
//! smallest squared prediction error at the given coefficients. Grid points
//! whose smoother degenerates are skipped; ties go to the smaller kappa.
inline Bandwidth select_bandwidth(const Dataset& data,
                                  const CandidateSpec& spec,
                                  const Eigen::VectorXd& beta,
                                  const std::vector<double>& kappa_grid,
                                  const BlockPartition& partition)
{
  if (kappa_grid.empty()) {
    throw std::invalid_argument("select_bandwidth: empty kappa grid");
  }
  for (double k : kappa_grid) {
    if (k <= 0.0) {
      throw std::invalid_argument("select_bandwidth: kappa values must be positive");
    }
  }
  std::vector<double> grid = kappa_grid;
  std::sort(grid.begin(), grid.end());

  const Eigen::MatrixXd Xs = data.columns(spec.indices);
  bool found = false;
  Bandwidth best;
  double best_err = 0.0;
  for (double kappa : grid) {
    const Bandwidth bw = bandwidth_for(kappa, data.n());
    try {
      const SmootherMatrix W = smoother_matrix(Xs, beta, bw, SmootherMode::leave_block_out(partition));
      const double err = (W.W * data.y - data.y).squaredNorm();
      if (!found || err < best_err) {
        found = true;
        best = bw;
        best_err = err;
      }
    } catch (const DegenerateRowError&) {
      continue;
    }
  }
  if (!found) {
    throw NoValidBandwidthError("select_bandwidth: every kappa in the grid degenerates");
  }
  return best;
}

} // namespace simavg
