#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "simavg/data.hpp"
#include "simavg/errors.hpp"
#include "simavg/kernel.hpp"
#include "simavg/optim.hpp"

namespace simavg {

//! Index coefficients with the identification normalization baked in:
//! the first (anchor) entry equals one exactly.
struct IndexCoefficients {
  Eigen::VectorXd beta;

  explicit IndexCoefficients(Eigen::VectorXd b)
    : beta(std::move(b))
  {
    if (beta.size() < 1) {
      throw std::invalid_argument("index coefficients: empty vector");
    }
    if (beta[0] != 1.0) {
      throw std::invalid_argument("index coefficients: anchor entry must equal 1");
    }
    if (!beta.allFinite()) {
      throw std::invalid_argument("index coefficients: non-finite entry");
    }
  }

  Eigen::Index size() const { return beta.size(); }
};

struct FittedCandidate {
  CandidateSpec spec;
  IndexCoefficients beta_hat;
  Bandwidth bandwidth;
  Eigen::VectorXd mu_hat;   //!< full-smoother fitted means at beta_hat
  Eigen::VectorXd mu_tilde; //!< leave-block-out fitted means
  double objective = 0.0;   //!< leave-one-out NLS criterion at beta_hat
  bool converged = false;
};

struct RegularizedFit {
  IndexCoefficients beta_hat;
  double lambda = 0.0;
  std::vector<int> active_set; //!< positions in beta with nonzero entries (anchor included)
  double objective = 0.0;      //!< penalized criterion at beta_hat
  bool converged = false;
  std::vector<double> sweep_objectives; //!< penalized criterion after each sweep
};

namespace detail {

//! Leave-one-out NLS criterion for one candidate's covariates. Scratch
//! buffers are reused across evaluations, so one instance serves one fit.
class LooCriterion {
public:
  LooCriterion(Eigen::MatrixXd X, Eigen::VectorXd y, double h)
    : X_(std::move(X))
    , y_(std::move(y))
    , inv_h_(1.0 / h)
    , n_(y_.size())
  {
    if (h <= 0.0) {
      throw std::invalid_argument("bandwidth must be positive");
    }
    K_.resize(n_, n_);
    v_.resize(n_);
    mu_.resize(n_);
    den_.resize(n_);
    t_.resize(n_);
  }

  //! Criterion value; +inf when some leave-one-out row degenerates.
  double operator()(const Eigen::VectorXd& beta) const
  {
    v_.noalias() = X_ * beta;
    for (Eigen::Index j = 0; j < n_; ++j) {
      t_ = (v_.array() - v_[j]) * inv_h_;
      gaussian_weights_into(t_);
      K_.col(j) = t_;
    }
    K_.diagonal().setZero();
    den_ = K_.rowwise().sum();
    degenerate_row_ = -1;
    for (Eigen::Index i = 0; i < n_; ++i) {
      if (den_[i] == 0.0) {
        degenerate_row_ = i;
        return std::numeric_limits<double>::infinity();
      }
    }
    mu_.noalias() = K_ * y_;
    mu_.array() /= den_.array();
    return (y_ - mu_).squaredNorm() / static_cast<double>(n_);
  }

  Eigen::Index dim() const { return X_.cols(); }
  Eigen::Index degenerate_row() const { return degenerate_row_; }

private:
  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;
  double inv_h_;
  Eigen::Index n_;
  mutable Eigen::MatrixXd K_;
  mutable Eigen::VectorXd v_, mu_, den_;
  mutable Eigen::ArrayXd t_;
  mutable Eigen::Index degenerate_row_ = -1;
};

inline Eigen::VectorXd with_anchor(const Eigen::VectorXd& free)
{
  Eigen::VectorXd beta(free.size() + 1);
  beta[0] = 1.0;
  beta.tail(free.size()) = free;
  return beta;
}

//! Nadaraya-Watson means of (u, y) evaluated at query index values.
inline Eigen::VectorXd nadaraya_watson(const Eigen::VectorXd& u,
                                       const Eigen::VectorXd& y,
                                       const Eigen::VectorXd& query,
                                       double h)
{
  const double inv_h = 1.0 / h;
  Eigen::VectorXd out(query.size());
  Eigen::ArrayXd w(u.size());
  for (Eigen::Index q = 0; q < query.size(); ++q) {
    w = (-0.5 * ((u.array() - query[q]) * inv_h).square()).exp();
    const double denom = w.sum();
    if (denom == 0.0) {
      throw DegenerateRowError(q);
    }
    out[q] = (w * y.array()).sum() / denom;
  }
  return out;
}

//! OLS slope vector of y on [1, X], rescaled so the anchor coefficient is
//! one. Empty when the fit is underdetermined or the anchor slope vanishes.
inline std::optional<Eigen::VectorXd> ols_start(const Eigen::MatrixXd& X, const Eigen::VectorXd& y)
{
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (n <= p + 1) {
    return std::nullopt;
  }
  Eigen::MatrixXd A(n, p + 1);
  A.col(0).setOnes();
  A.rightCols(p) = X;
  const Eigen::VectorXd coef = A.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd slopes = coef.tail(p);
  const double scale = std::max(1.0, slopes.cwiseAbs().maxCoeff());
  if (std::abs(slopes[0]) < 1e-10 * scale) {
    return std::nullopt;
  }
  Eigen::VectorXd beta = slopes / slopes[0];
  if (!beta.allFinite()) {
    return std::nullopt;
  }
  return beta;
}

struct MinimizeOutcome {
  Eigen::VectorXd beta;
  double value = std::numeric_limits<double>::infinity();
  bool converged = false;
};

//! Best-of-starts BFGS minimization over the free coordinates; starts are
//! full coefficient vectors with the anchor set to one.
inline MinimizeOutcome minimize_candidate(const LooCriterion& crit,
                                          const std::vector<Eigen::VectorXd>& starts)
{
  const Eigen::Index p = crit.dim();
  MinimizeOutcome out;
  if (p == 1) {
    out.beta = Eigen::VectorXd::Ones(1);
    out.value = crit(out.beta);
    out.converged = true;
    if (!std::isfinite(out.value)) {
      throw DegenerateRowError(crit.degenerate_row());
    }
    return out;
  }

  auto objective = [&crit](const Eigen::VectorXd& free) { return crit(with_anchor(free)); };

  Eigen::Index last_degenerate = 0;
  std::vector<Eigen::VectorXd> seen;
  for (const Eigen::VectorXd& start : starts) {
    bool duplicate = false;
    for (const auto& other : seen) {
      if ((other - start).lpNorm<Eigen::Infinity>() == 0.0) {
        duplicate = true;
        break;
      }
    }
    if (duplicate) {
      continue;
    }
    seen.push_back(start);

    BfgsResult r = bfgs_minimize(objective, start.tail(p - 1));
    if (!std::isfinite(r.value)) {
      last_degenerate = crit.degenerate_row();
      continue;
    }
    if (r.value < out.value) {
      out.beta = with_anchor(r.x);
      out.value = r.value;
      out.converged = r.converged;
    }
  }
  if (!std::isfinite(out.value)) {
    throw DegenerateRowError(last_degenerate);
  }
  return out;
}

inline std::vector<Eigen::VectorXd> default_starts(const Eigen::MatrixXd& X,
                                                   const Eigen::VectorXd& y,
                                                   const std::optional<Eigen::VectorXd>& init)
{
  const Eigen::Index p = X.cols();
  std::vector<Eigen::VectorXd> starts;
  if (init) {
    if (init->size() != p) {
      throw std::invalid_argument("init coefficient length must match candidate size");
    }
    if ((*init)[0] != 1.0) {
      throw std::invalid_argument("init coefficients must have anchor 1");
    }
    starts.push_back(*init);
  }
  if (auto ols = ols_start(X, y)) {
    starts.push_back(*ols);
  }
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(p);
  zero[0] = 1.0;
  starts.push_back(std::move(zero));
  return starts;
}

struct RetainedRows {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
};

inline RetainedRows drop_block(const Eigen::MatrixXd& X,
                               const Eigen::VectorXd& y,
                               const BlockPartition& part,
                               Eigen::Index block)
{
  const Eigen::Index b0 = part.block_begin(block);
  const Eigen::Index b1 = part.block_end(block);
  const Eigen::Index n = X.rows();
  RetainedRows out;
  out.X.resize(n - (b1 - b0), X.cols());
  out.y.resize(n - (b1 - b0));
  out.X.topRows(b0) = X.topRows(b0);
  out.y.head(b0) = y.head(b0);
  out.X.bottomRows(n - b1) = X.bottomRows(n - b1);
  out.y.tail(n - b1) = y.tail(n - b1);
  return out;
}

} // namespace detail

//! Leave-one-out NLS criterion n^{-1} ||y - W y||^2 at the given
//! coefficients; W excludes each observation from its own fitted mean.
inline double nls_objective(const Dataset& data,
                            const CandidateSpec& spec,
                            const Eigen::VectorXd& beta,
                            const Bandwidth& bw)
{
  if (beta.size() != spec.size()) {
    throw std::invalid_argument("nls_objective: coefficient length must match candidate size");
  }
  if (beta[0] != 1.0) {
    throw std::invalid_argument("nls_objective: anchor coefficient must equal 1");
  }
  detail::LooCriterion crit(data.columns(spec.indices), data.y, bw.h);
  const double value = crit(beta);
  if (!std::isfinite(value)) {
    throw DegenerateRowError(crit.degenerate_row());
  }
  return value;
}

//! NLS coefficients fitted without the observations of one block.
inline IndexCoefficients leave_block_out_fit(const Dataset& data,
                                             const CandidateSpec& spec,
                                             const BlockPartition& partition,
                                             Eigen::Index block,
                                             const Bandwidth& bw)
{
  if (partition.n() != data.n()) {
    throw std::invalid_argument("leave_block_out_fit: partition size must match data");
  }
  if (partition.degenerate()) {
    throw std::invalid_argument("leave_block_out_fit: single-block partition");
  }
  if (block < 0 || block >= partition.block_count()) {
    throw std::invalid_argument("leave_block_out_fit: block index out of range");
  }
  const Eigen::MatrixXd Xs = data.columns(spec.indices);
  auto retained = detail::drop_block(Xs, data.y, partition, block);
  if (retained.y.size() < 2) {
    throw std::invalid_argument("leave_block_out_fit: fewer than 2 retained observations");
  }
  detail::LooCriterion crit(retained.X, retained.y, bw.h);
  auto out = detail::minimize_candidate(crit, detail::default_starts(retained.X, retained.y, {}));
  return IndexCoefficients(out.beta);
}

//! Full NLS fit of one candidate: multi-start quasi-Newton estimate of the
//! coefficients, CV choice of the bandwidth scale, full-sample fitted means
//! and leave-block-out fitted means (one refit per block).
inline FittedCandidate nls_fit(const Dataset& data,
                               const CandidateSpec& spec,
                               const BlockPartition& partition,
                               const std::vector<double>& kappa_grid = default_kappa_grid(),
                               const std::optional<Eigen::VectorXd>& init = {})
{
  if (partition.n() != data.n()) {
    throw std::invalid_argument("nls_fit: partition size must match data");
  }
  if (partition.degenerate()) {
    throw std::invalid_argument("nls_fit: single-block partition cannot support cross-validation");
  }
  const Eigen::MatrixXd Xs = data.columns(spec.indices);
  const Eigen::VectorXd& y = data.y;
  const Eigen::Index n = data.n();

  const auto starts = detail::default_starts(Xs, y, init);

  // Pilot fit at kappa = 1, then reselect the scale and refit if it moved.
  const Bandwidth bw0 = bandwidth_for(1.0, n);
  detail::LooCriterion crit0(Xs, y, bw0.h);
  detail::MinimizeOutcome out = detail::minimize_candidate(crit0, starts);

  Bandwidth bw = select_bandwidth(data, spec, out.beta, kappa_grid, partition);
  if (bw.h != bw0.h) {
    detail::LooCriterion crit(Xs, y, bw.h);
    std::vector<Eigen::VectorXd> warm = starts;
    warm.insert(warm.begin(), out.beta);
    out = detail::minimize_candidate(crit, warm);
  }

  Eigen::VectorXd mu_hat = fitted_means(smoother_matrix(Xs, out.beta, bw, SmootherMode::full()), y);

  Eigen::VectorXd mu_tilde(n);
  bool blocks_converged = true;
  for (Eigen::Index j = 0; j < partition.block_count(); ++j) {
    auto retained = detail::drop_block(Xs, y, partition, j);
    detail::LooCriterion crit_j(retained.X, retained.y, bw.h);
    std::vector<Eigen::VectorXd> starts_j = detail::default_starts(retained.X, retained.y, {});
    starts_j.insert(starts_j.begin(), out.beta);
    auto fit_j = detail::minimize_candidate(crit_j, starts_j);
    blocks_converged = blocks_converged && fit_j.converged;

    const Eigen::VectorXd u = retained.X * fit_j.beta;
    const Eigen::Index b0 = partition.block_begin(j);
    const Eigen::Index len = partition.block_length(j);
    const Eigen::VectorXd q = Xs.middleRows(b0, len) * fit_j.beta;
    try {
      mu_tilde.segment(b0, len) = detail::nadaraya_watson(u, retained.y, q, bw.h);
    } catch (const DegenerateRowError& e) {
      throw DegenerateRowError(b0 + e.row());
    }
  }

  const double objective = nls_objective(data, spec, out.beta, bw);
  return FittedCandidate{spec,
                         IndexCoefficients(out.beta),
                         bw,
                         std::move(mu_hat),
                         std::move(mu_tilde),
                         objective,
                         out.converged && blocks_converged};
}

//! L1-penalized NLS via cyclic coordinate descent on the free coordinates.
//! Each update minimizes the one-dimensional penalized criterion by
//! golden-section search on each side of zero plus the point zero itself;
//! a coordinate parked at zero is first re-tested with the subgradient
//! condition |dH/db| <= lambda before paying for a search.
inline RegularizedFit l1_nls_fit(const Dataset& data,
                                 const CandidateSpec& spec,
                                 double lambda,
                                 const Bandwidth& bw,
                                 const std::optional<Eigen::VectorXd>& init = {})
{
  if (lambda < 0.0) {
    throw std::invalid_argument("l1_nls_fit: lambda must be nonnegative");
  }
  const Eigen::MatrixXd Xs = data.columns(spec.indices);
  const Eigen::VectorXd& y = data.y;
  const Eigen::Index p = Xs.cols();
  detail::LooCriterion crit(Xs, y, bw.h);

  Eigen::VectorXd beta;
  if (init) {
    if (init->size() != p || (*init)[0] != 1.0) {
      throw std::invalid_argument("l1_nls_fit: init must match candidate size with anchor 1");
    }
    beta = *init;
  } else {
    beta = Eigen::VectorXd::Zero(p);
    beta[0] = 1.0;
  }

  auto penalty = [&](const Eigen::VectorXd& b) {
    return lambda * b.tail(b.size() - 1).cwiseAbs().sum();
  };
  double current = crit(beta) + penalty(beta);
  if (!std::isfinite(current)) {
    throw DegenerateRowError(crit.degenerate_row());
  }

  RegularizedFit fit{IndexCoefficients(beta), lambda, {}, current, false, {}};
  if (p == 1) {
    fit.converged = true;
    fit.active_set = {0};
    fit.sweep_objectives = {current};
    return fit;
  }

  constexpr int sweep_cap = 50;
  constexpr double coord_tol = 1e-6;
  Eigen::VectorXd trial = beta;

  for (int sweep = 0; sweep < sweep_cap; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index r = 1; r < p; ++r) {
      const double b0 = beta[r];
      auto value_at = [&](double b) {
        trial = beta;
        trial[r] = b;
        const double h = crit(trial);
        return std::isfinite(h) ? h + penalty(trial) : h;
      };

      if (b0 == 0.0) {
        // subgradient test: stay at zero when no side descends
        const double eps = 1e-6;
        const double hp = value_at(eps) - lambda * eps;
        const double hm = value_at(-eps) - lambda * eps;
        const double deriv = (hp - hm) / (2.0 * eps);
        if (std::isfinite(hp) && std::isfinite(hm) && std::abs(deriv) <= lambda) {
          continue;
        }
      }

      double best_b = b0;
      double best_f = current;
      auto consider = [&](double b) {
        const double f = value_at(b);
        if (std::isfinite(f) && f < best_f) {
          best_f = f;
          best_b = b;
        }
      };

      consider(0.0);
      const double scale = std::max(1.0, 2.0 * std::abs(b0));
      for (double sign : {1.0, -1.0}) {
        double hi = scale;
        for (int grow = 0; grow < 6; ++grow) {
          const double m =
            golden_section_min([&](double b) { return value_at(sign * b); }, 0.0, hi, 1e-8 * hi);
          consider(sign * m);
          if (m < 0.95 * hi || hi > 1024.0) {
            break;
          }
          hi *= 4.0;
        }
      }

      if (best_b != b0) {
        beta[r] = best_b;
        current = best_f;
        max_change = std::max(max_change, std::abs(best_b - b0));
      }
    }
    fit.sweep_objectives.push_back(current);
    if (max_change < coord_tol) {
      fit.converged = true;
      break;
    }
  }

  fit.beta_hat = IndexCoefficients(beta);
  fit.objective = current;
  fit.active_set.clear();
  fit.active_set.push_back(0);
  for (Eigen::Index r = 1; r < p; ++r) {
    if (beta[r] != 0.0) {
      fit.active_set.push_back(static_cast<int>(r));
    }
  }
  return fit;
}

//! Out-of-sample means: the estimated link evaluated at the new index
//! values, smoothing over the training observations.
inline Eigen::VectorXd predict(const Dataset& train,
                               const FittedCandidate& fit,
                               const Eigen::MatrixXd& X_new,
                               bool allow_unconverged = false)
{
  if (!fit.converged && !allow_unconverged) {
    throw std::invalid_argument("predict: candidate fit did not converge");
  }
  if (X_new.cols() != fit.spec.size()) {
    throw std::invalid_argument("predict: covariate count must match candidate spec");
  }
  const Eigen::VectorXd u = train.columns(fit.spec.indices) * fit.beta_hat.beta;
  const Eigen::VectorXd q = X_new * fit.beta_hat.beta;
  return detail::nadaraya_watson(u, train.y, q, fit.bandwidth.h);
}

} // namespace simavg
