#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "simavg/data.hpp"
#include "simavg/errors.hpp"
#include "simavg/estimator.hpp"
#include "simavg/kernel.hpp"

namespace simavg {

//! Gram matrix of CV residuals: A[s,m] = (mu_tilde_s - y)' (mu_tilde_m - y),
//! so the CV criterion of a weight vector w is w'Aw.
struct CvGram {
  Eigen::MatrixXd A;
};

namespace detail {

//! Symmetrized residual Gram with a diagonal jitter when the smallest
//! eigenvalue estimate dips below -1e-8 * ||A||.
inline CvGram gram_from_residuals(const Eigen::MatrixXd& residuals)
{
  Eigen::MatrixXd A = residuals.transpose() * residuals;
  A = 0.5 * (A + A.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
  const double norm = es.eigenvalues().cwiseAbs().maxCoeff();
  if (es.eigenvalues().minCoeff() < -1e-8 * norm) {
    const double eps = 1e-10 * A.trace() / static_cast<double>(A.rows());
    A.diagonal().array() += eps;
  }
  return {std::move(A)};
}

//! Euclidean projection onto the probability simplex.
inline Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v)
{
  const Eigen::Index n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0;
  double tau = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    css += u[static_cast<std::size_t>(j)];
    const double t = (css - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0.0) {
      tau = t;
    }
  }
  return (v.array() - tau).max(0.0);
}

} // namespace detail

inline CvGram build_cv_gram(const std::vector<FittedCandidate>& candidates, const Eigen::VectorXd& y)
{
  if (candidates.empty()) {
    throw std::invalid_argument("build_cv_gram: no candidates");
  }
  const Eigen::Index n = y.size();
  Eigen::MatrixXd R(n, static_cast<Eigen::Index>(candidates.size()));
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    if (candidates[s].mu_tilde.size() != n) {
      throw std::invalid_argument("build_cv_gram: mu_tilde length mismatch");
    }
    R.col(static_cast<Eigen::Index>(s)) = candidates[s].mu_tilde - y;
  }
  return detail::gram_from_residuals(R);
}

struct SimplexQpSolution {
  WeightVector weights;
  bool certified = false; //!< KKT certificate met at tolerance
  double objective = 0.0;
  int iterations = 0;
};

struct KktReport {
  double mu_star = 0.0;      //!< active-gradient level w'(2Aw)
  double max_violation = 0.0;
};

//! KKT residual of w for min w'Aw on the simplex: on the support the
//! gradient must sit at mu_star, off the support it must not dip below it.
inline KktReport simplex_kkt_report(const Eigen::MatrixXd& A,
                                    const Eigen::VectorXd& w,
                                    double support_tol = 1e-10)
{
  const Eigen::VectorXd g = 2.0 * (A * w);
  KktReport rep;
  rep.mu_star = w.dot(g);
  for (Eigen::Index s = 0; s < w.size(); ++s) {
    if (w[s] > support_tol) {
      rep.max_violation = std::max(rep.max_violation, std::abs(g[s] - rep.mu_star));
    } else {
      rep.max_violation = std::max(rep.max_violation, rep.mu_star - g[s]);
    }
  }
  return rep;
}

//! Weights minimizing w'Aw over the simplex: accelerated projected gradient
//! to near-optimality, then active-set refinement on the support for an
//! explicit KKT certificate.
inline SimplexQpSolution solve_simplex_qp(const CvGram& gram)
{
  const Eigen::MatrixXd& A = gram.A;
  const Eigen::Index S = A.rows();
  if (S < 1 || A.cols() != S) {
    throw std::invalid_argument("solve_simplex_qp: A must be square and nonempty");
  }
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, A.cwiseAbs().maxCoeff())) {
    throw std::invalid_argument("solve_simplex_qp: A must be symmetric");
  }
  if (S == 1) {
    return {WeightVector(Eigen::VectorXd::Ones(1)), true, A(0, 0), 0};
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
  const double max_eig = es.eigenvalues().maxCoeff();
  const double norm = es.eigenvalues().cwiseAbs().maxCoeff();
  if (es.eigenvalues().minCoeff() < -1e-8 * std::max(norm, 1e-300)) {
    throw ConditioningError("solve_simplex_qp: matrix is not positive semidefinite within "
                            "tolerance; add a diagonal jitter eps*I and retry");
  }

  auto objective = [&A](const Eigen::VectorXd& w) { return w.dot(A * w); };

  // Nesterov-accelerated projected gradient with function-value restarts.
  const double L = std::max(2.0 * max_eig, 1e-300);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(S, 1.0 / static_cast<double>(S));
  Eigen::VectorXd z = w;
  double t = 1.0;
  double f_w = objective(w);
  int iterations = 0;
  constexpr int max_iterations = 10000;
  for (; iterations < max_iterations; ++iterations) {
    const Eigen::VectorXd g = 2.0 * (A * z);
    Eigen::VectorXd w_new = detail::project_to_simplex(z - g / L);
    const double f_new = objective(w_new);
    if (f_new > f_w) {
      // restart momentum from the last good point
      z = w;
      t = 1.0;
      const Eigen::VectorXd gw = 2.0 * (A * w);
      w_new = detail::project_to_simplex(w - gw / L);
      const double f_retry = objective(w_new);
      if (f_retry > f_w) {
        break; // no descent left at this scale
      }
      const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      z = w_new + ((t - 1.0) / t_new) * (w_new - w);
      t = t_new;
      w = w_new;
      f_w = f_retry;
    } else {
      const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      z = w_new + ((t - 1.0) / t_new) * (w_new - w);
      t = t_new;
      w = w_new;
      f_w = f_new;
    }
    const Eigen::VectorXd grad = 2.0 * (A * w);
    const double gap = w.dot(grad) - grad.minCoeff();
    if (gap <= 1e-10 * (1.0 + std::abs(f_w))) {
      break;
    }
  }

  // Active-set refinement: equality-constrained solve on the support, then
  // walk support changes until the off-support KKT condition holds.
  Eigen::VectorXd best = w;
  double best_f = f_w;
  std::vector<char> in_support(static_cast<std::size_t>(S), 0);
  for (Eigen::Index s = 0; s < S; ++s) {
    in_support[static_cast<std::size_t>(s)] = w[s] > 1e-10 ? 1 : 0;
  }

  const int max_passes = static_cast<int>(3 * S + 10);
  for (int pass = 0; pass < max_passes; ++pass) {
    std::vector<Eigen::Index> supp;
    for (Eigen::Index s = 0; s < S; ++s) {
      if (in_support[static_cast<std::size_t>(s)]) {
        supp.push_back(s);
      }
    }
    if (supp.empty()) {
      break;
    }
    const Eigen::Index m = static_cast<Eigen::Index>(supp.size());
    Eigen::MatrixXd kkt(m + 1, m + 1);
    kkt.setZero();
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = 0; b < m; ++b) {
        kkt(a, b) = 2.0 * A(supp[static_cast<std::size_t>(a)], supp[static_cast<std::size_t>(b)]);
      }
      kkt(a, m) = -1.0;
      kkt(m, a) = 1.0;
    }
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + 1);
    rhs[m] = 1.0;
    const Eigen::VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
    if (!sol.allFinite() || (kkt * sol - rhs).lpNorm<Eigen::Infinity>() > 1e-8 * (1.0 + std::abs(rhs[m]))) {
      break; // singular face; keep the projected-gradient point
    }

    Eigen::VectorXd x = Eigen::VectorXd::Zero(S);
    for (Eigen::Index a = 0; a < m; ++a) {
      x[supp[static_cast<std::size_t>(a)]] = sol[a];
    }

    if (x.minCoeff() < -1e-12) {
      // step toward the face minimum until the first coordinate hits zero
      double step = 1.0;
      Eigen::Index drop = -1;
      for (Eigen::Index a = 0; a < m; ++a) {
        const Eigen::Index s = supp[static_cast<std::size_t>(a)];
        if (x[s] < w[s]) {
          const double ts = w[s] / (w[s] - x[s]);
          if (x[s] < 0.0 && ts < step) {
            step = ts;
            drop = s;
          }
        }
      }
      w = w + step * (x - w);
      w = w.cwiseMax(0.0);
      if (drop >= 0) {
        w[drop] = 0.0;
        in_support[static_cast<std::size_t>(drop)] = 0;
      }
      const double f_cur = objective(w);
      if (f_cur < best_f) {
        best_f = f_cur;
        best = w;
      }
      continue;
    }

    w = x.cwiseMax(0.0);
    const double f_cur = objective(w);
    if (f_cur <= best_f) {
      best_f = f_cur;
      best = w;
    }
    const Eigen::VectorXd g = 2.0 * (A * w);
    const double mu_star = sol[m];
    Eigen::Index worst = -1;
    double worst_gap = 1e-9 * (1.0 + std::abs(mu_star));
    for (Eigen::Index s = 0; s < S; ++s) {
      if (!in_support[static_cast<std::size_t>(s)] && mu_star - g[s] > worst_gap) {
        worst_gap = mu_star - g[s];
        worst = s;
      }
    }
    if (worst < 0) {
      break; // certified optimum
    }
    in_support[static_cast<std::size_t>(worst)] = 1;
  }

  Eigen::VectorXd final_w = best.cwiseMax(0.0);
  final_w /= final_w.sum();
  const KktReport rep = simplex_kkt_report(A, final_w);
  const bool certified = rep.max_violation <= 1e-6 * (1.0 + std::abs(rep.mu_star));
  return {WeightVector(final_w), certified, objective(final_w), iterations};
}

//! Weighted combination of per-candidate predictions (rows = candidates).
inline Eigen::VectorXd average_predictions(const WeightVector& w, const Eigen::MatrixXd& per_candidate)
{
  if (per_candidate.rows() != w.size()) {
    throw std::invalid_argument("average_predictions: row count must match weight count");
  }
  return per_candidate.transpose() * w.values();
}

enum class IcCriterion { Aic, Bic, Aicc };

struct IcScores {
  double aic = 0.0;
  double bic = 0.0;
  double aicc = 0.0;
  double sigma2_hat = 0.0;
  double trace_K = 0.0;
  double trace_H_combined = 0.0; //!< trace{H + K - HK} entering the AICC ratio
  bool sigma2_floored = false;
  bool rank_deficient = false;   //!< V'V was singular; projection used a pseudo-inverse
};

//! AIC/BIC on the smoother trace plus the SIM-specific corrected AIC. The
//! correction projects onto the span of the link-derivative design; a
//! nonpositive denominator disqualifies the model (AICC = +inf).
inline IcScores ic_scores(const Dataset& data, const FittedCandidate& fit)
{
  const Eigen::Index n = data.n();
  if (fit.mu_hat.size() != n) {
    throw std::invalid_argument("ic_scores: fit does not match dataset");
  }
  const Eigen::MatrixXd Xs = data.columns(fit.spec.indices);
  const Eigen::MatrixXd K =
    smoother_matrix(Xs, fit.beta_hat.beta, fit.bandwidth, SmootherMode::full()).W;

  IcScores out;
  out.trace_K = K.trace();
  out.sigma2_hat = (data.y - fit.mu_hat).squaredNorm() / static_cast<double>(n);
  if (out.sigma2_hat < 1e-300) {
    out.sigma2_hat = 1e-300;
    out.sigma2_floored = true;
  }
  const double nn = static_cast<double>(n);
  out.aic = nn * std::log(out.sigma2_hat) + 2.0 * out.trace_K;
  out.bic = nn * std::log(out.sigma2_hat) + std::log(nn) * out.trace_K;

  Eigen::MatrixXd V(n, Xs.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    V.row(i) = link_derivative(Xs, fit.beta_hat.beta, fit.bandwidth, data.y, i).transpose();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(V);
  const Eigen::Index rank = qr.rank();
  out.rank_deficient = rank < V.cols();
  const Eigen::MatrixXd Q =
    qr.householderQ() * Eigen::MatrixXd::Identity(n, rank);
  const double trace_H = static_cast<double>(rank);
  const double trace_HK = (Q.transpose() * (K * Q)).trace();
  out.trace_H_combined = trace_H + out.trace_K - trace_HK;

  const double denom = nn - 2.0 - out.trace_H_combined;
  if (denom > 0.0) {
    out.aicc = std::log(out.sigma2_hat) + (nn + out.trace_H_combined) / denom;
  } else {
    out.aicc = std::numeric_limits<double>::infinity();
  }
  return out;
}

inline double ic_score_value(const IcScores& s, IcCriterion criterion)
{
  switch (criterion) {
    case IcCriterion::Aic:
      return s.aic;
    case IcCriterion::Bic:
      return s.bic;
    case IcCriterion::Aicc:
      return s.aicc;
  }
  return s.aic;
}

//! Argmin of the chosen score; ties go to the earlier candidate.
inline std::size_t ic_select(const std::vector<IcScores>& scores, IcCriterion criterion)
{
  if (scores.empty()) {
    throw std::invalid_argument("ic_select: empty score list");
  }
  std::size_t best = scores.size();
  double best_value = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < scores.size(); ++s) {
    const double v = ic_score_value(scores[s], criterion);
    if (std::isfinite(v) && v < best_value) {
      best_value = v;
      best = s;
    }
  }
  if (best == scores.size()) {
    throw NoSelectableModelError("ic_select: every candidate score is infinite");
  }
  return best;
}

//! Softmax of -score/2 with max-subtraction; infinite scores get weight 0.
inline WeightVector smoothed_ic_weights(const std::vector<IcScores>& scores, IcCriterion criterion)
{
  if (scores.empty()) {
    throw std::invalid_argument("smoothed_ic_weights: empty score list");
  }
  double min_score = std::numeric_limits<double>::infinity();
  for (const auto& s : scores) {
    const double v = ic_score_value(s, criterion);
    if (std::isfinite(v)) {
      min_score = std::min(min_score, v);
    }
  }
  if (!std::isfinite(min_score)) {
    throw NoSelectableModelError("smoothed_ic_weights: every candidate score is infinite");
  }
  Eigen::VectorXd w(static_cast<Eigen::Index>(scores.size()));
  for (std::size_t s = 0; s < scores.size(); ++s) {
    const double v = ic_score_value(scores[s], criterion);
    w[static_cast<Eigen::Index>(s)] = std::isfinite(v) ? std::exp(-0.5 * (v - min_score)) : 0.0;
  }
  w /= w.sum();
  return WeightVector(std::move(w));
}

} // namespace simavg
