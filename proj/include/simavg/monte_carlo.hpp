#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "simavg/data.hpp"
#include "simavg/errors.hpp"
#include "simavg/estimator.hpp"
#include "simavg/kernel.hpp"
#include "simavg/parallel.hpp"
#include "simavg/random.hpp"
#include "simavg/screening.hpp"
#include "simavg/weights.hpp"

namespace simavg {

enum class Link { Sin, Tobit };
enum class Situation { S1 = 1, S2 = 2, S3 = 3, S4 = 4, PGreaterN = 5 };

//! True coefficient layout of each simulation design. Situations 3 and 4
//! grow a repeated middle segment of ceil(1.5 n^(1/3)) entries between a
//! leading 1 and a trailing (1, 1.5); the p > n design is sparse with a
//! strong trailing coefficient.
inline Eigen::VectorXd situation_beta(Situation situation, Eigen::Index n, Eigen::Index p = 200)
{
  switch (situation) {
    case Situation::S1: {
      Eigen::VectorXd b(7);
      b << 1.0, 1.5, 1.0, 0.0, 0.1, -1.5, 1.5;
      return b;
    }
    case Situation::S2: {
      Eigen::VectorXd b(7);
      b << 1.0, 1.5, 0.0, 1.0, 0.0, -1.5, 1.5;
      return b;
    }
    case Situation::S3:
    case Situation::S4: {
      const Eigen::Index len =
        static_cast<Eigen::Index>(std::ceil(1.5 * std::cbrt(static_cast<double>(n))));
      const std::vector<double> pattern =
        situation == Situation::S3 ? std::vector<double>{1.5, 1.0, 0.0, 0.1, -1.5}
                                   : std::vector<double>{1.5, 0.0, 1.0, 0.0, 0.0, -1.5, 0.0};
      Eigen::VectorXd b(len + 3);
      b[0] = 1.0;
      for (Eigen::Index k = 0; k < len; ++k) {
        b[k + 1] = pattern[static_cast<std::size_t>(k % static_cast<Eigen::Index>(pattern.size()))];
      }
      b[len + 1] = 1.0;
      b[len + 2] = 1.5;
      return b;
    }
    case Situation::PGreaterN: {
      if (p < 13) {
        throw std::invalid_argument("situation_beta: p > n design needs p >= 13");
      }
      Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
      const double head[] = {1.0, 2.0, 0.1, 3.0, 0.08, 4.0, 0.06, 5.0, 0.04, 6.0, 0.02};
      for (int k = 0; k < 11; ++k) {
        b[k] = head[k];
      }
      b[p - 1] = 4.0;
      return b;
    }
  }
  throw std::invalid_argument("situation_beta: unknown situation");
}

struct DgpSpec {
  Link link = Link::Sin;
  Situation situation = Situation::S1;
  Eigen::VectorXd beta;    //!< true coefficients (length p)
  double cov_rho = 0.5;    //!< covariate covariance rho^|i-j|
  double r_squared = 0.5;  //!< target var(mu)/var(y)
  Eigen::Index n_train = 100;
  Eigen::Index n_test = 1000;
};

inline DgpSpec dgp_for_situation(Situation situation,
                                 Link link,
                                 Eigen::Index n_train,
                                 double r_squared,
                                 Eigen::Index n_test = 1000,
                                 Eigen::Index p_for_pgn = 200)
{
  DgpSpec spec;
  spec.link = link;
  spec.situation = situation;
  spec.beta = situation_beta(situation, n_train, p_for_pgn);
  spec.r_squared = r_squared;
  spec.n_train = n_train;
  spec.n_test = n_test;
  return spec;
}

namespace detail {

inline void validate_dgp(const DgpSpec& spec)
{
  if (!(spec.r_squared > 0.0 && spec.r_squared < 1.0)) {
    throw std::invalid_argument("dgp: r_squared must lie in (0, 1)");
  }
  if (spec.n_test < 1 || spec.n_train < 2) {
    throw std::invalid_argument("dgp: need n_train >= 2 and n_test >= 1");
  }
  if (spec.beta.size() < 1) {
    throw std::invalid_argument("dgp: empty coefficient vector");
  }
}

inline Eigen::MatrixXd ar_covariance(Eigen::Index p, double rho)
{
  Eigen::MatrixXd sigma(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      sigma(i, j) = std::pow(rho, std::abs(static_cast<double>(i - j)));
    }
  }
  return sigma;
}

inline double normal_cdf(double t)
{
  return 0.5 * std::erfc(-t * std::numbers::sqrt2 / 2.0);
}

inline double tobit_conditional_mean(double index, double c)
{
  const double t = index / c;
  return index * normal_cdf(t) + c * inv_sqrt_two_pi * std::exp(-0.5 * t * t);
}

inline double sample_variance(const Eigen::VectorXd& v)
{
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

} // namespace detail

//! Noise scale c such that var(mu)/var(y) hits the target R^2, calibrated
//! on a fixed pilot draw of 1e5 index/noise pairs and memoized per design.
inline double calibrate_noise_scale(const DgpSpec& spec)
{
  detail::validate_dgp(spec);

  std::string key = std::to_string(static_cast<int>(spec.link)) + '|' +
                    format_double(spec.cov_rho) + '|' + format_double(spec.r_squared) + '|';
  for (Eigen::Index j = 0; j < spec.beta.size(); ++j) {
    key += format_double(spec.beta[j]);
    key += ',';
  }

  static std::map<std::string, double> cache;
  static std::mutex cache_mutex;
  {
    std::lock_guard<std::mutex> lock(cache_mutex);
    auto it = cache.find(key);
    if (it != cache.end()) {
      return it->second;
    }
  }

  constexpr Eigen::Index pilot_n = 100000;
  const Eigen::MatrixXd sigma = detail::ar_covariance(spec.beta.size(), spec.cov_rho);
  const double index_sd = std::sqrt(spec.beta.dot(sigma * spec.beta));

  RandomStream rng(0x51CA7ABA5EED1234ULL);
  Eigen::VectorXd index(pilot_n), eps(pilot_n);
  for (Eigen::Index i = 0; i < pilot_n; ++i) {
    index[i] = index_sd * rng.normal();
    eps[i] = rng.normal();
  }

  double c = 1.0;
  if (spec.link == Link::Sin) {
    const Eigen::VectorXd mu = (std::numbers::pi / 6.0 * index.array()).sin();
    const double mu_mean = mu.mean();
    const double eps_mean = eps.mean();
    const double nn = static_cast<double>(pilot_n - 1);
    const double var_mu = (mu.array() - mu_mean).square().sum() / nn;
    const double var_eps = (eps.array() - eps_mean).square().sum() / nn;
    const double cov = ((mu.array() - mu_mean) * (eps.array() - eps_mean)).sum() / nn;
    // var(y) = var_mu + 2 c cov + c^2 var_eps must equal var_mu / R^2
    const double target_gap = var_mu * (1.0 / spec.r_squared - 1.0);
    c = (-cov + std::sqrt(cov * cov + var_eps * target_gap)) / var_eps;
  } else {
    auto r2_at = [&](double cc) {
      Eigen::VectorXd mu(pilot_n), y(pilot_n);
      for (Eigen::Index i = 0; i < pilot_n; ++i) {
        mu[i] = detail::tobit_conditional_mean(index[i], cc);
        const double latent = index[i] + cc * eps[i];
        y[i] = latent > 0.0 ? latent : 0.0;
      }
      return detail::sample_variance(mu) / detail::sample_variance(y);
    };
    double lo = 1e-6;
    double hi = 1.0;
    while (r2_at(hi) > spec.r_squared && hi < 1e8) {
      hi *= 2.0;
    }
    for (int it = 0; it < 200 && (hi - lo) > 1e-12 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (r2_at(mid) > spec.r_squared) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    c = 0.5 * (lo + hi);
  }

  std::lock_guard<std::mutex> lock(cache_mutex);
  cache.emplace(key, c);
  return c;
}

struct GeneratedData {
  Dataset train;
  Dataset test;
  Eigen::VectorXd mu_train;
  Eigen::VectorXd mu_test;
  double noise_scale = 0.0;
};

//! Draws one training and one testing sample from the design. Covariates
//! are N(0, Sigma) with Sigma = rho^|i-j| via its Cholesky factor, noise is
//! standard normal scaled by the calibrated c. For the Tobit link the mean
//! target is the analytic conditional mean of the censored response.
inline GeneratedData generate(const DgpSpec& spec, std::uint64_t seed)
{
  detail::validate_dgp(spec);
  const double c = calibrate_noise_scale(spec);
  const Eigen::Index p = spec.beta.size();

  const Eigen::MatrixXd sigma = detail::ar_covariance(p, spec.cov_rho);
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();

  RandomStream rng(seed);
  auto draw = [&](Eigen::Index n) {
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd z(p);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < p; ++j) {
        z[j] = rng.normal();
      }
      X.row(i) = (chol * z).transpose();
    }
    return X;
  };

  auto build = [&](Eigen::Index n) {
    Eigen::MatrixXd X = draw(n);
    Eigen::VectorXd eps = rng.normals(n);
    const Eigen::VectorXd index = X * spec.beta;
    Eigen::VectorXd mu(n), y(n);
    if (spec.link == Link::Sin) {
      mu = (std::numbers::pi / 6.0 * index.array()).sin();
      y = mu + c * eps;
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        mu[i] = detail::tobit_conditional_mean(index[i], c);
        const double latent = index[i] + c * eps[i];
        y[i] = latent > 0.0 ? latent : 0.0;
      }
    }
    return std::pair<Dataset, Eigen::VectorXd>(Dataset(std::move(y), std::move(X)), std::move(mu));
  };

  auto [train, mu_train] = build(spec.n_train);
  auto [test, mu_test] = build(spec.n_test);
  return GeneratedData{std::move(train), std::move(test), std::move(mu_train), std::move(mu_test), c};
}

//! A candidate is correct iff its covariates cover the support of the true
//! coefficient vector.
inline std::vector<bool> correct_flags(const Eigen::VectorXd& beta_true,
                                       const std::vector<CandidateSpec>& specs)
{
  std::vector<int> support;
  for (Eigen::Index j = 0; j < beta_true.size(); ++j) {
    if (beta_true[j] != 0.0) {
      support.push_back(static_cast<int>(j));
    }
  }
  std::vector<bool> flags(specs.size(), false);
  for (std::size_t s = 0; s < specs.size(); ++s) {
    bool all = true;
    for (int j : support) {
      if (!specs[s].contains(j)) {
        all = false;
        break;
      }
    }
    flags[s] = all;
  }
  return flags;
}

struct ExperimentConfig {
  std::vector<std::string> methods;
  int replications = 100;
  std::uint64_t seed = 1;
  Eigen::Index block_size = 50;
  std::vector<double> kappa_grid = default_kappa_grid();
  double lambda_min = 0.001;
  double lambda_max = 0.02;
  int lambda_count = 10;
  int max_workers = 0; //!< 0 = all available
};

inline const std::vector<std::string>& all_methods()
{
  static const std::vector<std::string> m = {"jcvma", "aic",  "bic",   "aicc",
                                             "saic",  "sbic", "saicc", "full"};
  return m;
}

struct ReplicationResult {
  bool ok = false;
  std::string note;
  std::map<std::string, double> loss;             //!< squared test loss per method
  std::map<std::string, Eigen::VectorXd> weights; //!< averaging methods
  std::map<std::string, int> selected;            //!< selection methods
  double inf_loss_all = std::numeric_limits<double>::quiet_NaN();          //!< over the simplex
  double inf_loss_misspecified = std::numeric_limits<double>::quiet_NaN(); //!< zero weight on correct models
  double loss_min = std::numeric_limits<double>::quiet_NaN();              //!< best single candidate
  double weight_on_correct = std::numeric_limits<double>::quiet_NaN();
  int n_candidates = 0;
};

//! Candidate set plus per-candidate metadata for one replication.
struct SituationCandidates {
  std::vector<CandidateSpec> specs;
  std::vector<bool> correct;
  std::vector<double> lambdas;              //!< PGreaterN only
  std::vector<Eigen::VectorXd> warm_starts; //!< PGreaterN: path coefficients per candidate
};

inline SituationCandidates candidates_for_situation(const DgpSpec& spec,
                                                    const Dataset& train,
                                                    const ExperimentConfig& cfg)
{
  SituationCandidates out;
  const int p = static_cast<int>(spec.beta.size());
  auto middle = [p](int from, int to) {
    std::vector<int> v;
    for (int j = from; j < to; ++j) {
      v.push_back(j);
    }
    return v;
  };
  switch (spec.situation) {
    case Situation::S1:
      out.specs = enumerate_candidates(p, {0}, {p - 1}, middle(1, p - 1));
      break;
    case Situation::S2:
      out.specs = enumerate_candidates(p, {0, p - 1}, {}, middle(1, p - 1));
      break;
    case Situation::S3: {
      const int count = p - 3;
      out.specs = screen_by_correlation(train, {0}, count, {p - 2, p - 1}).candidates;
      break;
    }
    case Situation::S4: {
      const int count = p - 3;
      out.specs = screen_by_correlation(train, {0, p - 2, p - 1}, count).candidates;
      break;
    }
    case Situation::PGreaterN: {
      // the last covariate is omitted by every fitted model
      const Dataset fit_data = train.first_covariates(p - 1);
      const Bandwidth bw = bandwidth_for(1.0, train.n());
      ScreenResult screen =
        screen_by_lambda_path(fit_data, cfg.lambda_min, cfg.lambda_max, cfg.lambda_count, bw);
      out.specs = screen.candidates;
      out.lambdas = screen.provenance;
      for (std::size_t s = 0; s < out.specs.size(); ++s) {
        const auto& full_beta = screen.path_fits[s].beta_hat.beta;
        Eigen::VectorXd restricted(out.specs[s].size());
        for (Eigen::Index k = 0; k < out.specs[s].size(); ++k) {
          restricted[k] = full_beta[out.specs[s].indices[static_cast<std::size_t>(k)]];
        }
        out.warm_starts.push_back(std::move(restricted));
      }
      break;
    }
  }
  out.correct = correct_flags(spec.beta, out.specs);
  return out;
}

//! L1 analogue of nls_fit for the p > n pipeline: regularized coefficients
//! on the candidate's covariates plus leave-block-out refits at the same
//! lambda for the CV fitted means.
inline FittedCandidate fit_candidate_l1(const Dataset& data,
                                        const CandidateSpec& spec,
                                        double lambda,
                                        const BlockPartition& partition,
                                        const Bandwidth& bw,
                                        const std::optional<Eigen::VectorXd>& warm = {})
{
  if (partition.degenerate()) {
    throw std::invalid_argument("fit_candidate_l1: single-block partition");
  }
  RegularizedFit fit = l1_nls_fit(data, spec, lambda, bw, warm);
  const Eigen::MatrixXd Xs = data.columns(spec.indices);
  Eigen::VectorXd mu_hat =
    fitted_means(smoother_matrix(Xs, fit.beta_hat.beta, bw, SmootherMode::full()), data.y);

  std::vector<int> local(static_cast<std::size_t>(spec.size()));
  for (std::size_t k = 0; k < local.size(); ++k) {
    local[k] = static_cast<int>(k);
  }
  const CandidateSpec local_spec(local);

  Eigen::VectorXd mu_tilde(data.n());
  bool blocks_converged = true;
  for (Eigen::Index j = 0; j < partition.block_count(); ++j) {
    auto retained = detail::drop_block(Xs, data.y, partition, j);
    Dataset retained_ds(retained.y, retained.X);
    RegularizedFit fit_j = l1_nls_fit(retained_ds, local_spec, lambda, bw, fit.beta_hat.beta);
    blocks_converged = blocks_converged && fit_j.converged;
    const Eigen::VectorXd u = retained.X * fit_j.beta_hat.beta;
    const Eigen::Index b0 = partition.block_begin(j);
    const Eigen::Index len = partition.block_length(j);
    const Eigen::VectorXd q = Xs.middleRows(b0, len) * fit_j.beta_hat.beta;
    try {
      mu_tilde.segment(b0, len) = detail::nadaraya_watson(u, retained.y, q, bw.h);
    } catch (const DegenerateRowError& e) {
      throw DegenerateRowError(b0 + e.row());
    }
  }

  detail::LooCriterion crit(Xs, data.y, bw.h);
  const double objective = crit(fit.beta_hat.beta);
  return FittedCandidate{spec,           fit.beta_hat, bw, std::move(mu_hat), std::move(mu_tilde),
                         objective,      fit.converged && blocks_converged};
}

namespace detail {

inline void validate_methods(const std::vector<std::string>& methods)
{
  for (const auto& m : methods) {
    if (std::find(all_methods().begin(), all_methods().end(), m) == all_methods().end()) {
      throw std::invalid_argument("unknown method '" + m + "'");
    }
  }
}

inline ReplicationResult run_one_replication(const DgpSpec& spec,
                                             const ExperimentConfig& cfg,
                                             std::uint64_t rep_seed)
{
  ReplicationResult rep;
  GeneratedData gen = generate(spec, rep_seed);
  const Eigen::Index n = gen.train.n();
  const BlockPartition partition = make_partition(n, std::min(cfg.block_size, n / 2));
  const SituationCandidates cands = candidates_for_situation(spec, gen.train, cfg);
  const std::size_t S = cands.specs.size();
  rep.n_candidates = static_cast<int>(S);
  const bool is_pgn = spec.situation == Situation::PGreaterN;
  const Bandwidth pgn_bw = bandwidth_for(1.0, n);

  std::vector<std::optional<FittedCandidate>> fits(S);
  for (std::size_t s = 0; s < S; ++s) {
    try {
      if (is_pgn) {
        fits[s] = fit_candidate_l1(gen.train, cands.specs[s], cands.lambdas[s], partition, pgn_bw,
                                   cands.warm_starts[s]);
      } else {
        fits[s] = nls_fit(gen.train, cands.specs[s], partition, cfg.kappa_grid);
      }
    } catch (const std::runtime_error&) {
      // candidate flagged: out of selection, out of averaging
    }
  }

  std::vector<std::size_t> ok;
  for (std::size_t s = 0; s < S; ++s) {
    if (fits[s]) {
      ok.push_back(s);
    }
  }
  if (ok.empty()) {
    rep.note = "all candidate fits failed";
    return rep;
  }

  // per-candidate test predictions
  const Eigen::Index n_test = gen.test.n();
  Eigen::MatrixXd P(n_test, static_cast<Eigen::Index>(ok.size()));
  std::vector<double> candidate_loss(ok.size());
  for (std::size_t k = 0; k < ok.size(); ++k) {
    const auto& fit = *fits[ok[k]];
    P.col(static_cast<Eigen::Index>(k)) =
      predict(gen.train, fit, gen.test.X(Eigen::all, fit.spec.indices), true);
    candidate_loss[k] = (P.col(static_cast<Eigen::Index>(k)) - gen.mu_test).squaredNorm();
  }

  // CV weight choice
  std::vector<FittedCandidate> ok_fits;
  ok_fits.reserve(ok.size());
  for (std::size_t k : ok) {
    ok_fits.push_back(*fits[k]);
  }
  const CvGram gram = build_cv_gram(ok_fits, gen.train.y);
  const SimplexQpSolution qp = solve_simplex_qp(gram);
  Eigen::VectorXd w_jcvma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(S));
  for (std::size_t k = 0; k < ok.size(); ++k) {
    w_jcvma[static_cast<Eigen::Index>(ok[k])] = qp.weights[static_cast<Eigen::Index>(k)];
  }

  // information criteria over the fitted candidates
  std::vector<IcScores> scores(ok.size());
  for (std::size_t k = 0; k < ok.size(); ++k) {
    scores[k] = ic_scores(gen.train, *fits[ok[k]]);
  }

  // full-model baseline
  Eigen::VectorXd full_prediction;
  if (is_pgn) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < ok.size(); ++k) {
      if (cands.lambdas[ok[k]] < cands.lambdas[ok[best]]) {
        best = k;
      }
    }
    full_prediction = P.col(static_cast<Eigen::Index>(best));
  } else {
    std::vector<int> all_cov(static_cast<std::size_t>(spec.beta.size()));
    for (std::size_t j = 0; j < all_cov.size(); ++j) {
      all_cov[j] = static_cast<int>(j);
    }
    try {
      const FittedCandidate full_fit =
        nls_fit(gen.train, CandidateSpec(all_cov), partition, cfg.kappa_grid);
      full_prediction =
        predict(gen.train, full_fit, gen.test.X(Eigen::all, full_fit.spec.indices), true);
    } catch (const std::runtime_error&) {
      // baseline unavailable; its loss stays NaN
    }
  }

  auto loss_of = [&](const Eigen::VectorXd& pred) { return (pred - gen.mu_test).squaredNorm(); };

  for (const std::string& method : cfg.methods) {
    if (method == "jcvma") {
      Eigen::VectorXd w_ok(static_cast<Eigen::Index>(ok.size()));
      for (std::size_t k = 0; k < ok.size(); ++k) {
        w_ok[static_cast<Eigen::Index>(k)] = qp.weights[static_cast<Eigen::Index>(k)];
      }
      rep.loss[method] = loss_of(P * w_ok);
      rep.weights[method] = w_jcvma;
    } else if (method == "aic" || method == "bic" || method == "aicc") {
      const IcCriterion crit = method == "aic"  ? IcCriterion::Aic
                               : method == "bic" ? IcCriterion::Bic
                                                 : IcCriterion::Aicc;
      try {
        const std::size_t pick = ic_select(scores, crit);
        rep.selected[method] = static_cast<int>(ok[pick]);
        rep.loss[method] = candidate_loss[pick];
      } catch (const NoSelectableModelError&) {
        rep.loss[method] = std::numeric_limits<double>::quiet_NaN();
      }
    } else if (method == "saic" || method == "sbic" || method == "saicc") {
      const IcCriterion crit = method == "saic"  ? IcCriterion::Aic
                               : method == "sbic" ? IcCriterion::Bic
                                                  : IcCriterion::Aicc;
      try {
        const WeightVector w = smoothed_ic_weights(scores, crit);
        rep.loss[method] = loss_of(P * w.values());
        Eigen::VectorXd embedded = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(S));
        for (std::size_t k = 0; k < ok.size(); ++k) {
          embedded[static_cast<Eigen::Index>(ok[k])] = w[static_cast<Eigen::Index>(k)];
        }
        rep.weights[method] = std::move(embedded);
      } catch (const NoSelectableModelError&) {
        rep.loss[method] = std::numeric_limits<double>::quiet_NaN();
      }
    } else if (method == "full") {
      rep.loss[method] = full_prediction.size() == n_test
                           ? loss_of(full_prediction)
                           : std::numeric_limits<double>::quiet_NaN();
    }
  }

  // reference quantities
  Eigen::MatrixXd R = P.colwise() - gen.mu_test;
  const CvGram B = detail::gram_from_residuals(R);
  rep.inf_loss_all = solve_simplex_qp(B).objective;

  bool any_correct = false;
  for (std::size_t s = 0; s < S; ++s) {
    any_correct = any_correct || cands.correct[s];
  }
  if (!any_correct) {
    rep.inf_loss_misspecified = rep.inf_loss_all;
  } else {
    std::vector<Eigen::Index> mis;
    for (std::size_t k = 0; k < ok.size(); ++k) {
      if (!cands.correct[ok[k]]) {
        mis.push_back(static_cast<Eigen::Index>(k));
      }
    }
    if (!mis.empty()) {
      Eigen::MatrixXd Bm(static_cast<Eigen::Index>(mis.size()), static_cast<Eigen::Index>(mis.size()));
      for (std::size_t a = 0; a < mis.size(); ++a) {
        for (std::size_t b = 0; b < mis.size(); ++b) {
          Bm(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            B.A(mis[a], mis[b]);
        }
      }
      rep.inf_loss_misspecified = solve_simplex_qp(CvGram{std::move(Bm)}).objective;
    }
    double mass = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      if (cands.correct[s]) {
        mass += w_jcvma[static_cast<Eigen::Index>(s)];
      }
    }
    rep.weight_on_correct = mass;
  }
  rep.loss_min = *std::min_element(candidate_loss.begin(), candidate_loss.end());
  rep.ok = true;
  return rep;
}

} // namespace detail

//! Replicated experiment over all requested methods. Replications draw
//! independent seed streams and may run on parallel workers; results are
//! deterministic given (spec, config).
inline std::vector<ReplicationResult> run_experiment(const DgpSpec& spec, const ExperimentConfig& cfg)
{
  if (cfg.replications < 1) {
    throw std::invalid_argument("run_experiment: need at least one replication");
  }
  std::vector<std::string> methods = cfg.methods.empty() ? all_methods() : cfg.methods;
  detail::validate_methods(methods);
  ExperimentConfig local = cfg;
  local.methods = methods;

  std::vector<ReplicationResult> results(static_cast<std::size_t>(cfg.replications));
  parallel_for(
    cfg.replications,
    [&](std::ptrdiff_t d) {
      const std::uint64_t rep_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(d));
      try {
        results[static_cast<std::size_t>(d)] = detail::run_one_replication(spec, local, rep_seed);
      } catch (const std::runtime_error& e) {
        results[static_cast<std::size_t>(d)].ok = false;
        results[static_cast<std::size_t>(d)].note = e.what();
      }
    },
    cfg.max_workers);
  return results;
}

//! Mean over replications of loss / (infimum loss over the simplex).
inline double metric_relative_loss(const std::vector<ReplicationResult>& results,
                                   const std::string& method)
{
  double sum = 0.0;
  int count = 0;
  for (const auto& rep : results) {
    if (!rep.ok) {
      continue;
    }
    auto it = rep.loss.find(method);
    if (it == rep.loss.end() || !std::isfinite(it->second)) {
      continue;
    }
    if (!(rep.inf_loss_all > 0.0)) {
      continue; // zero denominator: replication excluded
    }
    sum += it->second / rep.inf_loss_all;
    ++count;
  }
  if (count == 0) {
    throw std::invalid_argument("metric_relative_loss: no usable replications");
  }
  return sum / count;
}

//! Mean over replications of loss / (best single-candidate loss).
inline double metric_nmspe(const std::vector<ReplicationResult>& results, const std::string& method)
{
  double sum = 0.0;
  int count = 0;
  for (const auto& rep : results) {
    if (!rep.ok) {
      continue;
    }
    auto it = rep.loss.find(method);
    if (it == rep.loss.end() || !std::isfinite(it->second) || !(rep.loss_min > 0.0)) {
      continue;
    }
    sum += it->second / rep.loss_min;
    ++count;
  }
  if (count == 0) {
    throw std::invalid_argument("metric_nmspe: no usable replications");
  }
  return sum / count;
}

//! Mean weight mass the CV weights put on correct candidates.
inline double metric_weight_consistency(const std::vector<ReplicationResult>& results)
{
  double sum = 0.0;
  int count = 0;
  for (const auto& rep : results) {
    if (rep.ok && std::isfinite(rep.weight_on_correct)) {
      sum += rep.weight_on_correct;
      ++count;
    }
  }
  if (count == 0) {
    throw std::invalid_argument("metric_weight_consistency: no replication defines correct models");
  }
  return sum / count;
}

//! Variance-adjusted mean squared prediction error; sigma2 comes from the
//! entire sample, so the value can be negative.
inline double metric_mspe(const Eigen::VectorXd& y_test,
                          const Eigen::VectorXd& y_hat,
                          double sigma2_hat_full)
{
  if (y_test.size() != y_hat.size()) {
    throw std::invalid_argument("metric_mspe: length mismatch");
  }
  if (y_test.size() == 0) {
    throw std::invalid_argument("metric_mspe: empty test set");
  }
  return (y_hat - y_test).squaredNorm() / static_cast<double>(y_test.size()) - sigma2_hat_full;
}

struct MspeTable {
  std::vector<Eigen::Index> train_sizes;
  std::vector<std::string> methods;
  Eigen::MatrixXd raw;        //!< methods x splits
  Eigen::MatrixXd normalized; //!< each column divided by the full-model row
};

//! Train/test MSPE protocol over ordered splits of one dataset: fit every
//! nonempty covariate subset on the head fraction, predict the tail, report
//! the variance-adjusted MSPE of each method normalized by the full model.
inline MspeTable time_split_mspe(const Dataset& data,
                                 const std::vector<double>& train_fractions,
                                 const ExperimentConfig& cfg = {})
{
  if (data.p() > 12) {
    throw std::invalid_argument("time_split_mspe: too many covariates to enumerate");
  }
  MspeTable table;
  table.methods = cfg.methods.empty() ? all_methods() : cfg.methods;
  detail::validate_methods(table.methods);
  table.raw.resize(static_cast<Eigen::Index>(table.methods.size()),
                   static_cast<Eigen::Index>(train_fractions.size()));
  table.normalized.resizeLike(table.raw);

  const double sigma2_full = detail::sample_variance(data.y);

  std::vector<int> all_cov(static_cast<std::size_t>(data.p()));
  for (std::size_t j = 0; j < all_cov.size(); ++j) {
    all_cov[j] = static_cast<int>(j);
  }

  for (std::size_t f = 0; f < train_fractions.size(); ++f) {
    const Eigen::Index m =
      static_cast<Eigen::Index>(std::floor(train_fractions[f] * static_cast<double>(data.n())));
    const Dataset train = data.first_rows(m);
    const Dataset test = data.rows_from(m);
    const BlockPartition partition = make_partition(m, std::min(cfg.block_size, m / 2));

    const auto specs = enumerate_candidates(static_cast<int>(data.p()), {}, {}, all_cov);
    std::vector<std::optional<FittedCandidate>> maybe(specs.size());
    parallel_for(static_cast<std::ptrdiff_t>(specs.size()), [&](std::ptrdiff_t s) {
      try {
        maybe[static_cast<std::size_t>(s)] =
          nls_fit(train, specs[static_cast<std::size_t>(s)], partition, cfg.kappa_grid);
      } catch (const std::runtime_error&) {
      }
    });
    std::vector<FittedCandidate> fits;
    std::ptrdiff_t full_index = -1;
    for (std::size_t s = 0; s < specs.size(); ++s) {
      if (!maybe[s]) {
        continue;
      }
      fits.push_back(std::move(*maybe[s]));
      if (specs[s].size() == data.p()) {
        full_index = static_cast<std::ptrdiff_t>(fits.size()) - 1;
      }
    }
    if (fits.empty() || full_index < 0) {
      throw NoValidBandwidthError("time_split_mspe: full model fit failed");
    }

    Eigen::MatrixXd P(test.n(), static_cast<Eigen::Index>(fits.size()));
    for (std::size_t k = 0; k < fits.size(); ++k) {
      P.col(static_cast<Eigen::Index>(k)) =
        predict(train, fits[k], test.X(Eigen::all, fits[k].spec.indices), true);
    }

    const CvGram gram = build_cv_gram(fits, train.y);
    const SimplexQpSolution qp = solve_simplex_qp(gram);
    std::vector<IcScores> scores(fits.size());
    for (std::size_t k = 0; k < fits.size(); ++k) {
      scores[k] = ic_scores(train, fits[k]);
    }

    for (std::size_t mth = 0; mth < table.methods.size(); ++mth) {
      const std::string& method = table.methods[mth];
      Eigen::VectorXd pred;
      if (method == "jcvma") {
        pred = P * qp.weights.values();
      } else if (method == "aic" || method == "bic" || method == "aicc") {
        const IcCriterion crit = method == "aic"  ? IcCriterion::Aic
                                 : method == "bic" ? IcCriterion::Bic
                                                   : IcCriterion::Aicc;
        pred = P.col(static_cast<Eigen::Index>(ic_select(scores, crit)));
      } else if (method == "saic" || method == "sbic" || method == "saicc") {
        const IcCriterion crit = method == "saic"  ? IcCriterion::Aic
                                 : method == "sbic" ? IcCriterion::Bic
                                                    : IcCriterion::Aicc;
        pred = P * smoothed_ic_weights(scores, crit).values();
      } else {
        pred = P.col(static_cast<Eigen::Index>(full_index));
      }
      table.raw(static_cast<Eigen::Index>(mth), static_cast<Eigen::Index>(f)) =
        metric_mspe(test.y, pred, sigma2_full);
    }
    table.train_sizes.push_back(m);
  }

  for (Eigen::Index col = 0; col < table.raw.cols(); ++col) {
    double full_value = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t mth = 0; mth < table.methods.size(); ++mth) {
      if (table.methods[mth] == "full") {
        full_value = table.raw(static_cast<Eigen::Index>(mth), col);
      }
    }
    table.normalized.col(col) = table.raw.col(col) / full_value;
  }
  return table;
}

} // namespace simavg
