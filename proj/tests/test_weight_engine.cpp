#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "simavg/monte_carlo.hpp"
#include "simavg/random.hpp"
#include "simavg/weights.hpp"

using namespace simavg;

namespace {

FittedCandidate stub_candidate(Eigen::VectorXd mu_tilde)
{
  const Eigen::Index n = mu_tilde.size();
  return FittedCandidate{CandidateSpec({0}),
                         IndexCoefficients(Eigen::VectorXd::Ones(1)),
                         Bandwidth{1.0, 1.0},
                         Eigen::VectorXd::Zero(n),
                         std::move(mu_tilde),
                         0.0,
                         true};
}

Eigen::MatrixXd random_psd(RandomStream& rng, Eigen::Index s)
{
  const Eigen::Index k = s + 2;
  Eigen::MatrixXd G(k, s);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < s; ++j) {
      G(i, j) = rng.normal();
    }
  }
  return G.transpose() * G;
}

} // namespace

TEST_CASE("cv gram entries are residual inner products")
{
  RandomStream rng(2);
  const Eigen::Index n = 12;
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = rng.normal();
  }

  // single candidate: 1x1 squared residual norm
  Eigen::VectorXd m0(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    m0[i] = rng.normal();
  }
  const CvGram single = build_cv_gram({stub_candidate(m0)}, y);
  CHECK_THAT(single.A(0, 0), Catch::Matchers::WithinRel((m0 - y).squaredNorm(), 1e-12));

  // duplicated candidates give a rank-one block of equal entries
  const CvGram dup = build_cv_gram({stub_candidate(m0), stub_candidate(m0)}, y);
  CHECK_THAT(dup.A(0, 1), Catch::Matchers::WithinRel(dup.A(0, 0), 1e-12));
  CHECK_THAT(dup.A(1, 1), Catch::Matchers::WithinRel(dup.A(0, 0), 1e-12));

  // three candidates against a double-loop oracle
  std::vector<FittedCandidate> cands;
  std::vector<Eigen::VectorXd> mus;
  for (int s = 0; s < 3; ++s) {
    Eigen::VectorXd m(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      m[i] = rng.normal();
    }
    mus.push_back(m);
    cands.push_back(stub_candidate(m));
  }
  const CvGram gram = build_cv_gram(cands, y);
  for (int s = 0; s < 3; ++s) {
    for (int m = 0; m < 3; ++m) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += (mus[s][i] - y[i]) * (mus[m][i] - y[i]);
      }
      CHECK_THAT(gram.A(s, m), Catch::Matchers::WithinRel(acc, 1e-10));
    }
  }
  CHECK((gram.A - gram.A.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("simplex qp on canonical instances")
{
  // single candidate
  const SimplexQpSolution one = solve_simplex_qp(CvGram{Eigen::MatrixXd::Constant(1, 1, 3.0)});
  CHECK(one.weights[0] == 1.0);

  // diag(2, 1): known optimum (1/3, 2/3) with objective 2/3
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(2, 2);
  D(0, 0) = 2.0;
  D(1, 1) = 1.0;
  const SimplexQpSolution diag = solve_simplex_qp(CvGram{D});
  CHECK_THAT(diag.weights[0], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-8));
  CHECK_THAT(diag.weights[1], Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-8));
  CHECK_THAT(diag.objective, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-10));
  // 1-D grid oracle over w1
  double grid_best = std::numeric_limits<double>::infinity();
  for (double w1 = 0.0; w1 <= 1.0; w1 += 1e-5) {
    grid_best = std::min(grid_best, 2.0 * w1 * w1 + (1.0 - w1) * (1.0 - w1));
  }
  CHECK(diag.objective <= grid_best + 1e-9);

  // identity: uniform by symmetry
  const SimplexQpSolution iden = solve_simplex_qp(CvGram{Eigen::MatrixXd::Identity(3, 3)});
  for (Eigen::Index s = 0; s < 3; ++s) {
    CHECK_THAT(iden.weights[s], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-8));
  }
}

TEST_CASE("simplex qp beats every vertex and the fine grid")
{
  RandomStream rng(5);
  for (int t = 0; t < 25; ++t) {
    const Eigen::Index S = 2 + t % 2; // S <= 3 for the grid oracle
    const Eigen::MatrixXd A = random_psd(rng, S);
    const SimplexQpSolution sol = solve_simplex_qp(CvGram{A});
    CHECK(sol.certified);

    for (Eigen::Index s = 0; s < S; ++s) {
      CHECK(sol.objective <= A(s, s) + 1e-9);
    }

    double grid_best = std::numeric_limits<double>::infinity();
    const double step = 1e-3;
    if (S == 2) {
      for (double w1 = 0.0; w1 <= 1.0 + 1e-12; w1 += step) {
        Eigen::Vector2d w(w1, 1.0 - w1);
        grid_best = std::min(grid_best, w.dot(A * w));
      }
    } else {
      for (double w1 = 0.0; w1 <= 1.0 + 1e-12; w1 += step) {
        for (double w2 = 0.0; w2 <= 1.0 - w1 + 1e-12; w2 += step) {
          Eigen::Vector3d w(w1, w2, 1.0 - w1 - w2);
          grid_best = std::min(grid_best, w.dot(A * w));
        }
      }
    }
    CHECK(sol.objective <= grid_best + 1e-6);
  }
}

TEST_CASE("simplex qp satisfies the KKT certificate on random instances")
{
  RandomStream rng(8);
  for (int t = 0; t < 60; ++t) {
    const Eigen::Index S = 1 + t % 14;
    const Eigen::MatrixXd A = random_psd(rng, S);
    const SimplexQpSolution sol = solve_simplex_qp(CvGram{A});
    const KktReport rep = simplex_kkt_report(A, sol.weights.values());
    CHECK(rep.max_violation <= 1e-6 * (1.0 + std::abs(rep.mu_star)));
  }
}

TEST_CASE("simplex qp rejects an indefinite matrix")
{
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(solve_simplex_qp(CvGram{bad}), ConditioningError);
}

TEST_CASE("cv criterion identity holds on a fitted pipeline")
{
  DgpSpec spec = dgp_for_situation(Situation::S1, Link::Sin, 80, 0.7, 10);
  const GeneratedData gen = generate(spec, 31);
  const BlockPartition part = make_partition(80, 40);
  std::vector<FittedCandidate> fits;
  for (const auto& idx : {std::vector<int>{0, 1}, {0, 2}, {0, 1, 2}}) {
    fits.push_back(nls_fit(gen.train, CandidateSpec(idx), part));
  }
  const CvGram gram = build_cv_gram(fits, gen.train.y);
  const SimplexQpSolution sol = solve_simplex_qp(gram);

  Eigen::VectorXd combined = Eigen::VectorXd::Zero(80);
  for (std::size_t s = 0; s < fits.size(); ++s) {
    combined += sol.weights[static_cast<Eigen::Index>(s)] * fits[s].mu_tilde;
  }
  const double direct = (combined - gen.train.y).squaredNorm();
  const double quad = sol.weights.values().dot(gram.A * sol.weights.values());
  CHECK_THAT(quad, Catch::Matchers::WithinRel(direct, 1e-8));
}

TEST_CASE("average predictions is a weighted column combination")
{
  Eigen::MatrixXd P(3, 4); // candidates x observations
  P << 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0;

  Eigen::VectorXd unit = Eigen::VectorXd::Zero(3);
  unit[1] = 1.0;
  const Eigen::VectorXd picked = average_predictions(WeightVector(unit), P);
  CHECK((picked.transpose() - P.row(1)).cwiseAbs().maxCoeff() == 0.0);

  Eigen::MatrixXd same(2, 3);
  same << 1.5, -2.0, 0.25, 1.5, -2.0, 0.25;
  Eigen::VectorXd any(2);
  any << 0.3, 0.7;
  const Eigen::VectorXd common = average_predictions(WeightVector(any), same);
  CHECK_THAT(common[0], Catch::Matchers::WithinRel(1.5, 1e-12));
  CHECK_THAT(common[1], Catch::Matchers::WithinRel(-2.0, 1e-12));

  RandomStream rng(12);
  Eigen::VectorXd w(3);
  w << 0.2, 0.5, 0.3;
  const Eigen::VectorXd avg = average_predictions(WeightVector(w), P);
  for (Eigen::Index c = 0; c < 4; ++c) {
    double acc = 0.0;
    for (Eigen::Index s = 0; s < 3; ++s) {
      acc += w[s] * P(s, c);
    }
    CHECK_THAT(avg[c], Catch::Matchers::WithinRel(acc, 1e-13));
  }
}

TEST_CASE("information scores recompute from their stored pieces")
{
  DgpSpec spec = dgp_for_situation(Situation::S1, Link::Sin, 30, 0.8, 10);
  const GeneratedData gen = generate(spec, 77);
  const BlockPartition part = make_partition(30, 15);
  const FittedCandidate fit = nls_fit(gen.train, CandidateSpec({0, 1, 2}), part);
  const IcScores s = ic_scores(gen.train, fit);

  const double n = 30.0;
  CHECK_THAT(s.aic, Catch::Matchers::WithinAbs(n * std::log(s.sigma2_hat) + 2.0 * s.trace_K, 1e-8));
  CHECK_THAT(s.bic,
             Catch::Matchers::WithinAbs(n * std::log(s.sigma2_hat) + std::log(n) * s.trace_K, 1e-8));
  CHECK(s.trace_K > 0.0);
  CHECK(s.trace_K <= n);
  CHECK(s.sigma2_hat >= 0.0);
  const double denom = n - 2.0 - s.trace_H_combined;
  if (denom > 0.0) {
    CHECK_THAT(s.aicc, Catch::Matchers::WithinAbs(
                         std::log(s.sigma2_hat) + (n + s.trace_H_combined) / denom, 1e-8));
  } else {
    CHECK(std::isinf(s.aicc));
  }
}

TEST_CASE("a near-uniform smoother has unit trace")
{
  Eigen::MatrixXd X(6, 1);
  X << -1.0, -0.6, -0.2, 0.2, 0.6, 1.0;
  Eigen::VectorXd beta(1);
  beta << 1.0;
  const Eigen::MatrixXd W = smoother_matrix(X, beta, Bandwidth{1e9, 1.0}, SmootherMode::full()).W;
  CHECK_THAT(W.trace(), Catch::Matchers::WithinAbs(1.0, 1e-9));
}

TEST_CASE("a perfect fit floors the variance estimate")
{
  Eigen::MatrixXd X(6, 1);
  X << -1.2, -0.7, -0.1, 0.4, 0.9, 1.5;
  Eigen::VectorXd y = 2.0 * X.col(0);
  const Dataset data(y, X);
  FittedCandidate fit{CandidateSpec({0}), IndexCoefficients(Eigen::VectorXd::Ones(1)),
                      Bandwidth{0.5, 1.0}, y /* mu_hat == y exactly */, y, 0.0, true};
  const IcScores s = ic_scores(data, fit);
  CHECK(s.sigma2_floored);
  CHECK(s.sigma2_hat == 1e-300);
  CHECK(std::isfinite(s.aic));
}

TEST_CASE("a pinned-down smoother disqualifies the corrected criterion")
{
  // tiny bandwidth: K ~ identity, so trace{H + K - HK} ~ n and the AICC
  // denominator n - 2 - trace is negative
  Eigen::MatrixXd X(4, 1);
  X << -3.0, -1.0, 1.0, 3.0;
  Eigen::VectorXd y(4);
  y << 0.5, -0.25, 0.75, 0.1;
  const Dataset data(y, X);
  const Bandwidth bw{1e-3, 1.0};
  const Eigen::VectorXd mu =
    fitted_means(smoother_matrix(X, Eigen::VectorXd::Ones(1), bw, SmootherMode::full()), y);
  FittedCandidate fit{CandidateSpec({0}), IndexCoefficients(Eigen::VectorXd::Ones(1)), bw, mu, mu,
                      0.0, true};
  const IcScores s = ic_scores(data, fit);
  CHECK(std::isinf(s.aicc));
}

TEST_CASE("ic selection takes the argmin with earlier-index ties")
{
  auto score = [](double aic) {
    IcScores s;
    s.aic = aic;
    s.bic = aic;
    s.aicc = aic;
    return s;
  };
  CHECK(ic_select({score(4.0)}, IcCriterion::Aic) == 0);
  CHECK(ic_select({score(5.0), score(3.0), score(4.0)}, IcCriterion::Aic) == 1);
  CHECK(ic_select({score(2.0), score(2.0)}, IcCriterion::Bic) == 0);

  IcScores inf_score;
  inf_score.aic = std::numeric_limits<double>::infinity();
  inf_score.bic = inf_score.aic;
  inf_score.aicc = inf_score.aic;
  CHECK_THROWS_AS(ic_select({inf_score, inf_score}, IcCriterion::Aicc), NoSelectableModelError);
  CHECK_THROWS_AS(ic_select({}, IcCriterion::Aic), std::invalid_argument);
}

TEST_CASE("smoothed criteria weights are a shifted softmax")
{
  auto score = [](double v) {
    IcScores s;
    s.aic = v;
    s.bic = v;
    s.aicc = v;
    return s;
  };

  const WeightVector equal = smoothed_ic_weights({score(7.0), score(7.0), score(7.0)}, IcCriterion::Aic);
  for (Eigen::Index s = 0; s < 3; ++s) {
    CHECK_THAT(equal[s], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-14));
  }

  const WeightVector two = smoothed_ic_weights({score(0.0), score(2.0)}, IcCriterion::Bic);
  CHECK_THAT(two[0], Catch::Matchers::WithinAbs(0.7310585786300049, 1e-12));
  CHECK_THAT(two[1], Catch::Matchers::WithinAbs(0.2689414213699951, 1e-12));

  const WeightVector shifted =
    smoothed_ic_weights({score(123.5), score(125.5)}, IcCriterion::Aicc);
  CHECK_THAT(shifted[0], Catch::Matchers::WithinAbs(two[0], 1e-12));
  CHECK_THAT(shifted[1], Catch::Matchers::WithinAbs(two[1], 1e-12));

  IcScores dead;
  dead.aic = std::numeric_limits<double>::infinity();
  dead.bic = dead.aic;
  dead.aicc = dead.aic;
  const WeightVector mixed = smoothed_ic_weights({score(1.0), dead}, IcCriterion::Aic);
  CHECK(mixed[1] == 0.0);
  CHECK(mixed[0] == 1.0);
  CHECK_THROWS_AS(smoothed_ic_weights({dead}, IcCriterion::Aic), NoSelectableModelError);
}
