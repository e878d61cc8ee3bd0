#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "simavg/monte_carlo.hpp"

using namespace simavg;

TEST_CASE("situation coefficient layouts")
{
  Eigen::VectorXd s1(7);
  s1 << 1.0, 1.5, 1.0, 0.0, 0.1, -1.5, 1.5;
  CHECK(situation_beta(Situation::S1, 100) == s1);

  Eigen::VectorXd s2(7);
  s2 << 1.0, 1.5, 0.0, 1.0, 0.0, -1.5, 1.5;
  CHECK(situation_beta(Situation::S2, 300) == s2);

  // ceil(1.5 * 100^(1/3)) = 7 middle entries
  const Eigen::VectorXd s3 = situation_beta(Situation::S3, 100);
  REQUIRE(s3.size() == 1 + 7 + 2);
  CHECK(s3[0] == 1.0);
  Eigen::VectorXd middle(7);
  middle << 1.5, 1.0, 0.0, 0.1, -1.5, 1.5, 1.0; // repeating (1.5, 1, 0, 0.1, -1.5)
  CHECK(s3.segment(1, 7) == middle);
  CHECK(s3[8] == 1.0);
  CHECK(s3[9] == 1.5);

  const Eigen::VectorXd s4 = situation_beta(Situation::S4, 100);
  REQUIRE(s4.size() == 10);
  Eigen::VectorXd middle4(7);
  middle4 << 1.5, 0.0, 1.0, 0.0, 0.0, -1.5, 0.0;
  CHECK(s4.segment(1, 7) == middle4);

  const Eigen::VectorXd pgn = situation_beta(Situation::PGreaterN, 100, 200);
  REQUIRE(pgn.size() == 200);
  CHECK(pgn[0] == 1.0);
  CHECK(pgn[1] == 2.0);
  CHECK(pgn[10] == 0.02);
  CHECK(pgn[11] == 0.0);
  CHECK(pgn[198] == 0.0);
  CHECK(pgn[199] == 4.0);
}

TEST_CASE("the covariate covariance follows rho^|i-j|")
{
  const Eigen::MatrixXd sigma = detail::ar_covariance(4, 0.5);
  CHECK(sigma(0, 0) == 1.0);
  CHECK(sigma(1, 3) == 0.25);
  CHECK(sigma(3, 1) == 0.25);
  CHECK(sigma(0, 3) == 0.125);
}

TEST_CASE("generation is deterministic in the seed")
{
  const DgpSpec spec = dgp_for_situation(Situation::S1, Link::Sin, 50, 0.5, 20);
  const GeneratedData a = generate(spec, 42);
  const GeneratedData b = generate(spec, 42);
  CHECK((a.train.X - b.train.X).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.train.y - b.train.y).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.test.X - b.test.X).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((a.mu_test - b.mu_test).lpNorm<Eigen::Infinity>() == 0.0);

  const GeneratedData c = generate(spec, 43);
  CHECK((a.train.y - c.train.y).lpNorm<Eigen::Infinity>() > 0.0);

  DgpSpec bad = spec;
  bad.r_squared = 1.2;
  CHECK_THROWS_AS(generate(bad, 1), std::invalid_argument);
}

TEST_CASE("noise calibration hits the target variance ratio")
{
  for (const Link link : {Link::Sin, Link::Tobit}) {
    DgpSpec spec = dgp_for_situation(Situation::S1, link, 100000, 0.5, 2);
    const GeneratedData gen = generate(spec, 7);
    const double var_mu = detail::sample_variance(gen.mu_train);
    const double var_y = detail::sample_variance(gen.train.y);
    CHECK(var_mu / var_y >= 0.48);
    CHECK(var_mu / var_y <= 0.52);
  }
}

TEST_CASE("tobit responses are censored at zero")
{
  DgpSpec spec = dgp_for_situation(Situation::S1, Link::Tobit, 500, 0.5, 10);
  const GeneratedData gen = generate(spec, 3);
  CHECK(gen.train.y.minCoeff() >= 0.0);
  CHECK((gen.train.y.array() == 0.0).any());
  CHECK(gen.mu_train.minCoeff() > 0.0); // analytic conditional mean is positive
}

TEST_CASE("correct flags require covering the true support")
{
  Eigen::VectorXd beta(4);
  beta << 1.0, 0.0, 2.0, 0.0;
  const std::vector<CandidateSpec> specs = {CandidateSpec({0, 2}), CandidateSpec({0, 1}),
                                            CandidateSpec({0, 1, 2, 3})};
  const auto flags = correct_flags(beta, specs);
  CHECK(flags == std::vector<bool>{true, false, true});
}

TEST_CASE("candidate construction per situation")
{
  ExperimentConfig cfg;
  {
    const DgpSpec spec = dgp_for_situation(Situation::S1, Link::Sin, 100, 0.5, 10);
    const GeneratedData gen = generate(spec, 5);
    const SituationCandidates cands = candidates_for_situation(spec, gen.train, cfg);
    CHECK(cands.specs.size() == 31);
    for (const auto& s : cands.specs) {
      CHECK(s.contains(0));
      CHECK_FALSE(s.contains(6));
    }
    for (bool c : cands.correct) {
      CHECK_FALSE(c); // the omitted last covariate has a nonzero coefficient
    }
  }
  {
    const DgpSpec spec = dgp_for_situation(Situation::S2, Link::Sin, 100, 0.5, 10);
    const GeneratedData gen = generate(spec, 5);
    const SituationCandidates cands = candidates_for_situation(spec, gen.train, cfg);
    CHECK(cands.specs.size() == 31);
    int n_correct = 0;
    for (std::size_t s = 0; s < cands.specs.size(); ++s) {
      CHECK(cands.specs[s].contains(0));
      CHECK(cands.specs[s].contains(6));
      n_correct += cands.correct[s] ? 1 : 0;
    }
    CHECK(n_correct == 4); // subsets containing {1, 3, 5}: free choice over {2, 4}
  }
  {
    const DgpSpec spec = dgp_for_situation(Situation::S3, Link::Sin, 100, 0.5, 10);
    const GeneratedData gen = generate(spec, 5);
    const SituationCandidates cands = candidates_for_situation(spec, gen.train, cfg);
    CHECK(cands.specs.size() == 7); // ceil(1.5 * 100^(1/3))
    const int p = static_cast<int>(spec.beta.size());
    for (const auto& s : cands.specs) {
      CHECK(s.contains(0));
      CHECK_FALSE(s.contains(p - 1));
      CHECK_FALSE(s.contains(p - 2));
    }
  }
  {
    const DgpSpec spec = dgp_for_situation(Situation::S4, Link::Sin, 100, 0.5, 10);
    const GeneratedData gen = generate(spec, 5);
    const SituationCandidates cands = candidates_for_situation(spec, gen.train, cfg);
    CHECK(cands.specs.size() == 7);
    CHECK(cands.correct.back()); // the largest nested model covers the whole middle
  }
}

TEST_CASE("a single-candidate experiment pins every ratio at one")
{
  DgpSpec spec = dgp_for_situation(Situation::S2, Link::Sin, 60, 0.6, 40);
  spec.beta = Eigen::VectorXd(3);
  spec.beta << 1.0, 1.5, 1.0;
  ExperimentConfig cfg;
  cfg.replications = 1;
  cfg.seed = 11;
  cfg.block_size = 30;
  const auto results = run_experiment(spec, cfg);
  REQUIRE(results.size() == 1);
  const ReplicationResult& rep = results[0];
  REQUIRE(rep.ok);
  CHECK(rep.n_candidates == 1);
  CHECK_THAT(rep.loss.at("jcvma"), Catch::Matchers::WithinRel(rep.loss_min, 1e-12));
  CHECK_THAT(metric_relative_loss(results, "jcvma"), Catch::Matchers::WithinAbs(1.0, 1e-9));
  CHECK_THAT(metric_nmspe(results, "jcvma"), Catch::Matchers::WithinAbs(1.0, 1e-9));
  CHECK_THAT(metric_weight_consistency(results), Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("experiments are deterministic and internally consistent")
{
  DgpSpec spec = dgp_for_situation(Situation::S1, Link::Sin, 100, 0.5, 100);
  ExperimentConfig cfg;
  cfg.replications = 2;
  cfg.seed = 101;
  const auto results = run_experiment(spec, cfg);
  const auto again = run_experiment(spec, cfg);
  REQUIRE(results.size() == 2);
  for (std::size_t d = 0; d < results.size(); ++d) {
    REQUIRE(results[d].ok);
    CHECK(results[d].loss.at("jcvma") == again[d].loss.at("jcvma"));
    CHECK(results[d].loss.at("full") == again[d].loss.at("full"));

    // nested feasible sets: simplex optimum <= best vertex
    CHECK(results[d].inf_loss_all <= results[d].loss_min + 1e-6 * (1.0 + results[d].loss_min));
    // weights live on the simplex
    const Eigen::VectorXd& w = results[d].weights.at("jcvma");
    CHECK_THAT(w.sum(), Catch::Matchers::WithinAbs(1.0, 1e-10));
    CHECK(w.minCoeff() >= 0.0);
    for (const std::string& m : all_methods()) {
      CHECK(results[d].loss.count(m) == 1);
    }
  }

  // swapping replication order leaves per-seed results unchanged
  ExperimentConfig one = cfg;
  one.replications = 1;
  const auto first_only = run_experiment(spec, one);
  CHECK(first_only[0].loss.at("jcvma") == results[0].loss.at("jcvma"));

  ExperimentConfig bad = cfg;
  bad.methods = {"jcvma", "nonsense"};
  CHECK_THROWS_AS(run_experiment(spec, bad), std::invalid_argument);
}

TEST_CASE("mspe metric matches its formula")
{
  Eigen::VectorXd y(4);
  y << 1.0, 2.0, 3.0, 4.0;
  CHECK(metric_mspe(y, y, 0.0) == 0.0);

  Eigen::VectorXd yhat(4);
  yhat << 1.5, 1.5, 3.25, 3.5;
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    acc += (yhat[i] - y[i]) * (yhat[i] - y[i]);
  }
  CHECK_THAT(metric_mspe(y, yhat, 0.3), Catch::Matchers::WithinRel(acc / 4.0 - 0.3, 1e-13));
  CHECK_THROWS_AS(metric_mspe(y, yhat.head(2), 0.0), std::invalid_argument);
}

TEST_CASE("time-split table normalizes the full model to one")
{
  DgpSpec spec = dgp_for_situation(Situation::S1, Link::Sin, 120, 0.6, 2);
  spec.beta = Eigen::VectorXd(3);
  spec.beta << 1.0, 1.5, -1.0;
  const GeneratedData gen = generate(spec, 77);
  ExperimentConfig cfg;
  cfg.block_size = 30;
  const MspeTable table = time_split_mspe(gen.train, {0.6}, cfg);
  REQUIRE(table.methods.size() == 8);
  REQUIRE(table.normalized.cols() == 1);
  for (std::size_t m = 0; m < table.methods.size(); ++m) {
    if (table.methods[m] == "full") {
      CHECK(table.normalized(static_cast<Eigen::Index>(m), 0) == 1.0);
    }
  }
  CHECK(table.train_sizes == std::vector<Eigen::Index>{72});
}
