#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "simavg/bundle.hpp"
#include "simavg/csv.hpp"
#include "simavg/data.hpp"
#include "simavg/errors.hpp"
#include "simavg/estimator.hpp"
#include "simavg/monte_carlo.hpp"
#include "simavg/parallel.hpp"
#include "simavg/screening.hpp"
#include "simavg/weights.hpp"

namespace simavg {

//! Exit codes shared by every command.
enum ExitCode : int {
  exit_ok = 0,
  exit_usage = 2,
  exit_data = 3,
  exit_numerical = 4,
};

struct RunConfig {
  std::string data_path;
  std::string test_path;
  std::string model_path;
  std::string out_dir = ".";
  std::vector<std::string> methods = all_methods();
  Eigen::Index block_size = 50;
  std::vector<double> kappa_grid = default_kappa_grid();
  std::string screen = "none"; //!< none | correlation | lambda-path
  int screen_count = 0;        //!< 0 = ceil(1.5 n^(1/3))
  std::vector<int> include_covariates; //!< forced into every candidate (screen = none)
  std::vector<int> exclude_covariates; //!< dropped from every candidate (screen = none)
  double lambda_min = 0.001;
  double lambda_max = 0.02;
  int lambda_count = 10;
  std::uint64_t seed = 1;

  // simulate
  std::string config_path;
  std::string preset;
  std::string situation;
  std::string link = "sin";
  std::vector<Eigen::Index> n_list;
  std::vector<double> r2_list;
  int replications = 100;
  Eigen::Index n_test = 1000;
};

namespace detail {

template <class Fn>
int run_command(Fn&& fn)
{
  try {
    fn();
    return exit_ok;
  } catch (const CsvError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_data;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_data;
  } catch (const DegenerateRowError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_numerical;
  } catch (const NoValidBandwidthError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_numerical;
  } catch (const ConditioningError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_numerical;
  } catch (const NoSelectableModelError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_numerical;
  } catch (const DegenerateScreenError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_numerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_data;
  }
}

struct FitArtifacts {
  std::vector<BundleCandidate> candidates;
  bool weights_certified = false;
};

//! Shared fitting pipeline behind cmd_fit: candidate construction
//! (enumeration or screening), per-candidate fits, CV weights, IC scores.
inline FitArtifacts fit_pipeline(const Dataset& data, const RunConfig& cfg)
{
  if (cfg.block_size < 2) {
    throw std::invalid_argument("block size must be at least 2");
  }
  const Eigen::Index n = data.n();
  const BlockPartition partition = make_partition(n, cfg.block_size);

  std::vector<CandidateSpec> specs;
  std::vector<double> lambdas;
  std::vector<std::optional<Eigen::VectorXd>> warms;
  if (cfg.screen == "none") {
    std::vector<int> uncertain;
    for (int j = 0; j < data.p(); ++j) {
      const bool named = std::find(cfg.include_covariates.begin(), cfg.include_covariates.end(),
                                   j) != cfg.include_covariates.end() ||
                         std::find(cfg.exclude_covariates.begin(), cfg.exclude_covariates.end(),
                                   j) != cfg.exclude_covariates.end();
      if (!named) {
        uncertain.push_back(j);
      }
    }
    if (uncertain.size() > 20) {
      throw std::invalid_argument("too many covariates to enumerate every subset; "
                                  "use --screen correlation or --screen lambda-path");
    }
    specs = enumerate_candidates(static_cast<int>(data.p()), cfg.include_covariates,
                                 cfg.exclude_covariates, uncertain);
  } else if (cfg.screen == "correlation") {
    const int count = cfg.screen_count > 0
                        ? cfg.screen_count
                        : static_cast<int>(std::ceil(1.5 * std::cbrt(static_cast<double>(n))));
    specs = screen_by_correlation(data, {}, count).candidates;
  } else if (cfg.screen == "lambda-path") {
    const Bandwidth bw = bandwidth_for(1.0, n);
    ScreenResult screen =
      screen_by_lambda_path(data, cfg.lambda_min, cfg.lambda_max, cfg.lambda_count, bw);
    specs = screen.candidates;
    lambdas = screen.provenance;
    for (std::size_t s = 0; s < specs.size(); ++s) {
      Eigen::VectorXd restricted(specs[s].size());
      for (Eigen::Index k = 0; k < specs[s].size(); ++k) {
        restricted[k] = screen.path_fits[s].beta_hat.beta[specs[s].indices[static_cast<std::size_t>(k)]];
      }
      warms.emplace_back(std::move(restricted));
    }
  } else {
    throw std::invalid_argument("unknown screen method '" + cfg.screen + "'");
  }

  const bool regularized = cfg.screen == "lambda-path";
  const Bandwidth l1_bw = bandwidth_for(1.0, n);

  std::vector<std::optional<FittedCandidate>> fits(specs.size());
  parallel_for(static_cast<std::ptrdiff_t>(specs.size()), [&](std::ptrdiff_t s) {
    try {
      if (regularized) {
        fits[static_cast<std::size_t>(s)] =
          fit_candidate_l1(data, specs[static_cast<std::size_t>(s)],
                           lambdas[static_cast<std::size_t>(s)], partition, l1_bw,
                           warms[static_cast<std::size_t>(s)]);
      } else {
        fits[static_cast<std::size_t>(s)] =
          nls_fit(data, specs[static_cast<std::size_t>(s)], partition, cfg.kappa_grid);
      }
    } catch (const std::runtime_error&) {
    }
  });

  std::vector<std::size_t> ok;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    if (fits[s]) {
      ok.push_back(s);
    }
  }
  if (ok.empty()) {
    throw NoValidBandwidthError("all candidate fits failed");
  }

  std::vector<FittedCandidate> ok_fits;
  for (std::size_t s : ok) {
    ok_fits.push_back(*fits[s]);
  }
  const CvGram gram = build_cv_gram(ok_fits, data.y);
  const SimplexQpSolution qp = solve_simplex_qp(gram);

  FitArtifacts art;
  art.weights_certified = qp.certified;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    BundleCandidate c{specs[s],
                      fits[s] ? fits[s]->beta_hat
                              : IndexCoefficients(Eigen::VectorXd::Ones(1)),
                      fits[s] ? fits[s]->bandwidth : Bandwidth{1.0, 1.0},
                      regularized ? lambdas[s] : std::numeric_limits<double>::quiet_NaN(),
                      fits[s] ? fits[s]->objective : std::numeric_limits<double>::quiet_NaN(),
                      fits[s] ? fits[s]->converged : false,
                      static_cast<bool>(fits[s]),
                      0.0,
                      std::numeric_limits<double>::quiet_NaN(),
                      std::numeric_limits<double>::quiet_NaN(),
                      std::numeric_limits<double>::quiet_NaN()};
    if (!fits[s]) {
      // keep the spec shape for failed candidates
      Eigen::VectorXd b = Eigen::VectorXd::Zero(specs[s].size());
      b[0] = 1.0;
      c.beta = IndexCoefficients(std::move(b));
    }
    art.candidates.push_back(std::move(c));
  }
  for (std::size_t k = 0; k < ok.size(); ++k) {
    art.candidates[ok[k]].weight = qp.weights[static_cast<Eigen::Index>(k)];
    const IcScores scores = ic_scores(data, *fits[ok[k]]);
    art.candidates[ok[k]].aic = scores.aic;
    art.candidates[ok[k]].bic = scores.bic;
    art.candidates[ok[k]].aicc = scores.aicc;
  }
  return art;
}

inline void write_weights_csv(const std::vector<BundleCandidate>& candidates, const std::string& path)
{
  std::vector<std::vector<std::string>> rows;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto& c = candidates[s];
    rows.push_back({std::to_string(s), join_indices(c.spec.indices), format_double(c.weight),
                    std::isnan(c.aic) ? "" : format_double(c.aic),
                    std::isnan(c.bic) ? "" : format_double(c.bic),
                    std::isnan(c.aicc) ? "" : format_double(c.aicc)});
  }
  write_csv(path, {"candidate", "members", "weight", "aic", "bic", "aicc"}, rows);
}

inline void write_fits_csv(const std::vector<BundleCandidate>& candidates,
                           const std::vector<std::string>& names,
                           const std::string& path)
{
  std::vector<std::vector<std::string>> rows;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto& c = candidates[s];
    for (Eigen::Index k = 0; k < c.beta.size(); ++k) {
      const int cov = c.spec.indices[static_cast<std::size_t>(k)];
      rows.push_back({std::to_string(s), std::to_string(cov),
                      names.empty() ? "x" + std::to_string(cov + 1)
                                    : names[static_cast<std::size_t>(cov)],
                      format_double(c.beta.beta[k])});
    }
  }
  write_csv(path, {"candidate", "covariate", "name", "coefficient"}, rows);
}

} // namespace detail

//! Fit candidate single-index models on a training CSV, choose CV weights,
//! and write weights.csv, fits.csv and a reusable model bundle.
inline int cmd_fit(const RunConfig& cfg)
{
  return detail::run_command([&] {
    if (cfg.data_path.empty()) {
      throw std::invalid_argument("fit: --data is required");
    }
    const Dataset data = load_dataset_csv(cfg.data_path);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);

    const detail::FitArtifacts art = detail::fit_pipeline(data, cfg);

    detail::write_weights_csv(art.candidates, (fs::path(cfg.out_dir) / "weights.csv").string());
    detail::write_fits_csv(art.candidates, data.names,
                           (fs::path(cfg.out_dir) / "fits.csv").string());
    ModelBundle bundle{data, art.candidates, cfg.block_size, art.weights_certified};
    save_bundle(bundle, (fs::path(cfg.out_dir) / "model").string());

    int fitted = 0;
    for (const auto& c : art.candidates) {
      fitted += c.fitted ? 1 : 0;
    }
    std::cout << "fitted " << fitted << "/" << art.candidates.size() << " candidate models; "
              << "artifacts in " << cfg.out_dir << '\n';
  });
}

//! Predict a test CSV from a saved model bundle: averaged and per-candidate
//! predictions, plus the variance-adjusted MSPE when responses are present.
inline int cmd_predict(const RunConfig& cfg)
{
  return detail::run_command([&] {
    if (cfg.model_path.empty() || cfg.test_path.empty()) {
      throw std::invalid_argument("predict: --model and --test are required");
    }
    const ModelBundle bundle = load_bundle(cfg.model_path);
    const CsvTable table = read_csv(cfg.test_path);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);

    std::vector<std::string> header = {"row", "prediction"};
    for (std::size_t s = 0; s < bundle.candidates.size(); ++s) {
      header.push_back("cand_" + std::to_string(s));
    }
    const std::string out_path = (fs::path(cfg.out_dir) / "predictions.csv").string();

    if (table.rows.empty()) {
      write_csv(out_path, header, {});
      std::cout << "0 predictions written to " << out_path << '\n';
      return;
    }

    // match training covariates by name
    std::map<std::string, std::size_t> by_name;
    for (std::size_t k = 0; k < table.header.size(); ++k) {
      by_name[table.header[k]] = k;
    }
    std::vector<std::size_t> col_of(static_cast<std::size_t>(bundle.train.p()));
    std::vector<std::string> missing;
    for (Eigen::Index j = 0; j < bundle.train.p(); ++j) {
      const std::string& name = bundle.train.names[static_cast<std::size_t>(j)];
      auto it = by_name.find(name);
      if (it == by_name.end()) {
        missing.push_back(name);
      } else {
        col_of[static_cast<std::size_t>(j)] = it->second;
      }
    }
    if (!missing.empty()) {
      std::string list;
      for (std::size_t k = 0; k < missing.size(); ++k) {
        list += (k ? ", " : "") + missing[k];
      }
      throw DataError("test file is missing covariate columns: " + list);
    }

    const Eigen::Index m = static_cast<Eigen::Index>(table.rows.size());
    Eigen::MatrixXd X(m, bundle.train.p());
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < bundle.train.p(); ++j) {
        X(i, j) = parse_csv_number(table.rows[static_cast<std::size_t>(i)][col_of[static_cast<std::size_t>(j)]],
                                   static_cast<long>(i) + 2,
                                   static_cast<long>(col_of[static_cast<std::size_t>(j)]) + 1);
      }
    }

    Eigen::MatrixXd P(m, static_cast<Eigen::Index>(bundle.candidates.size()));
    P.setZero();
    Eigen::VectorXd averaged = Eigen::VectorXd::Zero(m);
    for (std::size_t s = 0; s < bundle.candidates.size(); ++s) {
      const BundleCandidate& c = bundle.candidates[s];
      if (!c.fitted) {
        continue;
      }
      FittedCandidate fit{c.spec, c.beta, c.bandwidth, {}, {}, c.objective, c.converged};
      P.col(static_cast<Eigen::Index>(s)) =
        predict(bundle.train, fit, X(Eigen::all, c.spec.indices), true);
      averaged += c.weight * P.col(static_cast<Eigen::Index>(s));
    }

    std::vector<std::vector<std::string>> rows;
    for (Eigen::Index i = 0; i < m; ++i) {
      std::vector<std::string> row = {std::to_string(i), format_double(averaged[i])};
      for (std::size_t s = 0; s < bundle.candidates.size(); ++s) {
        row.push_back(format_double(P(i, static_cast<Eigen::Index>(s))));
      }
      rows.push_back(std::move(row));
    }
    write_csv(out_path, header, rows);
    std::cout << m << " predictions written to " << out_path << '\n';

    auto yit = by_name.find(bundle.train.response_name);
    if (yit != by_name.end()) {
      Eigen::VectorXd y_test(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        y_test[i] = parse_csv_number(table.rows[static_cast<std::size_t>(i)][yit->second],
                                     static_cast<long>(i) + 2, static_cast<long>(yit->second) + 1);
      }
      Eigen::VectorXd all_y(bundle.train.n() + m);
      all_y << bundle.train.y, y_test;
      const double sigma2 = (all_y.array() - all_y.mean()).square().sum() /
                            static_cast<double>(all_y.size() - 1);
      std::cout << "variance-adjusted MSPE: " << format_double(metric_mspe(y_test, averaged, sigma2))
                << '\n';
    }
  });
}

namespace detail {

struct SimulationPlan {
  Situation situation = Situation::S1;
  Link link = Link::Sin;
  std::vector<Eigen::Index> n_list;
  std::vector<double> r2_list;
  ExperimentConfig experiment;
  Eigen::Index n_test = 1000;
};

inline Situation parse_situation(const std::string& text)
{
  if (text == "1") {
    return Situation::S1;
  }
  if (text == "2") {
    return Situation::S2;
  }
  if (text == "3") {
    return Situation::S3;
  }
  if (text == "4") {
    return Situation::S4;
  }
  if (text == "5" || text == "p-greater-n" || text == "pgn") {
    return Situation::PGreaterN;
  }
  throw std::invalid_argument("unknown situation '" + text + "' (use 1, 2, 3, 4 or p-greater-n)");
}

inline Link parse_link(const std::string& text)
{
  if (text == "sin") {
    return Link::Sin;
  }
  if (text == "tobit") {
    return Link::Tobit;
  }
  throw std::invalid_argument("unknown link '" + text + "' (use sin or tobit)");
}

inline SimulationPlan plan_from_config(const RunConfig& cfg)
{
  SimulationPlan plan;
  plan.experiment.methods = cfg.methods;
  plan.experiment.seed = cfg.seed;
  plan.experiment.block_size = cfg.block_size;
  plan.experiment.kappa_grid = cfg.kappa_grid;
  plan.experiment.lambda_min = cfg.lambda_min;
  plan.experiment.lambda_max = cfg.lambda_max;
  plan.experiment.lambda_count = cfg.lambda_count;
  plan.experiment.replications = cfg.replications;
  plan.n_test = cfg.n_test;

  if (!cfg.preset.empty()) {
    if (cfg.preset == "smoke") {
      plan.situation = Situation::S1;
      plan.n_list = {100};
      plan.r2_list = {0.5};
      plan.experiment.replications = 5;
      plan.n_test = 200;
    } else if (cfg.preset == "theorem1-trend") {
      plan.situation = Situation::S1;
      plan.n_list = {100, 200, 300};
      plan.r2_list = {0.5};
      plan.experiment.replications = 100;
    } else if (cfg.preset == "theorem2-trend") {
      plan.situation = Situation::S2;
      plan.n_list = {100, 200, 300};
      plan.r2_list = {0.5, 0.7};
      plan.experiment.replications = 100;
    } else if (cfg.preset == "p-greater-n") {
      plan.situation = Situation::PGreaterN;
      plan.n_list = {100};
      plan.r2_list = {0.3, 0.5, 0.7};
      plan.experiment.replications = 50;
    } else {
      throw std::invalid_argument("unknown preset '" + cfg.preset + "'");
    }
    return plan;
  }

  if (!cfg.config_path.empty()) {
    std::ifstream in(cfg.config_path);
    if (!in) {
      throw DataError("cannot open config file '" + cfg.config_path + "'");
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config parse failure: " + std::string(e.what()));
    }
    plan.situation = parse_situation(j.contains("situation") && j["situation"].is_number()
                                       ? std::to_string(j["situation"].get<int>())
                                       : j.value("situation", "1"));
    plan.link = parse_link(j.value("link", "sin"));
    for (const auto& v : j.value("n", std::vector<int>{100})) {
      plan.n_list.push_back(v);
    }
    for (const auto& v : j.value("r2", std::vector<double>{0.5})) {
      plan.r2_list.push_back(v);
    }
    plan.experiment.replications = j.value("replications", plan.experiment.replications);
    plan.experiment.seed = j.value("seed", plan.experiment.seed);
    plan.experiment.block_size = j.value("block_size", 50);
    if (j.contains("methods")) {
      plan.experiment.methods = j["methods"].get<std::vector<std::string>>();
    }
    if (j.contains("kappa_grid")) {
      plan.experiment.kappa_grid = j["kappa_grid"].get<std::vector<double>>();
    }
    plan.experiment.lambda_min = j.value("lambda_min", plan.experiment.lambda_min);
    plan.experiment.lambda_max = j.value("lambda_max", plan.experiment.lambda_max);
    plan.experiment.lambda_count = j.value("lambda_count", plan.experiment.lambda_count);
    plan.n_test = j.value("n_test", 1000);
    return plan;
  }

  if (cfg.situation.empty()) {
    throw std::invalid_argument("simulate: provide --situation, --config or --preset");
  }
  plan.situation = parse_situation(cfg.situation);
  plan.link = parse_link(cfg.link);
  plan.n_list = cfg.n_list.empty() ? std::vector<Eigen::Index>{100} : cfg.n_list;
  plan.r2_list = cfg.r2_list.empty() ? std::vector<double>{0.5} : cfg.r2_list;
  return plan;
}

} // namespace detail

//! Run a replicated simulation grid and write per-replication and summary
//! CSVs (tidy layout: one row per replication, method and metric).
inline int cmd_simulate(const RunConfig& cfg)
{
  return detail::run_command([&] {
    detail::SimulationPlan plan = detail::plan_from_config(cfg);
    detail::validate_methods(plan.experiment.methods);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);

    const std::string sit_name = plan.situation == Situation::PGreaterN
                                   ? "p-greater-n"
                                   : std::to_string(static_cast<int>(plan.situation));
    const std::string link_name = plan.link == Link::Sin ? "sin" : "tobit";

    std::vector<std::vector<std::string>> rep_rows;
    std::vector<std::vector<std::string>> summary_rows;
    std::size_t cell = 0;
    for (const Eigen::Index n : plan.n_list) {
      for (const double r2 : plan.r2_list) {
        DgpSpec dgp = dgp_for_situation(plan.situation, plan.link, n, r2, plan.n_test);
        ExperimentConfig exp_cfg = plan.experiment;
        exp_cfg.seed = derive_seed(plan.experiment.seed, cell++);
        const auto results = run_experiment(dgp, exp_cfg);

        auto cell_prefix = [&](int rep) {
          return std::vector<std::string>{sit_name, link_name, std::to_string(n),
                                          format_double(r2), std::to_string(rep)};
        };
        for (std::size_t d = 0; d < results.size(); ++d) {
          const auto& rep = results[d];
          if (!rep.ok) {
            auto row = cell_prefix(static_cast<int>(d));
            row.insert(row.end(), {"reference", "skipped", "1"});
            rep_rows.push_back(std::move(row));
            continue;
          }
          for (const auto& [method, loss] : rep.loss) {
            auto add = [&](const std::string& metric, double value) {
              if (!std::isfinite(value)) {
                return;
              }
              auto row = cell_prefix(static_cast<int>(d));
              row.insert(row.end(), {method, metric, format_double(value)});
              rep_rows.push_back(std::move(row));
            };
            add("loss", loss);
            if (rep.inf_loss_all > 0.0) {
              add("relative_loss", loss / rep.inf_loss_all);
            }
            if (rep.loss_min > 0.0) {
              add("nmspe_ratio", loss / rep.loss_min);
            }
            if (method == "jcvma") {
              add("weight_on_correct", rep.weight_on_correct);
            }
          }
          auto add_ref = [&](const std::string& metric, double value) {
            if (!std::isfinite(value)) {
              return;
            }
            auto row = cell_prefix(static_cast<int>(d));
            row.insert(row.end(), {"reference", metric, format_double(value)});
            rep_rows.push_back(std::move(row));
          };
          add_ref("inf_loss_all", rep.inf_loss_all);
          add_ref("inf_loss_misspecified", rep.inf_loss_misspecified);
          add_ref("loss_min", rep.loss_min);
        }

        for (const std::string& method : plan.experiment.methods) {
          auto add_summary = [&](const std::string& metric, double value) {
            summary_rows.push_back({sit_name, link_name, std::to_string(n), format_double(r2),
                                    method, metric, format_double(value)});
          };
          try {
            add_summary("relative_loss", metric_relative_loss(results, method));
          } catch (const std::invalid_argument&) {
          }
          try {
            add_summary("nmspe", metric_nmspe(results, method));
          } catch (const std::invalid_argument&) {
          }
          if (method == "jcvma") {
            try {
              add_summary("weight_on_correct", metric_weight_consistency(results));
            } catch (const std::invalid_argument&) {
            }
          }
        }
        std::cout << "situation " << sit_name << " n=" << n << " r2=" << r2 << ": "
                  << results.size() << " replications done\n";
      }
    }

    write_csv((fs::path(cfg.out_dir) / "replications.csv").string(),
              {"situation", "link", "n", "r2", "replication", "method", "metric", "value"},
              rep_rows);
    write_csv((fs::path(cfg.out_dir) / "summary.csv").string(),
              {"situation", "link", "n", "r2", "method", "metric", "value"}, summary_rows);
  });
}

} // namespace simavg
