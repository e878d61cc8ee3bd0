#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "simavg/csv.hpp"
#include "simavg/data.hpp"
#include "simavg/estimator.hpp"

namespace simavg {

//! One candidate of a persisted model: everything needed to reproduce its
//! out-of-sample predictions plus the bookkeeping shown in weights.csv.
struct BundleCandidate {
  CandidateSpec spec;
  IndexCoefficients beta;
  Bandwidth bandwidth;
  double lambda = std::numeric_limits<double>::quiet_NaN(); //!< NaN when not regularized
  double objective = 0.0;
  bool converged = false;
  bool fitted = false;
  double weight = 0.0;
  double aic = std::numeric_limits<double>::quiet_NaN();
  double bic = std::numeric_limits<double>::quiet_NaN();
  double aicc = std::numeric_limits<double>::quiet_NaN();
};

//! Versioned, self-describing model archive: a manifest plus CSV members
//! under one directory, so any language can read it back.
struct ModelBundle {
  Dataset train;
  std::vector<BundleCandidate> candidates;
  Eigen::Index block_size = 50;
  bool weights_certified = false;
};

namespace detail {

inline std::string join_indices(const std::vector<int>& idx)
{
  std::string out;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (k > 0) {
      out += ';';
    }
    out += std::to_string(idx[k]);
  }
  return out;
}

inline std::vector<int> split_indices(const std::string& text)
{
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t next = text.find(';', pos);
    if (next == std::string::npos) {
      next = text.size();
    }
    out.push_back(std::stoi(text.substr(pos, next - pos)));
    pos = next + 1;
  }
  return out;
}

} // namespace detail

inline void save_bundle(const ModelBundle& bundle, const std::string& dir)
{
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["format"] = "simavg-model";
  manifest["version"] = 1;
  manifest["response"] = bundle.train.response_name;
  manifest["covariates"] = bundle.train.names;
  manifest["block_size"] = bundle.block_size;
  manifest["weights_certified"] = bundle.weights_certified;
  manifest["members"] = {{"train", "train.csv"},
                         {"candidates", "candidates.csv"},
                         {"coefficients", "coefficients.csv"}};
  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) {
    throw std::runtime_error("cannot write manifest in '" + dir + "'");
  }
  mf << manifest.dump(2) << '\n';

  save_dataset_csv(bundle.train, (fs::path(dir) / "train.csv").string());

  std::vector<std::vector<std::string>> cand_rows;
  std::vector<std::vector<std::string>> coef_rows;
  for (std::size_t s = 0; s < bundle.candidates.size(); ++s) {
    const BundleCandidate& c = bundle.candidates[s];
    cand_rows.push_back({std::to_string(s), detail::join_indices(c.spec.indices),
                         format_double(c.bandwidth.kappa), format_double(c.bandwidth.h),
                         std::isnan(c.lambda) ? "" : format_double(c.lambda),
                         format_double(c.objective), c.converged ? "1" : "0", c.fitted ? "1" : "0",
                         format_double(c.weight), std::isnan(c.aic) ? "" : format_double(c.aic),
                         std::isnan(c.bic) ? "" : format_double(c.bic),
                         std::isnan(c.aicc) ? "" : format_double(c.aicc)});
    for (Eigen::Index k = 0; k < c.beta.size(); ++k) {
      coef_rows.push_back({std::to_string(s),
                           std::to_string(c.spec.indices[static_cast<std::size_t>(k)]),
                           format_double(c.beta.beta[k])});
    }
  }
  write_csv((fs::path(dir) / "candidates.csv").string(),
            {"candidate", "members", "kappa", "h", "lambda", "objective", "converged", "fitted",
             "weight", "aic", "bic", "aicc"},
            cand_rows);
  write_csv((fs::path(dir) / "coefficients.csv").string(),
            {"candidate", "covariate", "coefficient"}, coef_rows);
}

inline ModelBundle load_bundle(const std::string& dir)
{
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) {
    throw std::runtime_error("cannot open model manifest in '" + dir + "'");
  }
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.value("format", "") != "simavg-model" || manifest.value("version", 0) != 1) {
    throw std::runtime_error("unrecognized model bundle format in '" + dir + "'");
  }

  Dataset train = load_dataset_csv(
    (fs::path(dir) / manifest["members"].value("train", "train.csv")).string());

  const CsvTable cand_table = read_csv(
    (fs::path(dir) / manifest["members"].value("candidates", "candidates.csv")).string());
  const CsvTable coef_table = read_csv(
    (fs::path(dir) / manifest["members"].value("coefficients", "coefficients.csv")).string());

  std::vector<std::vector<double>> coefs(cand_table.rows.size());
  for (std::size_t r = 0; r < coef_table.rows.size(); ++r) {
    const auto& row = coef_table.rows[r];
    const std::size_t id = static_cast<std::size_t>(std::stoul(row[0]));
    if (id >= coefs.size()) {
      throw std::runtime_error("model bundle: coefficient row for unknown candidate");
    }
    coefs[id].push_back(parse_csv_number(row[2], static_cast<long>(r) + 2, 3));
  }

  ModelBundle bundle{std::move(train), {}, manifest.value("block_size", 50),
                     manifest.value("weights_certified", false)};
  for (std::size_t s = 0; s < cand_table.rows.size(); ++s) {
    const auto& row = cand_table.rows[s];
    const long line = static_cast<long>(s) + 2;
    CandidateSpec spec(detail::split_indices(row[1]));
    Eigen::VectorXd beta(static_cast<Eigen::Index>(coefs[s].size()));
    for (std::size_t k = 0; k < coefs[s].size(); ++k) {
      beta[static_cast<Eigen::Index>(k)] = coefs[s][k];
    }
    BundleCandidate c{std::move(spec),
                      IndexCoefficients(std::move(beta)),
                      Bandwidth{parse_csv_number(row[3], line, 4), parse_csv_number(row[2], line, 3)},
                      row[4].empty() ? std::numeric_limits<double>::quiet_NaN()
                                     : parse_csv_number(row[4], line, 5),
                      parse_csv_number(row[5], line, 6),
                      row[6] == "1",
                      row[7] == "1",
                      parse_csv_number(row[8], line, 9),
                      row[9].empty() ? std::numeric_limits<double>::quiet_NaN()
                                     : parse_csv_number(row[9], line, 10),
                      row[10].empty() ? std::numeric_limits<double>::quiet_NaN()
                                      : parse_csv_number(row[10], line, 11),
                      row[11].empty() ? std::numeric_limits<double>::quiet_NaN()
                                      : parse_csv_number(row[11], line, 12)};
    bundle.candidates.push_back(std::move(c));
  }
  return bundle;
}

} // namespace simavg
