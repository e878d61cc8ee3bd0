#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "simavg/csv.hpp"
#include "simavg/data.hpp"
#include "simavg/errors.hpp"
#include "simavg/estimator.hpp"

namespace simavg {

enum class ScreenMethod { CorrelationNested, LambdaPath };

//! Reduced candidate set with per-candidate provenance: the |correlation|
//! of the covariate added at each step, or the lambda whose active set the
//! candidate is.
struct ScreenResult {
  ScreenMethod method = ScreenMethod::CorrelationNested;
  std::vector<CandidateSpec> candidates;
  std::vector<double> provenance;
  std::vector<std::string> warnings;
  std::vector<RegularizedFit> path_fits; //!< LambdaPath: the retained fit per candidate
};

//! Nested candidates ordered by |Pearson correlation| with the response:
//! candidate k adds the k-th ranked covariate to the forced set. Covariates
//! in `exclude` never enter. Ties go to the smaller column index.
inline ScreenResult screen_by_correlation(const Dataset& data,
                                          const std::vector<int>& forced,
                                          int count,
                                          const std::vector<int>& exclude = {})
{
  if (data.n() < 3) {
    throw std::invalid_argument("screen_by_correlation: need at least 3 observations");
  }
  std::set<int> forced_set(forced.begin(), forced.end());
  std::set<int> excluded_set(exclude.begin(), exclude.end());
  for (int j : forced) {
    if (j < 0 || j >= data.p()) {
      throw std::invalid_argument("screen_by_correlation: forced index out of range");
    }
    if (excluded_set.count(j)) {
      throw std::invalid_argument("screen_by_correlation: forced and excluded sets overlap");
    }
  }
  const int free_count = static_cast<int>(data.p()) - static_cast<int>(forced_set.size()) -
                         static_cast<int>(excluded_set.size());
  if (count < 1 || count > free_count) {
    throw std::invalid_argument("screen_by_correlation: count exceeds rankable covariates");
  }

  ScreenResult out;
  out.method = ScreenMethod::CorrelationNested;

  const double n = static_cast<double>(data.n());
  const double y_mean = data.y.mean();
  const Eigen::VectorXd yc = data.y.array() - y_mean;
  const double y_sd = std::sqrt(yc.squaredNorm() / (n - 1.0));

  std::vector<std::pair<double, int>> ranked; // (-|corr|, index) for stable ordering
  for (int j = 0; j < data.p(); ++j) {
    if (forced_set.count(j) || excluded_set.count(j)) {
      continue;
    }
    const Eigen::VectorXd xc = data.X.col(j).array() - data.X.col(j).mean();
    const double x_sd = std::sqrt(xc.squaredNorm() / (n - 1.0));
    double corr = 0.0;
    if (x_sd == 0.0 || y_sd == 0.0) {
      out.warnings.push_back("covariate " + std::to_string(j) +
                             " has zero variance; correlation set to 0");
    } else {
      corr = xc.dot(yc) / ((n - 1.0) * x_sd * y_sd);
    }
    ranked.emplace_back(-std::abs(corr), j);
  }
  std::sort(ranked.begin(), ranked.end());

  std::vector<int> members(forced.begin(), forced.end());
  for (int k = 0; k < count; ++k) {
    members.push_back(ranked[static_cast<std::size_t>(k)].second);
    std::vector<int> idx = members;
    std::sort(idx.begin(), idx.end());
    out.candidates.emplace_back(std::move(idx));
    out.provenance.push_back(-ranked[static_cast<std::size_t>(k)].first);
  }
  return out;
}

//! Candidates from the active sets of an L1 path over the full covariate
//! set: an evenly spaced lambda grid (endpoints included), fitted in
//! descending order with warm starts. Duplicate active sets collapse to the
//! candidate with the smallest lambda.
inline ScreenResult screen_by_lambda_path(const Dataset& data,
                                          double lambda_min,
                                          double lambda_max,
                                          int count,
                                          const Bandwidth& bw)
{
  if (!(lambda_min > 0.0) || !(lambda_min < lambda_max)) {
    throw std::invalid_argument("screen_by_lambda_path: need 0 < lambda_min < lambda_max");
  }
  if (count < 2) {
    throw std::invalid_argument("screen_by_lambda_path: need at least 2 grid points");
  }

  std::vector<double> grid(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    grid[static_cast<std::size_t>(i)] =
      lambda_min + (lambda_max - lambda_min) * static_cast<double>(i) / static_cast<double>(count - 1);
  }

  std::vector<int> all(static_cast<std::size_t>(data.p()));
  for (int j = 0; j < data.p(); ++j) {
    all[static_cast<std::size_t>(j)] = j;
  }
  const CandidateSpec full_spec(all);

  std::vector<RegularizedFit> fits;
  fits.reserve(grid.size());
  Eigen::VectorXd warm = Eigen::VectorXd::Zero(data.p());
  warm[0] = 1.0;
  for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
    RegularizedFit fit = l1_nls_fit(data, full_spec, *it, bw, warm);
    warm = fit.beta_hat.beta;
    fits.push_back(std::move(fit));
  }
  std::reverse(fits.begin(), fits.end()); // ascending lambda

  ScreenResult out;
  out.method = ScreenMethod::LambdaPath;
  std::vector<std::vector<int>> seen_sets;
  bool any_beyond_anchor = false;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    // active_set positions equal covariate indices on the full spec
    std::vector<int> active = fits[i].active_set;
    std::sort(active.begin(), active.end());
    if (active.size() > 1) {
      any_beyond_anchor = true;
    }
    if (std::find(seen_sets.begin(), seen_sets.end(), active) != seen_sets.end()) {
      continue;
    }
    seen_sets.push_back(active);
    out.candidates.emplace_back(active);
    out.provenance.push_back(grid[i]);
    out.path_fits.push_back(fits[i]);
  }
  if (!any_beyond_anchor) {
    throw DegenerateScreenError("screen_by_lambda_path: every active set is anchor-only");
  }
  return out;
}

//! CSV export: candidate id, method, lambda or rank score, member indices.
inline void export_screen_csv(const ScreenResult& screen, const std::string& path)
{
  std::vector<std::vector<std::string>> rows;
  const std::string method =
    screen.method == ScreenMethod::CorrelationNested ? "correlation" : "lambda-path";
  for (std::size_t s = 0; s < screen.candidates.size(); ++s) {
    std::string members;
    for (std::size_t k = 0; k < screen.candidates[s].indices.size(); ++k) {
      if (k > 0) {
        members += ';';
      }
      members += std::to_string(screen.candidates[s].indices[k]);
    }
    rows.push_back({std::to_string(s), method, format_double(screen.provenance[s]), members});
  }
  write_csv(path, {"candidate", "method", "lambda_or_rank", "members"}, rows);
}

} // namespace simavg
