#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "simavg/errors.hpp"

namespace simavg {

//! Response vector plus covariate matrix; the universe all candidate
//! models draw their covariates from.
struct Dataset {
  Eigen::VectorXd y;
  Eigen::MatrixXd X;
  std::vector<std::string> names; //!< empty, or one label per covariate
  std::string response_name = "y";

  Dataset(Eigen::VectorXd y_in, Eigen::MatrixXd X_in, std::vector<std::string> names_in = {})
    : y(std::move(y_in))
    , X(std::move(X_in))
    , names(std::move(names_in))
  {
    if (X.rows() != y.size()) {
      throw std::invalid_argument("dataset: y length must equal X row count");
    }
    if (y.size() < 2) {
      throw std::invalid_argument("dataset: need at least 2 observations");
    }
    if (X.cols() < 1) {
      throw std::invalid_argument("dataset: need at least 1 covariate");
    }
    if (!y.allFinite() || !X.allFinite()) {
      throw std::invalid_argument("dataset: non-finite entries");
    }
    if (!names.empty() && static_cast<Eigen::Index>(names.size()) != X.cols()) {
      throw std::invalid_argument("dataset: name count must match covariate count");
    }
  }

  Eigen::Index n() const { return y.size(); }
  Eigen::Index p() const { return X.cols(); }

  //! Covariate columns in the given order.
  Eigen::MatrixXd columns(const std::vector<int>& idx) const
  {
    Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] < 0 || idx[k] >= X.cols()) {
        throw std::invalid_argument("covariate index out of range");
      }
      out.col(static_cast<Eigen::Index>(k)) = X.col(idx[k]);
    }
    return out;
  }

  Dataset first_rows(Eigen::Index m) const
  {
    if (m < 2 || m > n()) {
      throw std::invalid_argument("dataset: row split out of range");
    }
    Dataset out(y.head(m), X.topRows(m), names);
    out.response_name = response_name;
    return out;
  }

  Dataset rows_from(Eigen::Index m) const
  {
    if (m < 0 || n() - m < 2) {
      throw std::invalid_argument("dataset: row split out of range");
    }
    Dataset out(y.tail(n() - m), X.bottomRows(n() - m), names);
    out.response_name = response_name;
    return out;
  }

  Dataset first_covariates(Eigen::Index k) const
  {
    if (k < 1 || k > p()) {
      throw std::invalid_argument("dataset: covariate split out of range");
    }
    std::vector<std::string> sub_names;
    if (!names.empty()) {
      sub_names.assign(names.begin(), names.begin() + k);
    }
    Dataset out(y, X.leftCols(k), std::move(sub_names));
    out.response_name = response_name;
    return out;
  }
};

//! Ordered, distinct covariate indices defining one candidate model. The
//! first index anchors the identification normalization: its coefficient
//! is fixed to one.
struct CandidateSpec {
  std::vector<int> indices;

  explicit CandidateSpec(std::vector<int> idx)
    : indices(std::move(idx))
  {
    if (indices.empty()) {
      throw std::invalid_argument("candidate spec: needs at least one covariate");
    }
    std::vector<int> sorted = indices;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() < 0) {
      throw std::invalid_argument("candidate spec: negative covariate index");
    }
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw std::invalid_argument("candidate spec: duplicate covariate index");
    }
  }

  int anchor() const { return indices.front(); }
  Eigen::Index size() const { return static_cast<Eigen::Index>(indices.size()); }
  bool contains(int j) const
  {
    return std::find(indices.begin(), indices.end(), j) != indices.end();
  }
};

//! Contiguous observation blocks for J-fold leave-block-out CV. All blocks
//! hold block_size() observations except the last, which absorbs the
//! remainder when the block size does not divide n.
class BlockPartition {
public:
  BlockPartition(Eigen::Index n, Eigen::Index block_size)
    : n_(n)
    , block_size_(block_size)
  {
    if (block_size < 1 || block_size > n) {
      throw std::invalid_argument("partition: block size must lie in [1, n]");
    }
    block_count_ = n / block_size;
  }

  Eigen::Index n() const { return n_; }
  Eigen::Index block_size() const { return block_size_; }
  Eigen::Index block_count() const { return block_count_; }

  //! Leave-block-out needs at least two blocks.
  bool degenerate() const { return block_count_ < 2; }

  Eigen::Index block_of(Eigen::Index i) const
  {
    if (i < 0 || i >= n_) {
      throw std::invalid_argument("partition: observation index out of range");
    }
    return std::min(i / block_size_, block_count_ - 1);
  }

  Eigen::Index block_begin(Eigen::Index j) const
  {
    check_block(j);
    return j * block_size_;
  }

  Eigen::Index block_end(Eigen::Index j) const
  {
    check_block(j);
    return j + 1 == block_count_ ? n_ : (j + 1) * block_size_;
  }

  Eigen::Index block_length(Eigen::Index j) const { return block_end(j) - block_begin(j); }

private:
  void check_block(Eigen::Index j) const
  {
    if (j < 0 || j >= block_count_) {
      throw std::invalid_argument("partition: block index out of range");
    }
  }

  Eigen::Index n_;
  Eigen::Index block_size_;
  Eigen::Index block_count_;
};

inline BlockPartition make_partition(Eigen::Index n, Eigen::Index target_block_size)
{
  return BlockPartition(n, target_block_size);
}

//! Nonnegative weights over candidate models summing to one.
class WeightVector {
public:
  explicit WeightVector(Eigen::VectorXd w)
    : w_(std::move(w))
  {
    if (w_.size() < 1) {
      throw std::invalid_argument("weights: empty vector");
    }
    for (Eigen::Index s = 0; s < w_.size(); ++s) {
      if (!(w_[s] >= 0.0 && w_[s] <= 1.0)) {
        throw std::invalid_argument("weights: entries must lie in [0, 1]");
      }
    }
    if (std::abs(w_.sum() - 1.0) > 1e-10) {
      throw std::invalid_argument("weights: entries must sum to one");
    }
  }

  const Eigen::VectorXd& values() const { return w_; }
  double operator[](Eigen::Index s) const { return w_[s]; }
  Eigen::Index size() const { return w_.size(); }

private:
  Eigen::VectorXd w_;
};

//! All candidate models combining the always-included covariates with every
//! nonempty subset of the uncertain ones. Order is canonical: binary
//! counting over the (ascending) uncertain indices.
inline std::vector<CandidateSpec> enumerate_candidates(int p,
                                                       std::vector<int> always_include,
                                                       std::vector<int> always_exclude,
                                                       std::vector<int> uncertain)
{
  auto check_range = [p](const std::vector<int>& v) {
    for (int j : v) {
      if (j < 0 || j >= p) {
        throw std::invalid_argument("enumerate_candidates: index out of range");
      }
    }
  };
  check_range(always_include);
  check_range(always_exclude);
  check_range(uncertain);
  if (uncertain.empty()) {
    throw std::invalid_argument("enumerate_candidates: uncertain set must be nonempty");
  }

  std::vector<char> seen(static_cast<std::size_t>(p), 0);
  auto mark = [&seen](const std::vector<int>& v) {
    for (int j : v) {
      if (seen[static_cast<std::size_t>(j)]) {
        throw std::invalid_argument("enumerate_candidates: index sets overlap");
      }
      seen[static_cast<std::size_t>(j)] = 1;
    }
  };
  mark(always_include);
  mark(always_exclude);
  mark(uncertain);

  std::sort(always_include.begin(), always_include.end());
  std::sort(uncertain.begin(), uncertain.end());
  const int k = static_cast<int>(uncertain.size());
  if (k > 24) {
    throw std::invalid_argument("enumerate_candidates: uncertain set too large to enumerate");
  }

  std::vector<CandidateSpec> specs;
  specs.reserve((1u << k) - 1u);
  for (unsigned mask = 1; mask < (1u << k); ++mask) {
    std::vector<int> idx = always_include;
    for (int b = 0; b < k; ++b) {
      if (mask & (1u << b)) {
        idx.push_back(uncertain[static_cast<std::size_t>(b)]);
      }
    }
    std::sort(idx.begin(), idx.end());
    specs.emplace_back(std::move(idx));
  }
  return specs;
}

} // namespace simavg
