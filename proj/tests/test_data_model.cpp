#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "simavg/csv.hpp"
#include "simavg/data.hpp"

using namespace simavg;

namespace {

Dataset tiny_dataset()
{
  Eigen::VectorXd y(3);
  y << 1.0, 2.0, 3.0;
  Eigen::MatrixXd X(3, 2);
  X << 0.5, -1.0, 1.5, 0.25, -0.5, 2.0;
  return Dataset(y, X, {"a", "b"});
}

} // namespace

TEST_CASE("dataset invariants")
{
  CHECK_THROWS_AS(Dataset(Eigen::VectorXd::Ones(3), Eigen::MatrixXd::Ones(2, 2)),
                  std::invalid_argument);
  CHECK_THROWS_AS(Dataset(Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Ones(1, 2)),
                  std::invalid_argument);
  Eigen::VectorXd bad = Eigen::VectorXd::Ones(3);
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Dataset(bad, Eigen::MatrixXd::Ones(3, 2)), std::invalid_argument);
  CHECK_THROWS_AS(Dataset(Eigen::VectorXd::Ones(3), Eigen::MatrixXd::Ones(3, 2), {"only-one"}),
                  std::invalid_argument);

  const Dataset d = tiny_dataset();
  CHECK(d.n() == 3);
  CHECK(d.p() == 2);
  const Eigen::MatrixXd cols = d.columns({1, 0});
  CHECK(cols(0, 0) == -1.0);
  CHECK(cols(0, 1) == 0.5);
  CHECK_THROWS_AS(d.columns({2}), std::invalid_argument);
}

TEST_CASE("candidate spec validation")
{
  const CandidateSpec spec({3, 1, 5});
  CHECK(spec.anchor() == 3);
  CHECK(spec.size() == 3);
  CHECK(spec.contains(5));
  CHECK_FALSE(spec.contains(2));
  CHECK_THROWS_AS(CandidateSpec({}), std::invalid_argument);
  CHECK_THROWS_AS(CandidateSpec({1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(CandidateSpec({-1}), std::invalid_argument);
}

TEST_CASE("enumerate_candidates matches the benchmark design count")
{
  const auto specs = enumerate_candidates(7, {0}, {6}, {1, 2, 3, 4, 5});
  CHECK(specs.size() == 31);
  for (const auto& s : specs) {
    CHECK(s.contains(0));
    CHECK_FALSE(s.contains(6));
    CHECK(s.anchor() == 0);
  }
  std::set<std::vector<int>> distinct;
  for (const auto& s : specs) {
    distinct.insert(s.indices);
  }
  CHECK(distinct.size() == 31);
}

TEST_CASE("enumerate_candidates edge cases")
{
  const auto one = enumerate_candidates(2, {0}, {}, {1});
  REQUIRE(one.size() == 1);
  CHECK(one[0].indices == std::vector<int>{0, 1});

  CHECK(enumerate_candidates(4, {}, {}, {0, 1, 2, 3}).size() == 15);

  CHECK_THROWS_AS(enumerate_candidates(4, {0}, {0}, {1}), std::invalid_argument);
  CHECK_THROWS_AS(enumerate_candidates(4, {0}, {}, {}), std::invalid_argument);
  CHECK_THROWS_AS(enumerate_candidates(4, {0}, {}, {9}), std::invalid_argument);
}

TEST_CASE("enumerate_candidates count is exhaustive up to 12 uncertain covariates")
{
  for (int k = 1; k <= 12; ++k) {
    std::vector<int> uncertain;
    for (int j = 0; j < k; ++j) {
      uncertain.push_back(j);
    }
    const auto specs = enumerate_candidates(k, {}, {}, uncertain);
    CHECK(specs.size() == (1u << k) - 1u);
    std::set<std::vector<int>> distinct;
    for (const auto& s : specs) {
      distinct.insert(s.indices);
    }
    CHECK(distinct.size() == specs.size());
  }
}

TEST_CASE("partition layout follows the remainder-absorption rule")
{
  const BlockPartition two = make_partition(100, 50);
  CHECK(two.block_count() == 2);
  CHECK(two.block_length(0) == 50);
  CHECK(two.block_length(1) == 50);
  CHECK_FALSE(two.degenerate());

  const BlockPartition single = make_partition(10, 10);
  CHECK(single.block_count() == 1);
  CHECK(single.degenerate());

  const BlockPartition uneven = make_partition(103, 50);
  CHECK(uneven.block_count() == 2);
  CHECK(uneven.block_length(0) == 50);
  CHECK(uneven.block_length(1) == 53);
  CHECK(uneven.block_length(0) + uneven.block_length(1) == 103);

  CHECK_THROWS_AS(make_partition(10, 11), std::invalid_argument);
}

TEST_CASE("every observation lands in exactly one block")
{
  for (const auto [n, m] : std::vector<std::pair<Eigen::Index, Eigen::Index>>{
         {100, 50}, {103, 50}, {17, 5}, {7, 3}, {5, 1}}) {
    const BlockPartition part = make_partition(n, m);
    std::vector<int> hits(static_cast<std::size_t>(n), 0);
    for (Eigen::Index j = 0; j < part.block_count(); ++j) {
      for (Eigen::Index i = part.block_begin(j); i < part.block_end(j); ++i) {
        hits[static_cast<std::size_t>(i)] += 1;
        CHECK(part.block_of(i) == j);
      }
    }
    for (int h : hits) {
      CHECK(h == 1);
    }
  }
}

TEST_CASE("weight vector construction enforces the simplex")
{
  Eigen::VectorXd good(3);
  good << 0.2, 0.3, 0.5;
  CHECK_NOTHROW(WeightVector(good));

  Eigen::VectorXd negative(2);
  negative << -0.1, 1.1;
  CHECK_THROWS_AS(WeightVector(negative), std::invalid_argument);

  Eigen::VectorXd off(2);
  off << 0.5, 0.6;
  CHECK_THROWS_AS(WeightVector(off), std::invalid_argument);
}

TEST_CASE("dataset csv round trip")
{
  namespace fs = std::filesystem;
  const Dataset d = tiny_dataset();
  const auto path = fs::temp_directory_path() / "simavg_test_dataset.csv";
  save_dataset_csv(d, path.string());
  const Dataset back = load_dataset_csv(path.string());
  CHECK(back.n() == d.n());
  CHECK(back.p() == d.p());
  CHECK((back.y - d.y).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((back.X - d.X).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(back.names == d.names);
  fs::remove(path);
}

TEST_CASE("csv parse errors carry line and column")
{
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "simavg_test_bad.csv";
  {
    std::ofstream out(path);
    out << "y,a\n1.0,2.0\nnot_a_number,3.0\n";
  }
  try {
    load_dataset_csv(path.string());
    FAIL("expected CsvError");
  } catch (const CsvError& e) {
    CHECK(e.line() == 3);
    CHECK(e.column() == 1);
  }
  fs::remove(path);
}
