#include "doctest.h"
#include "oracles.hpp"

#include "khm/sampling.hpp"

#include <set>

using namespace khm;
using Eigen::MatrixXd;

TEST_CASE("latin hypercube stratification") {
  for (int n : {1, 5, 30}) {
    const MatrixXd x = latin_hypercube(n, 3, 7);
    CHECK(x.rows() == n);
    CHECK(x.cols() == 3);
    for (int j = 0; j < 3; ++j) {
      std::set<int> strata;
      for (int i = 0; i < n; ++i) {
        CHECK(x(i, j) >= -1.0);
        CHECK(x(i, j) <= 1.0);
        strata.insert(static_cast<int>(std::floor((x(i, j) + 1.0) / 2.0 * n)));
      }
      CHECK(static_cast<int>(strata.size()) == n);
    }
  }
  CHECK(latin_hypercube(10, 2, 3) == latin_hypercube(10, 2, 3));
  CHECK(latin_hypercube(10, 2, 3) != latin_hypercube(10, 2, 4));
}

TEST_CASE("maximin improves on a random hypercube") {
  double random_total = 0, maximin_total = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    random_total += min_pairwise_distance(latin_hypercube(20, 3, s));
    maximin_total += min_pairwise_distance(maximin_lhc(20, 3, s));
  }
  CHECK(maximin_total > random_total);
  CHECK(maximin_lhc(20, 3, 1) == maximin_lhc(20, 3, 1));
}

TEST_CASE("greedy maximin") {
  MatrixXd pts(5, 1);
  pts << 0.0, 0.1, -1.0, 1.0, 0.05;
  const auto pick = greedy_maximin(pts, 3);
  REQUIRE(pick.size() == 3);
  CHECK(pick[0] == 4);
  std::set<Eigen::Index> s(pick.begin(), pick.end());
  CHECK(s.count(2) == 1);
  CHECK(s.count(3) == 1);

  const MatrixXd cand = uniform_points(500, 2, 3);
  const auto sel = greedy_maximin(cand, 20);
  MatrixXd chosen(20, 2);
  for (int i = 0; i < 20; ++i) chosen.row(i) = cand.row(sel[static_cast<size_t>(i)]);
  CHECK(min_pairwise_distance(chosen) > min_pairwise_distance(cand.topRows(20)));
}

TEST_CASE("min pairwise distance") {
  MatrixXd pts(3, 2);
  pts << 0, 0, 3, 4, 0, 1;
  CHECK(min_pairwise_distance(pts) == doctest::Approx(1.0));
}
