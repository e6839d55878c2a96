#pragma once

// Space-filling designs on [-1, 1]^p.

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace khm {

/// Random Latin hypercube: each column hits every one of the n strata once.
Eigen::MatrixXd latin_hypercube(int n, int p, std::uint64_t seed);

/// Best of `tries` Latin hypercubes by minimum pairwise distance, followed by
/// coordinate-swap improvement when 3 <= n <= 200.
Eigen::MatrixXd maximin_lhc(int n, int p, std::uint64_t seed, int tries = 20);

/// Uniform draws, one point per row.
Eigen::MatrixXd uniform_points(int n, int p, std::uint64_t seed);

double min_pairwise_distance(const Eigen::MatrixXd& points);

/// Greedy farthest-point selection of k rows; the first pick is the row
/// closest to the centroid of all rows.
std::vector<Eigen::Index> greedy_maximin(const Eigen::MatrixXd& points, int k);

}  // namespace khm
