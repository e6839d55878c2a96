#include "khm/sampling.hpp"

#include "khm/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace khm {

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void shuffle(std::vector<int>& v, std::mt19937_64& rng) {
  for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<size_t>(rng() % i)]);
}

}  // namespace

Eigen::MatrixXd latin_hypercube(int n, int p, std::uint64_t seed) {
  if (n < 1 || p < 1) throw ValidationError("Latin hypercube needs n >= 1 and p >= 1");
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd out(n, p);
  std::vector<int> perm(static_cast<size_t>(n));
  for (int j = 0; j < p; ++j) {
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);
    for (int i = 0; i < n; ++i) {
      out(i, j) = -1.0 + 2.0 * (perm[static_cast<size_t>(i)] + unit(rng)) / n;
    }
  }
  return out;
}

double min_pairwise_distance(const Eigen::MatrixXd& points) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < points.rows(); ++j) {
      best = std::min(best, (points.row(i) - points.row(j)).squaredNorm());
    }
  }
  return std::sqrt(best);
}

Eigen::MatrixXd maximin_lhc(int n, int p, std::uint64_t seed, int tries) {
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd best;
  double best_d = -1.0;
  for (int t = 0; t < std::max(1, tries); ++t) {
    Eigen::MatrixXd cand = latin_hypercube(n, p, rng());
    const double d = min_pairwise_distance(cand);
    if (d > best_d) {
      best_d = d;
      best = std::move(cand);
    }
  }
  if (n < 3 || n > 200) return best;
  // Swapping two entries of a column keeps the Latin property.
  const int swaps = 50 * n;
  for (int s = 0; s < swaps; ++s) {
    const auto j = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(p));
    const auto a = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
    const auto b = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
    if (a == b) continue;
    std::swap(best(a, j), best(b, j));
    const double d = min_pairwise_distance(best);
    if (d >= best_d) {
      best_d = d;
    } else {
      std::swap(best(a, j), best(b, j));
    }
  }
  return best;
}

Eigen::MatrixXd uniform_points(int n, int p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd out(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) out(i, j) = -1.0 + 2.0 * unit(rng);
  }
  return out;
}

std::vector<Eigen::Index> greedy_maximin(const Eigen::MatrixXd& points, int k) {
  const auto n = points.rows();
  if (k < 1 || k > n) throw ValidationError("cannot select " + std::to_string(k) + " of " + std::to_string(n) + " points");
  const Eigen::RowVectorXd centroid = points.colwise().mean();
  Eigen::Index first = 0;
  (points.rowwise() - centroid).rowwise().squaredNorm().minCoeff(&first);
  std::vector<Eigen::Index> chosen{first};
  Eigen::VectorXd dist = (points.rowwise() - points.row(first)).rowwise().squaredNorm();
  while (static_cast<int>(chosen.size()) < k) {
    Eigen::Index next = 0;
    dist.maxCoeff(&next);
    chosen.push_back(next);
    dist = dist.cwiseMin((points.rowwise() - points.row(next)).rowwise().squaredNorm());
  }
  return chosen;
}

}  // namespace khm
