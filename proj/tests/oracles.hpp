#pragma once

// Independent reference computations for the test suites. Nothing in here
// calls into the library's kernel, KPCA or implausibility code.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

  MatrixXd gaussian(Eigen::Index r, Eigen::Index c) {
    MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal();
    return m;
  }
  VectorXd gaussian(Eigen::Index n) { return gaussian(n, 1).col(0); }

  MatrixXd box(Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
    MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = uniform(lo, hi);
    return m;
  }

  /// Well-conditioned SPD matrix: G G' / l + shift I.
  MatrixXd spd(Eigen::Index l, double shift = 0.5) {
    MatrixXd g = gaussian(l, l);
    return g * g.transpose() / static_cast<double>(l) + shift * MatrixXd::Identity(l, l);
  }
};

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

inline double rel_err(const MatrixXd& a, const MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

/// Symmetric W^{-1/2}; any P with P P' = W^-1 gives the same linear kernel.
inline MatrixXd inverse_sqrt(const MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(w);
  return es.operatorInverseSqrt();
}

/// Linear-kernel feature space phi(f) = P' f with explicit PCA of the mapped
/// ensemble.
struct LinearFeatures {
  MatrixXd p;        // l x m
  VectorXd mean;     // mapped ensemble mean
  MatrixXd centered; // m x n
  MatrixXd basis;    // m x r orthonormal principal directions
  VectorXd lambda;   // r squared singular values, descending

  LinearFeatures(const MatrixXd& fields, MatrixXd factor) : p(std::move(factor)) {
    const MatrixXd phi = p.transpose() * fields;
    mean = phi.rowwise().mean();
    centered = phi.colwise() - mean;
    Eigen::JacobiSVD<MatrixXd> svd(centered, Eigen::ComputeThinU);
    const VectorXd s = svd.singularValues();
    const double tol = 1e-10 * s(0) * s(0);
    Eigen::Index r = 0;
    while (r < s.size() && s(r) * s(r) > tol) ++r;
    basis = svd.matrixU().leftCols(r);
    lambda = s.head(r).array().square();
  }

  [[nodiscard]] VectorXd phi_tilde(const VectorXd& v) const { return p.transpose() * v - mean; }

  /// Basis columns flipped so that they agree with library coefficients on
  /// the training members (signs: +1/-1 per column).
  [[nodiscard]] MatrixXd aligned(const VectorXd& signs) const {
    return basis.leftCols(signs.size()) * signs.asDiagonal();
  }

  [[nodiscard]] static VectorXd project(const MatrixXd& psi, const VectorXd& phi_t) {
    return psi.transpose() * phi_t;
  }
  [[nodiscard]] static double recon(const MatrixXd& psi, const VectorXd& phi_t) {
    return (phi_t - psi * (psi.transpose() * phi_t)).squaredNorm();
  }
  /// ||phi~(z) - Psi m||^2
  [[nodiscard]] static double imp_f1(const MatrixXd& psi, const VectorXd& phi_z, const VectorXd& m) {
    return (phi_z - psi * m).squaredNorm();
  }
  /// Dense (I_m + Psi V Psi')^-1 quadratic form.
  [[nodiscard]] static double imp_f2(const MatrixXd& psi, const VectorXd& phi_z, const VectorXd& m,
                                     const VectorXd& v) {
    const Eigen::Index dim = psi.rows();
    const MatrixXd inner = MatrixXd::Identity(dim, dim) + psi * v.asDiagonal() * psi.transpose();
    const VectorXd r = phi_z - psi * m;
    return r.dot(inner.inverse() * r);
  }
};

/// Per-column signs s such that s_k * reference.col(k) ~ target.col(k).
inline VectorXd column_signs(const MatrixXd& target, const MatrixXd& reference) {
  VectorXd s(target.cols());
  for (Eigen::Index k = 0; k < target.cols(); ++k) s(k) = target.col(k).dot(reference.col(k)) >= 0 ? 1.0 : -1.0;
  return s;
}

/// Brute-force P(T) with explicit loops.
inline double cost_scan(const std::vector<double>& a, const std::vector<double>& u, double t, double alpha) {
  int na = 0, nu = 0;
  for (double v : a) na += v <= t;
  for (double v : u) nu += v <= t;
  if (na + nu == 0) return 0.0;
  return alpha * na / static_cast<double>(a.size()) + (1 - alpha) * na / static_cast<double>(na + nu);
}

/// Direct double loop for the squared-exponential grid covariance.
inline MatrixXd grid_cov_loop(int rows, int cols, double l_row, double l_col, double var) {
  const int l = rows * cols;
  MatrixXd w(l, l);
  for (int a = 0; a < l; ++a)
    for (int b = 0; b < l; ++b) {
      const double dr = (a / cols - b / cols) / l_row;
      const double dc = (a % cols - b % cols) / l_col;
      w(a, b) = var * std::exp(-(dr * dr + dc * dc));
    }
  return w;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Relative path -> contents for every regular file under root.
inline std::vector<std::pair<std::string, std::string>> tree(const std::filesystem::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out.emplace_back(std::filesystem::relative(e.path(), root).string(), slurp(e.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("khm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle
