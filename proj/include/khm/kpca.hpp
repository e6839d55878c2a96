#pragma once

// Kernel PCA on the centered kernel matrix of an ensemble.

#include "khm/kernel.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <memory>
#include <string>

namespace khm {

struct QRule {
  enum class Kind { Fixed, VarianceFraction };
  Kind kind = Kind::Fixed;
  int q = 5;
  double fraction = 0.99;

  static QRule fixed(int q) { return {Kind::Fixed, q, 0.99}; }
  static QRule variance(double fraction) { return {Kind::VarianceFraction, 0, fraction}; }
  /// Every eigenvalue above the discard tolerance.
  static QRule full() { return {Kind::Fixed, 1 << 30, 0.99}; }
};

/// A field expressed in the basis: C_k = alpha_k' K~_v plus what is needed for
/// the reconstruction error.
struct Projection {
  Eigen::VectorXd coeffs;       // C_q(v)
  Eigen::VectorXd centered;     // K~_v
  double self = 0.0;            // k~(v, v)
  double recon_err_sq = 0.0;    // ||eps_v||^2 after clamping
};

class KpcaBasis {
 public:
  [[nodiscard]] int q() const { return static_cast<int>(alpha_.cols()); }
  /// n x q normalized coefficients; column k has lambda_k * |alpha_k|^2 = 1.
  [[nodiscard]] const Eigen::MatrixXd& alpha() const { return alpha_; }
  /// Retained eigenvalues, descending.
  [[nodiscard]] const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  /// Every eigenvalue kept after the relative discard tolerance.
  [[nodiscard]] const Eigen::VectorXd& positive_eigenvalues() const { return all_eigenvalues_; }
  /// Unit-norm eigenvectors matching alpha().
  [[nodiscard]] const Eigen::MatrixXd& eigenvectors() const { return vectors_; }
  [[nodiscard]] const CenteredKernelSystem& system() const { return *system_; }
  [[nodiscard]] std::shared_ptr<const CenteredKernelSystem> system_ptr() const { return system_; }

  /// Coefficients of every training member (n x q), K~ A.
  [[nodiscard]] Eigen::MatrixXd training_coefficients() const;

  [[nodiscard]] Eigen::VectorXd project(const Eigen::VectorXd& v) const;
  [[nodiscard]] Projection project_full(const Eigen::VectorXd& v) const;
  [[nodiscard]] double reconstruction_error_sq(const Eigen::VectorXd& v) const;

  /// Same basis truncated to its first q columns.
  [[nodiscard]] KpcaBasis truncated(int q) const;

 private:
  friend KpcaBasis fit_kpca(std::shared_ptr<const CenteredKernelSystem>, const QRule&);
  std::shared_ptr<const CenteredKernelSystem> system_;
  Eigen::MatrixXd alpha_;
  Eigen::MatrixXd vectors_;
  Eigen::VectorXd eigenvalues_;
  Eigen::VectorXd all_eigenvalues_;
};

/// Eigendecomposition of K~. Eigenvalues below 1e-10 * lambda_1 are dropped and
/// each eigenvector's largest-magnitude entry is made positive.
KpcaBasis fit_kpca(std::shared_ptr<const CenteredKernelSystem> system, const QRule& rule);

/// ||eps||^2 = k~(v,v) + C'C - 2 C' (A' K~_v), clamped at -1e-8 * k~(v,v).
/// Throws NumericalError below that tolerance.
double clamp_reconstruction(double self, double value);

/// "q = ..", eigenvalue line, then the rows of A.
std::string basis_document(const KpcaBasis& basis);
/// Header run_index,C1..Cq followed by one row per run.
std::string coefficients_table(const Eigen::MatrixXd& coeffs);
Eigen::MatrixXd parse_coefficients_table(const std::filesystem::path& path);

}  // namespace khm
