#pragma once

// Mixture kernels on output fields:
//
//   k(a, b) = omega * a' W^-1 b + (1 - omega) * sigma * exp(-(a-b)' W^-1 (a-b) / delta)
//
// W^-1 is never formed. A WeightMatrix holds a factor P with W^-1 = P P' and
// every kernel value is computed from the mapped vectors P'a, P'b.

#include "khm/ensemble.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace khm {

enum class Factorization {
  Eigen,     // W = Q H Q', P = Q H^{-1/2}
  Cholesky,  // W = L L', P = L^{-T}; cheaper, used inside kernel search
};

/// Parametrized part of W: Sigma_eta on the output grid plus jitter policy.
struct WeightParams {
  /// Correlation length per grid axis (rows, cols, frames). Axes beyond the
  /// list must have extent 1.
  std::vector<double> lengths;
  double sigma_eta_sq = 0.0;
  /// Added as jitter * I when the smallest eigenvalue of W is <= jitter.
  /// Negative means the default 1e-8 * trace(W) / l.
  double jitter = -1.0;

  friend bool operator==(const WeightParams&, const WeightParams&) = default;
};

class WeightMatrix {
 public:
  static WeightMatrix identity(Eigen::Index length);
  /// Factorizes an explicit symmetric W. Throws NumericalError when W is not
  /// positive semidefinite (or cannot be made PD by the jitter).
  static WeightMatrix from_matrix(Eigen::MatrixXd w, double jitter = -1.0,
                                  Factorization method = Factorization::Eigen);

  [[nodiscard]] Eigen::Index size() const { return length_; }
  [[nodiscard]] bool is_identity() const { return identity_; }
  [[nodiscard]] double jitter_applied() const { return jitter_applied_; }
  [[nodiscard]] Factorization method() const { return method_; }
  /// W including any jitter.
  [[nodiscard]] Eigen::MatrixXd matrix() const;
  /// Explicit P with W^-1 = P P'.
  [[nodiscard]] Eigen::MatrixXd factor() const;

  /// P' v for a single field or for every column of F.
  [[nodiscard]] Eigen::VectorXd map(const Eigen::VectorXd& v) const;
  [[nodiscard]] Eigen::MatrixXd map(const Eigen::MatrixXd& fields) const;

  // Provenance of a structured build.
  bool has_obs_cov = false;
  WeightParams params;

 private:
  Eigen::Index length_ = 0;
  bool identity_ = false;
  double jitter_applied_ = 0.0;
  Factorization method_ = Factorization::Eigen;
  Eigen::MatrixXd w_;
  Eigen::MatrixXd pt_;  // P' for the eigen route
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// Sigma_eta entries sigma_eta_sq * exp(-sum_d (delta_d / l_d)^2) over grid
/// index distances.
Eigen::MatrixXd grid_correlation(const GridShape& grid, const std::vector<double>& lengths,
                                 double sigma_eta_sq);

/// W = obs_cov + Sigma_eta, then factorized.
WeightMatrix build_weight_matrix(const std::optional<Eigen::MatrixXd>& obs_cov,
                                 const WeightParams& params, const GridShape& grid,
                                 Factorization method = Factorization::Eigen);

/// Plain-value kernel description; what gets saved to disk.
struct KernelParams {
  double omega = 1.0;
  double sigma = 1.0;
  double delta = 1.0;
  /// true: W = I. false: W = obs_cov + Sigma_eta(weight).
  bool identity_weight = true;
  WeightParams weight;

  void validate() const;
  friend bool operator==(const KernelParams&, const KernelParams&) = default;
};

std::string to_document(const KernelParams& params);
KernelParams parse_kernel_document(const std::string& text);
void save_kernel_params(const KernelParams& params, const std::filesystem::path& path);
KernelParams load_kernel_params(const std::filesystem::path& path);

struct KernelSpec {
  KernelParams params;
  std::shared_ptr<const WeightMatrix> weight;

  [[nodiscard]] double omega() const { return params.omega; }
  [[nodiscard]] double sigma() const { return params.sigma; }
  [[nodiscard]] double delta() const { return params.delta; }
};

/// Identity-weight kernel of length l.
KernelSpec make_kernel(double omega, double sigma, double delta, Eigen::Index length);
/// Kernel with an explicit weight matrix.
KernelSpec make_kernel(double omega, double sigma, double delta,
                       std::shared_ptr<const WeightMatrix> weight);
/// Builds W from params, the observation covariance and the grid.
KernelSpec make_kernel(const KernelParams& params, const std::optional<Eigen::MatrixXd>& obs_cov,
                       const GridShape& grid, Factorization method = Factorization::Eigen);

/// Kernel value from already-mapped vectors P'a, P'b.
double kernel_from_mapped(const KernelSpec& spec, const Eigen::VectorXd& pa,
                          const Eigen::VectorXd& pb);

double eval_kernel(const KernelSpec& spec, const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// n x n matrix of eval_kernel over the columns of F; exactly symmetric.
Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& fields);

/// H K H with H = I - 11'/n.
Eigen::MatrixXd center_kernel_matrix(const Eigen::MatrixXd& k);

/// Centered kernel between v and every ensemble member.
Eigen::VectorXd centered_cross_kernel(const KernelSpec& spec, const Eigen::MatrixXd& fields,
                                      const Eigen::MatrixXd& k, const Eigen::VectorXd& v);

/// Centered kernel of v with itself.
double self_centered_kernel(const KernelSpec& spec, const Eigen::MatrixXd& fields,
                            const Eigen::MatrixXd& k, const Eigen::VectorXd& v);

/// Kernel matrices of an ensemble with the mapped fields cached, so that
/// cross terms for new fields cost one map plus n kernel evaluations.
class CenteredKernelSystem {
 public:
  static CenteredKernelSystem build(KernelSpec spec, Eigen::MatrixXd fields);

  [[nodiscard]] const KernelSpec& spec() const { return spec_; }
  [[nodiscard]] const Eigen::MatrixXd& fields() const { return fields_; }
  [[nodiscard]] const Eigen::MatrixXd& k() const { return k_; }
  [[nodiscard]] const Eigen::MatrixXd& k_tilde() const { return k_tilde_; }
  [[nodiscard]] Eigen::Index size() const { return fields_.cols(); }

  /// k(v, f_i) for every member i.
  [[nodiscard]] Eigen::VectorXd cross_kernel(const Eigen::VectorXd& v) const;
  [[nodiscard]] Eigen::VectorXd centered_cross(const Eigen::VectorXd& v) const;
  [[nodiscard]] double centered_self(const Eigen::VectorXd& v) const;

 private:
  KernelSpec spec_;
  Eigen::MatrixXd fields_;
  Eigen::MatrixXd mapped_;
  Eigen::MatrixXd k_;
  Eigen::MatrixXd k_tilde_;
  Eigen::VectorXd row_means_;
  double grand_mean_ = 0.0;
};

}  // namespace khm
