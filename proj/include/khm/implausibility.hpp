#pragma once

// Distances between the observation and (emulated) model output in the
// kernel feature space, their thresholds, and the classical output-space
// implausibility used as a reference.

#include "khm/gp_emulator.hpp"
#include "khm/kernel.hpp"
#include "khm/kpca.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

namespace khm {

struct ImplausibilityContext {
  std::shared_ptr<const KpcaBasis> basis;
  CoefficientEmulators emulators;
  Projection obs;  // C_q(z), K~_z, k~(z,z), ||eps_z||^2
  std::optional<double> bound_a;
  std::optional<double> t2;
  double t = 3.0;  // multiplier on the standard deviation term of T(x)

  static ImplausibilityContext make(std::shared_ptr<const KpcaBasis> basis,
                                    CoefficientEmulators emulators, const Eigen::VectorXd& z);
};

/// k(z,z) + k(f,f) - 2 k(f,z), clamped at zero against rounding.
double imp0(const KernelSpec& spec, const Eigen::VectorXd& f, const Eigen::VectorXd& z);

/// k~(z,z) + m'm - 2 m'(A'K~_z) for emulator mean m.
double imp_f1_from(const Projection& obs, const Eigen::VectorXd& mean);
double imp_f1(const ImplausibilityContext& ctx, const Eigen::VectorXd& x);

/// sum Var + t * sqrt(2 (sum Var)^2) + a.
double threshold_from_variance(double total_variance, double a, double t = 3.0);
double threshold_T(const ImplausibilityContext& ctx, const Eigen::VectorXd& x);

/// sum_k (C_k(z) - m_k)^2 / (v_k + 1) + ||eps_z||^2.
double imp_f2_from(const Projection& obs, const CoefficientPrediction& pred);
double imp_f2(const ImplausibilityContext& ctx, const Eigen::VectorXd& x);

/// (z - Ef)' total_cov^-1 (z - Ef). Throws NumericalError if total_cov is singular.
double standard_implausibility(const Eigen::VectorXd& z, const Eigen::VectorXd& mean,
                               const Eigen::MatrixXd& total_cov);

/// Coefficient-space implausibility with inner matrix
/// Var{c(x)} + projected observation-error covariance + projected discrepancy covariance.
double coefficient_implausibility(const Eigen::VectorXd& cz, const Eigen::VectorXd& mean,
                                  const Eigen::MatrixXd& var, const Eigen::MatrixXd& proj_obs_cov,
                                  const Eigen::MatrixXd& proj_disc_cov);

/// Output-space mean and covariance implied by an emulator prediction when
/// omega = 1: Ef = u + B m, Var f = B diag(v) B' with B = F~ A.
struct OutputPrediction {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};
Eigen::MatrixXd output_space_basis(const KpcaBasis& basis);
OutputPrediction output_space_prediction(const KpcaBasis& basis, const CoefficientPrediction& pred);

/// Smallest projected distance k~(z,z) + C(x_U)'C(x_U) - 2 C(x_U)'A'K~_z over
/// the listed training members.
double bound_a_from_unacceptable(const KpcaBasis& basis, const Projection& obs,
                                 const std::vector<Eigen::Index>& unacceptable);

struct T2Result {
  double t2 = 0.0;
  std::vector<double> member_values;  // LOO imp_f2 per listed member
};

/// For each listed member, refits the q coefficient emulators without it and
/// evaluates imp_f2 at its input; returns the minimum. The basis stays fixed.
T2Result derive_T2(const KpcaBasis& basis, const Eigen::MatrixXd& design, const Projection& obs,
                   const std::vector<Eigen::Index>& unacceptable, const GpConfig& config,
                   std::uint64_t seed);

}  // namespace khm
