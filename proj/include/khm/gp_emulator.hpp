#pragma once

// Stationary squared-exponential Gaussian processes over the scaled input
// space, one per retained basis coefficient.
//
//   c(x, x') = exp(-sum_d ((x_d - x'_d) / l_d)^2),  R = C + tau I,  Lambda = sigma^2 R
//
// beta is the generalized least-squares estimate and sigma^2 its profile
// maximum-likelihood value, so only the lengths (and optionally tau) are
// optimized numerically.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace khm {

enum class MeanBasis { Constant, Linear };

struct GpConfig {
  MeanBasis mean_basis = MeanBasis::Constant;
  /// tau, relative to sigma^2. Used as-is unless fit_nugget, then as the lower bound.
  double nugget = 1e-8;
  bool fit_nugget = false;
  int starts = 10;
  double min_length = 0.02;
  double max_length = 50.0;
  int max_iterations = 100;
};

struct GpHyper {
  std::vector<double> lengths;
  double nugget = 0.0;
};

class TrainedGp {
 public:
  [[nodiscard]] const Eigen::VectorXd& beta() const { return beta_; }
  [[nodiscard]] double sigma_sq() const { return sigma_sq_; }
  [[nodiscard]] const std::vector<double>& lengths() const { return hyper_.lengths; }
  [[nodiscard]] double nugget() const { return hyper_.nugget; }
  /// Extra diagonal added when R alone was not numerically positive definite.
  [[nodiscard]] double jitter() const { return jitter_; }
  [[nodiscard]] double log_likelihood() const { return log_lik_; }
  [[nodiscard]] const GpConfig& config() const { return config_; }
  [[nodiscard]] const Eigen::MatrixXd& design() const { return x_; }
  [[nodiscard]] const Eigen::VectorXd& targets() const { return y_; }
  /// sigma^2 (R + jitter I), rebuilt from the stored factorization.
  [[nodiscard]] Eigen::MatrixXd covariance() const;

  struct Prediction {
    double mean = 0.0;
    double variance = 0.0;
  };
  [[nodiscard]] Prediction predict(const Eigen::VectorXd& x) const;

  /// Conditions on fixed hyperparameters; sigma^2 and beta are estimated.
  static TrainedGp condition(Eigen::MatrixXd design, Eigen::VectorXd targets,
                             const GpConfig& config, GpHyper hyper);

 private:
  GpConfig config_;
  GpHyper hyper_;
  double jitter_ = 0.0;
  double sigma_sq_ = 0.0;
  double log_lik_ = 0.0;
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  Eigen::VectorXd beta_;
  Eigen::VectorXd weights_;  // R^-1 (y - H beta)
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// Regressor matrix h(x) rows for the chosen basis.
Eigen::MatrixXd regressors(const Eigen::MatrixXd& design, MeanBasis basis);

/// Correlation matrix between the rows of a and b.
Eigen::MatrixXd correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                            const std::vector<double>& lengths);

/// Full Gaussian log-likelihood of y with beta at its GLS estimate and the
/// given sigma^2.
double log_likelihood(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                      MeanBasis basis, const GpHyper& hyper, double sigma_sq);

/// Likelihood maximized over sigma^2 (and beta) at fixed lengths/nugget.
double profile_log_likelihood(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                              MeanBasis basis, const GpHyper& hyper);

struct FitTrace {
  std::vector<double> start_log_likelihoods;
};

TrainedGp fit_gp(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                 const GpConfig& config, std::uint64_t seed, FitTrace* trace = nullptr);

/// Refits on every point except `held_out` and predicts there.
TrainedGp::Prediction loo_predict(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                                  const GpConfig& config, Eigen::Index held_out,
                                  std::uint64_t seed);

Eigen::MatrixXd drop_row(const Eigen::MatrixXd& m, Eigen::Index row);
Eigen::VectorXd drop_entry(const Eigen::VectorXd& v, Eigen::Index index);

struct CoefficientPrediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // diagonal of Var{C_q(x)}
};

class CoefficientEmulators {
 public:
  CoefficientEmulators() = default;
  explicit CoefficientEmulators(std::vector<TrainedGp> gps) : gps_(std::move(gps)) {}

  [[nodiscard]] int q() const { return static_cast<int>(gps_.size()); }
  [[nodiscard]] const std::vector<TrainedGp>& gps() const { return gps_; }
  [[nodiscard]] CoefficientPrediction predict(const Eigen::VectorXd& x) const;

 private:
  std::vector<TrainedGp> gps_;
};

/// Independent fit per column of `coeffs` (n x q), seeded per coefficient.
CoefficientEmulators emulate_coefficients(const Eigen::MatrixXd& design,
                                          const Eigen::MatrixXd& coeffs, const GpConfig& config,
                                          std::uint64_t seed);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

std::string emulators_to_json(const CoefficientEmulators& emulators);
CoefficientEmulators emulators_from_json(const std::string& text);
void save_emulators(const CoefficientEmulators& emulators, const std::filesystem::path& path);
CoefficientEmulators load_emulators(const std::filesystem::path& path);

}  // namespace khm
