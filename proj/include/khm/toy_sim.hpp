#pragma once

// Synthetic simulator: a horizontal band on a grid whose row position, width
// and amplitude are driven by three inputs in [-1, 1].

#include "khm/ensemble.hpp"
#include "khm/kernel_selection.hpp"

#include <Eigen/Core>

#include <cstdint>

namespace khm {

struct ToyConfig {
  int rows = 20;
  int cols = 20;
  // c(x) = center_offset + center_scale * x1 (row units)
  double center_offset = 10.0;
  double center_scale = 8.0;
  // w(x) = width_offset + width_scale * (x2 + 1)
  double width_offset = 1.0;
  double width_scale = 0.5;
  // A(x) = amplitude_offset + amplitude_scale * x3
  double amplitude_offset = 0.6;
  double amplitude_scale = 0.4;

  double obs_center = 13.37;
  double obs_width = 1.2;
  double obs_amplitude = 0.95;
  /// Diagonal observation-error variance; 0 leaves obs_cov absent.
  double obs_noise_var = 1e-4;

  double accept_width_lo = 0.8;
  double accept_width_hi = 1.6;
  double accept_amplitude_min = 0.7;

  [[nodiscard]] double center(const Eigen::VectorXd& x) const { return center_offset + center_scale * x(0); }
  [[nodiscard]] double width(const Eigen::VectorXd& x) const { return width_offset + width_scale * (x(1) + 1.0); }
  [[nodiscard]] double amplitude(const Eigen::VectorXd& x) const { return amplitude_offset + amplitude_scale * x(2); }
  [[nodiscard]] GridShape grid() const { return {rows, cols, 1}; }
};

/// Band field A exp(-(i - c)^2 / (2 w^2)) for every row i, constant across columns.
Eigen::VectorXd band_field(const ToyConfig& config, double center, double width, double amplitude);

Eigen::VectorXd simulate(const ToyConfig& config, const Eigen::VectorXd& x);

/// Outputs for every row of a scaled design.
Eigen::MatrixXd simulate_design(const ToyConfig& config, const Eigen::MatrixXd& points);

Observation make_observation(const ToyConfig& config);

/// Label 1 when the width lies in the acceptance window and the amplitude is
/// high enough, otherwise 2. The band position is ignored.
Classification auto_label(const ToyConfig& config, const Eigen::MatrixXd& points);

/// Maximin Latin hypercube of n runs, simulated, with the toy observation.
Ensemble make_toy_ensemble(const ToyConfig& config, int n, std::uint64_t seed);

/// Ensemble built from explicit scaled design points.
Ensemble toy_ensemble_from_points(const ToyConfig& config, const Eigen::MatrixXd& points);

/// rows x cols field of zeros with ones along one row.
Eigen::VectorXd line_field(int rows, int cols, int row);

}  // namespace khm
