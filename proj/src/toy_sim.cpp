#include "khm/toy_sim.hpp"

#include "khm/error.hpp"
#include "khm/sampling.hpp"

#include <cmath>

namespace khm {

Eigen::VectorXd band_field(const ToyConfig& config, double center, double width, double amplitude) {
  if (!(width > 0)) throw ValidationError("band width must be > 0");
  Eigen::VectorXd f(static_cast<Eigen::Index>(config.rows) * config.cols);
  for (int i = 0; i < config.rows; ++i) {
    const double r = (i - center) / width;
    const double v = amplitude * std::exp(-0.5 * r * r);
    for (int j = 0; j < config.cols; ++j) f(static_cast<Eigen::Index>(i) * config.cols + j) = v;
  }
  return f;
}

Eigen::VectorXd simulate(const ToyConfig& config, const Eigen::VectorXd& x) {
  if (x.size() != 3) throw ValidationError("toy simulator takes 3 inputs");
  for (Eigen::Index d = 0; d < 3; ++d) {
    if (!(x(d) >= -1.0 && x(d) <= 1.0)) throw ValidationError("toy input outside [-1, 1]");
  }
  return band_field(config, config.center(x), config.width(x), config.amplitude(x));
}

Eigen::MatrixXd simulate_design(const ToyConfig& config, const Eigen::MatrixXd& points) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(config.rows) * config.cols, points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) out.col(i) = simulate(config, points.row(i).transpose());
  return out;
}

Observation make_observation(const ToyConfig& config) {
  Observation obs;
  obs.z = band_field(config, config.obs_center, config.obs_width, config.obs_amplitude);
  if (config.obs_noise_var > 0) {
    const auto l = obs.z.size();
    obs.obs_cov = Eigen::MatrixXd::Identity(l, l) * config.obs_noise_var;
  }
  return obs;
}

Classification auto_label(const ToyConfig& config, const Eigen::MatrixXd& points) {
  Classification c;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::VectorXd x = points.row(i).transpose();
    const double w = config.width(x);
    const double a = config.amplitude(x);
    const bool ok = w >= config.accept_width_lo && w <= config.accept_width_hi &&
                    a >= config.accept_amplitude_min;
    c.labels.push_back(ok ? 1 : 2);
  }
  c.annotator = "auto_label";
  return c;
}

Ensemble toy_ensemble_from_points(const ToyConfig& config, const Eigen::MatrixXd& points) {
  auto design = Design::from_scaled(points, {"center", "width", "amplitude"});
  auto outputs = OutputEnsemble::from_fields(simulate_design(config, points), config.grid());
  return make_ensemble(std::move(design), std::move(outputs), make_observation(config));
}

Ensemble make_toy_ensemble(const ToyConfig& config, int n, std::uint64_t seed) {
  return toy_ensemble_from_points(config, maximin_lhc(n, 3, seed));
}

Eigen::VectorXd line_field(int rows, int cols, int row) {
  if (row < 0 || row >= rows) throw ValidationError("line row out of range");
  Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows) * cols);
  f.segment(static_cast<Eigen::Index>(row) * cols, cols).setOnes();
  return f;
}

}  // namespace khm
