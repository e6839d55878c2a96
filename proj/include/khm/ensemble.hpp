#pragma once

// Designs, output ensembles and observations, plus their on-disk formats.
//
// Outputs are flat length-l vectors. A GridShape is metadata describing how
// the l cells factor into (rows, cols, frames); cell (r, c, f) lives at flat
// index f*rows*cols + r*cols + c, i.e. every frame is stored row-major.

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace khm {

struct GridShape {
  int rows = 1;
  int cols = 1;
  int frames = 1;

  [[nodiscard]] long size() const { return static_cast<long>(rows) * cols * frames; }
  friend bool operator==(const GridShape&, const GridShape&) = default;
};

using Bounds = std::vector<std::pair<double, double>>;

/// Affine map of each column from [lower, upper] onto [-1, 1].
/// Throws ValidationError for a value outside its bounds or lower >= upper.
Eigen::MatrixXd scale_inputs(const Eigen::MatrixXd& raw, const Bounds& bounds);

/// Inverse of scale_inputs.
Eigen::MatrixXd unscale_inputs(const Eigen::MatrixXd& scaled, const Bounds& bounds);

struct CenteredOutputs {
  Eigen::VectorXd mean;
  Eigen::MatrixXd centered;
};

/// Row means u of F and F - u broadcast over columns. Requires n >= 2.
CenteredOutputs center_outputs(const Eigen::MatrixXd& fields);

/// n x p input design. `points` are scaled into [-1, 1]; `raw` keeps the
/// native-unit values they were derived from.
class Design {
 public:
  static Design from_raw(Eigen::MatrixXd raw, Bounds bounds, std::vector<std::string> names);
  /// Design whose native units already are [-1, 1].
  static Design from_scaled(Eigen::MatrixXd points, std::vector<std::string> names = {});

  [[nodiscard]] const Eigen::MatrixXd& points() const { return points_; }
  [[nodiscard]] const Eigen::MatrixXd& raw() const { return raw_; }
  [[nodiscard]] const Bounds& bounds() const { return bounds_; }
  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
  [[nodiscard]] Eigen::Index size() const { return points_.rows(); }
  [[nodiscard]] Eigen::Index dim() const { return points_.cols(); }

 private:
  Eigen::MatrixXd raw_;
  Eigen::MatrixXd points_;
  Bounds bounds_;
  std::vector<std::string> names_;
};

class OutputEnsemble {
 public:
  static OutputEnsemble from_fields(Eigen::MatrixXd fields, std::optional<GridShape> grid = {});

  [[nodiscard]] const Eigen::MatrixXd& fields() const { return fields_; }
  [[nodiscard]] const Eigen::VectorXd& mean() const { return mean_; }
  [[nodiscard]] const Eigen::MatrixXd& centered() const { return centered_; }
  [[nodiscard]] const std::optional<GridShape>& grid() const { return grid_; }
  [[nodiscard]] Eigen::Index length() const { return fields_.rows(); }
  [[nodiscard]] Eigen::Index size() const { return fields_.cols(); }

 private:
  Eigen::MatrixXd fields_;
  std::optional<GridShape> grid_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd centered_;
};

struct Observation {
  Eigen::VectorXd z;
  std::optional<Eigen::MatrixXd> obs_cov;

  /// Checks symmetry and eigenvalues >= -1e-10 * trace; throws ValidationError.
  void validate(Eigen::Index expected_length) const;
};

struct Ensemble {
  Design design;
  OutputEnsemble outputs;
  Observation observation;
};

/// Builds and cross-validates an ensemble (n >= 2, matching lengths).
Ensemble make_ensemble(Design design, OutputEnsemble outputs, Observation observation);

struct EnsemblePaths {
  std::filesystem::path design;
  std::filesystem::path bounds;
  std::filesystem::path outputs;
  std::filesystem::path observation;
  std::optional<std::filesystem::path> grid;
  std::optional<std::filesystem::path> obs_cov;

  /// Standard file names inside a directory; optional files only if present.
  static EnsemblePaths in_directory(const std::filesystem::path& dir);
};

Ensemble load_ensemble(const EnsemblePaths& paths);
inline Ensemble load_ensemble(const std::filesystem::path& dir) {
  return load_ensemble(EnsemblePaths::in_directory(dir));
}

/// Writes design.csv, bounds.csv, outputs.csv, observation.csv and, when
/// present, grid.txt and obs_cov.csv into `dir`.
void save_ensemble(const Ensemble& ensemble, const std::filesystem::path& dir);

GridShape read_grid_shape(const std::filesystem::path& path);

/// l x l matrix, or a single scalar meaning variance * identity.
Eigen::MatrixXd read_obs_cov(const std::filesystem::path& path, Eigen::Index length);

}  // namespace khm
