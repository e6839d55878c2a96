#include "khm/ensemble.hpp"

#include "khm/error.hpp"
#include "khm/text_io.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace khm {

namespace {

void check_bounds(const Bounds& bounds, Eigen::Index cols) {
  if (static_cast<Eigen::Index>(bounds.size()) != cols) {
    throw ValidationError("expected " + std::to_string(cols) + " bound pairs, got " +
                          std::to_string(bounds.size()));
  }
  for (size_t j = 0; j < bounds.size(); ++j) {
    if (!(bounds[j].first < bounds[j].second)) {
      throw ValidationError("bounds for column " + std::to_string(j) + " need lower < upper");
    }
  }
}

void check_unique_rows(const Eigen::MatrixXd& points) {
  std::set<std::vector<double>> seen;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    std::vector<double> row(static_cast<size_t>(points.cols()));
    for (Eigen::Index j = 0; j < points.cols(); ++j) row[static_cast<size_t>(j)] = points(i, j);
    if (!seen.insert(row).second) {
      throw ValidationError("duplicate design row " + std::to_string(i));
    }
  }
}

}  // namespace

Eigen::MatrixXd scale_inputs(const Eigen::MatrixXd& raw, const Bounds& bounds) {
  check_bounds(bounds, raw.cols());
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    const auto [lo, hi] = bounds[static_cast<size_t>(j)];
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      const double v = raw(i, j);
      if (!(v >= lo && v <= hi)) {
        throw ValidationError("value " + io::format_double(v) + " at row " + std::to_string(i) +
                              ", column " + std::to_string(j) + " lies outside [" +
                              io::format_double(lo) + ", " + io::format_double(hi) + "]");
      }
      out(i, j) = 2.0 * (v - lo) / (hi - lo) - 1.0;
    }
  }
  return out;
}

Eigen::MatrixXd unscale_inputs(const Eigen::MatrixXd& scaled, const Bounds& bounds) {
  check_bounds(bounds, scaled.cols());
  Eigen::MatrixXd out(scaled.rows(), scaled.cols());
  for (Eigen::Index j = 0; j < scaled.cols(); ++j) {
    const auto [lo, hi] = bounds[static_cast<size_t>(j)];
    out.col(j) = ((scaled.col(j).array() + 1.0) * (0.5 * (hi - lo))) + lo;
  }
  return out;
}

CenteredOutputs center_outputs(const Eigen::MatrixXd& fields) {
  if (fields.cols() < 2) throw ValidationError("n >= 2 required to center outputs");
  CenteredOutputs out;
  out.mean = fields.rowwise().mean();
  out.centered = fields.colwise() - out.mean;
  return out;
}

Design Design::from_raw(Eigen::MatrixXd raw, Bounds bounds, std::vector<std::string> names) {
  if (raw.rows() < 2) throw ValidationError("n >= 2 required (design has " +
                                            std::to_string(raw.rows()) + " rows)");
  if (raw.cols() < 1) throw ValidationError("design needs p >= 1 columns");
  if (names.empty()) {
    for (Eigen::Index j = 0; j < raw.cols(); ++j) names.push_back("x" + std::to_string(j + 1));
  }
  if (static_cast<Eigen::Index>(names.size()) != raw.cols()) {
    throw ValidationError("design has " + std::to_string(raw.cols()) + " columns but " +
                          std::to_string(names.size()) + " names");
  }
  Design d;
  d.points_ = scale_inputs(raw, bounds);
  check_unique_rows(d.points_);
  d.raw_ = std::move(raw);
  d.bounds_ = std::move(bounds);
  d.names_ = std::move(names);
  return d;
}

Design Design::from_scaled(Eigen::MatrixXd points, std::vector<std::string> names) {
  Bounds unit(static_cast<size_t>(points.cols()), {-1.0, 1.0});
  return from_raw(std::move(points), std::move(unit), std::move(names));
}

OutputEnsemble OutputEnsemble::from_fields(Eigen::MatrixXd fields, std::optional<GridShape> grid) {
  if (fields.rows() < 1) throw ValidationError("outputs need l >= 1 rows");
  if (grid && grid->size() != fields.rows()) {
    throw ValidationError("grid shape " + std::to_string(grid->rows) + "x" +
                          std::to_string(grid->cols) + "x" + std::to_string(grid->frames) +
                          " does not cover l=" + std::to_string(fields.rows()));
  }
  auto centered = center_outputs(fields);
  OutputEnsemble e;
  e.fields_ = std::move(fields);
  e.grid_ = grid;
  e.mean_ = std::move(centered.mean);
  e.centered_ = std::move(centered.centered);
  return e;
}

void Observation::validate(Eigen::Index expected_length) const {
  if (z.size() != expected_length) {
    throw ValidationError("observation has length " + std::to_string(z.size()) +
                          ", outputs have l=" + std::to_string(expected_length));
  }
  if (!obs_cov) return;
  const auto& s = *obs_cov;
  if (s.rows() != expected_length || s.cols() != expected_length) {
    throw ValidationError("observation covariance must be l x l");
  }
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw ValidationError("observation covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * std::abs(s.trace())) {
    throw ValidationError("observation covariance is not positive semidefinite");
  }
}

Ensemble make_ensemble(Design design, OutputEnsemble outputs, Observation observation) {
  if (design.size() != outputs.size()) {
    throw ValidationError("design has " + std::to_string(design.size()) + " rows but outputs have " +
                          std::to_string(outputs.size()) + " columns");
  }
  observation.validate(outputs.length());
  return Ensemble{std::move(design), std::move(outputs), std::move(observation)};
}

EnsemblePaths EnsemblePaths::in_directory(const std::filesystem::path& dir) {
  EnsemblePaths p;
  p.design = dir / "design.csv";
  p.bounds = dir / "bounds.csv";
  p.outputs = dir / "outputs.csv";
  p.observation = dir / "observation.csv";
  if (std::filesystem::exists(dir / "grid.txt")) p.grid = dir / "grid.txt";
  if (std::filesystem::exists(dir / "obs_cov.csv")) p.obs_cov = dir / "obs_cov.csv";
  return p;
}

GridShape read_grid_shape(const std::filesystem::path& path) {
  auto m = io::read_matrix(path);
  if (m.size() != 3) throw ValidationError(path.string() + ": expected rows,cols,frames");
  GridShape g{static_cast<int>(m(0)), static_cast<int>(m(1)), static_cast<int>(m(2))};
  if (g.rows < 1 || g.cols < 1 || g.frames < 1 || g.rows != m(0) || g.cols != m(1) ||
      g.frames != m(2)) {
    throw ValidationError(path.string() + ": grid extents must be positive integers");
  }
  return g;
}

Eigen::MatrixXd read_obs_cov(const std::filesystem::path& path, Eigen::Index length) {
  auto m = io::read_matrix(path);
  if (m.size() == 1) {
    if (m(0, 0) < 0) throw ValidationError("observation variance must be >= 0");
    return Eigen::MatrixXd::Identity(length, length) * m(0, 0);
  }
  if (m.rows() != length || m.cols() != length) {
    throw ValidationError(path.string() + ": covariance must be " + std::to_string(length) + "x" +
                          std::to_string(length) + " or a scalar variance");
  }
  return m;
}

Ensemble load_ensemble(const EnsemblePaths& paths) {
  auto design_table = io::read_table(paths.design, true);
  Eigen::MatrixXd raw = io::to_matrix(design_table, paths.design);

  auto bounds_table = io::read_table(paths.bounds, true);
  std::vector<std::pair<std::string, std::pair<double, double>>> named;
  for (size_t i = 0; i < bounds_table.rows.size(); ++i) {
    const auto& row = bounds_table.rows[i];
    if (row.size() != 3) throw ValidationError(paths.bounds.string() + ": expected name,lower,upper");
    const auto where = paths.bounds.string() + " row " + std::to_string(i + 1);
    named.push_back({row[0], {io::parse_double(row[1], where), io::parse_double(row[2], where)}});
  }
  Bounds bounds;
  for (const auto& name : design_table.header) {
    auto it = std::find_if(named.begin(), named.end(), [&](const auto& b) { return b.first == name; });
    if (it == named.end()) throw ValidationError("no bounds for parameter '" + name + "'");
    bounds.push_back(it->second);
  }
  auto design = Design::from_raw(std::move(raw), std::move(bounds), design_table.header);

  std::optional<GridShape> grid;
  if (paths.grid) grid = read_grid_shape(*paths.grid);
  auto outputs = OutputEnsemble::from_fields(io::read_matrix(paths.outputs), grid);

  Observation obs;
  Eigen::MatrixXd zm = io::read_matrix(paths.observation);
  if (zm.cols() != 1) throw ValidationError(paths.observation.string() + ": expected one column");
  obs.z = zm.col(0);
  if (paths.obs_cov) obs.obs_cov = read_obs_cov(*paths.obs_cov, outputs.length());
  return make_ensemble(std::move(design), std::move(outputs), std::move(obs));
}

void save_ensemble(const Ensemble& e, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& d = e.design;
  std::string text;
  for (size_t j = 0; j < d.names().size(); ++j) {
    if (j) text += ',';
    text += d.names()[j];
  }
  text += '\n';
  for (Eigen::Index i = 0; i < d.raw().rows(); ++i) {
    for (Eigen::Index j = 0; j < d.raw().cols(); ++j) {
      if (j) text += ',';
      text += io::format_double(d.raw()(i, j));
    }
    text += '\n';
  }
  io::write_file_atomic(dir / "design.csv", text);

  text = "name,lower,upper\n";
  for (size_t j = 0; j < d.names().size(); ++j) {
    text += d.names()[j] + "," + io::format_double(d.bounds()[j].first) + "," +
            io::format_double(d.bounds()[j].second) + "\n";
  }
  io::write_file_atomic(dir / "bounds.csv", text);

  io::write_matrix(dir / "outputs.csv", e.outputs.fields());
  io::write_matrix(dir / "observation.csv", e.observation.z);
  if (const auto& g = e.outputs.grid()) {
    io::write_file_atomic(dir / "grid.txt", std::to_string(g->rows) + "," + std::to_string(g->cols) +
                                                "," + std::to_string(g->frames) + "\n");
  }
  if (const auto& s = e.observation.obs_cov) {
    // Scalar shorthand for v * I keeps the file small and reloads exactly.
    const double v = (*s)(0, 0);
    const bool scaled_identity = (*s == Eigen::MatrixXd::Identity(s->rows(), s->cols()) * v);
    if (scaled_identity) {
      io::write_file_atomic(dir / "obs_cov.csv", io::format_double(v) + "\n");
    } else {
      io::write_matrix(dir / "obs_cov.csv", *s);
    }
  }
}

}  // namespace khm
