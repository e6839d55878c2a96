#include "khm/kernel.hpp"

#include "khm/error.hpp"
#include "khm/text_io.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <map>
#include <sstream>

namespace khm {

namespace {

double default_jitter(const Eigen::MatrixXd& w) {
  return 1e-8 * std::abs(w.trace()) / static_cast<double>(w.rows());
}

}  // namespace

WeightMatrix WeightMatrix::identity(Eigen::Index length) {
  WeightMatrix w;
  w.length_ = length;
  w.identity_ = true;
  return w;
}

WeightMatrix WeightMatrix::from_matrix(Eigen::MatrixXd w, double jitter, Factorization method) {
  if (w.rows() != w.cols() || w.rows() == 0) throw ValidationError("weight matrix must be square");
  const double scale = std::max(1e-300, w.cwiseAbs().maxCoeff());
  if ((w - w.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw ValidationError("weight matrix is not symmetric");
  }
  const double jit = jitter < 0 ? default_jitter(w) : jitter;

  WeightMatrix out;
  out.length_ = w.rows();
  out.method_ = method;

  if (method == Factorization::Eigen) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of W failed");
    Eigen::VectorXd h = es.eigenvalues();
    const double lambda_min = h.minCoeff();
    if (lambda_min < -1e-10 * std::abs(w.trace())) {
      throw NumericalError("weight matrix is not positive semidefinite (smallest eigenvalue " +
                           io::format_double(lambda_min) + ")");
    }
    if (lambda_min <= jit) {
      if (jit <= 0) throw NumericalError("weight matrix is singular and jitter is zero");
      h.array() += jit;
      w.diagonal().array() += jit;
      out.jitter_applied_ = jit;
    }
    out.pt_ = h.array().rsqrt().matrix().asDiagonal() * es.eigenvectors().transpose();
  } else {
    Eigen::LLT<Eigen::MatrixXd> llt(w);
    bool ok = llt.info() == Eigen::Success;
    if (ok) {
      const Eigen::MatrixXd lower = llt.matrixL();
      ok = lower.diagonal().array().square().minCoeff() > jit;
    }
    if (!ok) {
      if (jit <= 0) throw NumericalError("weight matrix is singular and jitter is zero");
      w.diagonal().array() += jit;
      out.jitter_applied_ = jit;
      llt.compute(w);
      if (llt.info() != Eigen::Success) {
        throw NumericalError("weight matrix is not positive definite after jitter");
      }
    }
    out.llt_ = std::move(llt);
  }
  out.w_ = std::move(w);
  return out;
}

Eigen::MatrixXd WeightMatrix::matrix() const {
  if (identity_) return Eigen::MatrixXd::Identity(length_, length_);
  return w_;
}

Eigen::MatrixXd WeightMatrix::factor() const {
  if (identity_) return Eigen::MatrixXd::Identity(length_, length_);
  if (method_ == Factorization::Eigen) return pt_.transpose();
  Eigen::MatrixXd linv = llt_.matrixL().solve(Eigen::MatrixXd::Identity(length_, length_));
  return linv.transpose();
}

Eigen::VectorXd WeightMatrix::map(const Eigen::VectorXd& v) const {
  if (v.size() != length_) {
    throw ValidationError("field has length " + std::to_string(v.size()) + ", kernel expects " +
                          std::to_string(length_));
  }
  if (identity_) return v;
  if (method_ == Factorization::Eigen) return pt_ * v;
  return llt_.matrixL().solve(v);
}

Eigen::MatrixXd WeightMatrix::map(const Eigen::MatrixXd& fields) const {
  if (fields.rows() != length_) {
    throw ValidationError("fields have length " + std::to_string(fields.rows()) +
                          ", kernel expects " + std::to_string(length_));
  }
  if (identity_) return fields;
  if (method_ == Factorization::Eigen) return pt_ * fields;
  return llt_.matrixL().solve(fields);
}

Eigen::MatrixXd grid_correlation(const GridShape& grid, const std::vector<double>& lengths,
                                 double sigma_eta_sq) {
  const int extents[3] = {grid.rows, grid.cols, grid.frames};
  if (lengths.empty() || lengths.size() > 3) {
    throw ValidationError("need one to three correlation lengths (rows, cols, frames)");
  }
  for (size_t d = 0; d < 3; ++d) {
    if (d < lengths.size()) {
      if (!(lengths[d] > 0)) throw ValidationError("correlation lengths must be > 0");
    } else if (extents[d] > 1) {
      throw ValidationError("degenerate geometry: grid axis " + std::to_string(d) +
                            " has extent " + std::to_string(extents[d]) +
                            " but no correlation length");
    }
  }
  // Separable: per-axis tables of exp(-(delta / length)^2).
  std::vector<Eigen::MatrixXd> axis(3);
  for (size_t d = 0; d < 3; ++d) {
    const int e = extents[d];
    axis[d] = Eigen::MatrixXd::Ones(e, e);
    if (d >= lengths.size()) continue;
    for (int i = 0; i < e; ++i) {
      for (int j = 0; j < e; ++j) {
        const double r = (i - j) / lengths[d];
        axis[d](i, j) = std::exp(-r * r);
      }
    }
  }
  const long l = grid.size();
  const int plane = grid.rows * grid.cols;
  Eigen::MatrixXd s(l, l);
  for (long a = 0; a < l; ++a) {
    const int fa = static_cast<int>(a / plane), ra = static_cast<int>((a / grid.cols) % grid.rows),
              ca = static_cast<int>(a % grid.cols);
    for (long b = 0; b <= a; ++b) {
      const int fb = static_cast<int>(b / plane), rb = static_cast<int>((b / grid.cols) % grid.rows),
                cb = static_cast<int>(b % grid.cols);
      const double v = sigma_eta_sq * axis[0](ra, rb) * axis[1](ca, cb) * axis[2](fa, fb);
      s(a, b) = v;
      s(b, a) = v;
    }
  }
  return s;
}

WeightMatrix build_weight_matrix(const std::optional<Eigen::MatrixXd>& obs_cov,
                                 const WeightParams& params, const GridShape& grid,
                                 Factorization method) {
  const long l = grid.size();
  if (params.sigma_eta_sq < 0) throw ValidationError("sigma_eta_sq must be >= 0");
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(l, l);
  bool any = false;
  if (obs_cov) {
    if (obs_cov->rows() != l || obs_cov->cols() != l) {
      throw ValidationError("observation covariance does not match grid size");
    }
    w += *obs_cov;
    any = true;
  }
  if (params.sigma_eta_sq > 0) {
    w += grid_correlation(grid, params.lengths, params.sigma_eta_sq);
    any = true;
  } else if (!params.lengths.empty()) {
    grid_correlation(grid, params.lengths, 1.0);  // validates geometry only
  }
  if (!any) throw ValidationError("structured weight needs obs_cov or sigma_eta_sq > 0");
  auto out = WeightMatrix::from_matrix(std::move(w), params.jitter, method);
  out.has_obs_cov = obs_cov.has_value();
  out.params = params;
  return out;
}

void KernelParams::validate() const {
  if (!(omega >= 0.0 && omega <= 1.0)) throw ValidationError("omega must lie in [0, 1]");
  if (!(sigma > 0.0)) throw ValidationError("sigma must be > 0");
  if (!(delta > 0.0)) throw ValidationError("delta must be > 0");
}

std::string to_document(const KernelParams& p) {
  std::string out;
  out += "omega = " + io::format_double(p.omega) + "\n";
  out += "sigma = " + io::format_double(p.sigma) + "\n";
  out += "delta = " + io::format_double(p.delta) + "\n";
  out += std::string("weight = ") + (p.identity_weight ? "identity" : "structured") + "\n";
  out += "lengths =";
  for (double l : p.weight.lengths) out += " " + io::format_double(l);
  out += "\n";
  out += "sigma_eta_sq = " + io::format_double(p.weight.sigma_eta_sq) + "\n";
  out += "jitter = " + io::format_double(p.weight.jitter) + "\n";
  return out;
}

KernelParams parse_kernel_document(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("kernel document line " + std::to_string(lineno) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto number = [&](const std::string& key, double fallback, bool required) {
    auto it = kv.find(key);
    if (it == kv.end()) {
      if (required) throw ValidationError("kernel document is missing '" + key + "'");
      return fallback;
    }
    return io::parse_double(it->second, "kernel document key " + key);
  };
  KernelParams p;
  p.omega = number("omega", 1.0, true);
  p.sigma = number("sigma", 1.0, true);
  p.delta = number("delta", 1.0, true);
  auto wmode = kv.count("weight") ? kv["weight"] : std::string("identity");
  if (wmode != "identity" && wmode != "structured") {
    throw ValidationError("kernel document: weight must be identity or structured");
  }
  p.identity_weight = wmode == "identity";
  if (kv.count("lengths")) {
    std::istringstream ls(kv["lengths"]);
    std::string tok;
    while (ls >> tok) p.weight.lengths.push_back(io::parse_double(tok, "kernel document lengths"));
  }
  p.weight.sigma_eta_sq = number("sigma_eta_sq", 0.0, false);
  p.weight.jitter = number("jitter", -1.0, false);
  p.validate();
  return p;
}

void save_kernel_params(const KernelParams& params, const std::filesystem::path& path) {
  io::write_file_atomic(path, to_document(params));
}

KernelParams load_kernel_params(const std::filesystem::path& path) {
  return parse_kernel_document(io::read_file(path));
}

KernelSpec make_kernel(double omega, double sigma, double delta, Eigen::Index length) {
  return make_kernel(omega, sigma, delta,
                     std::make_shared<const WeightMatrix>(WeightMatrix::identity(length)));
}

KernelSpec make_kernel(double omega, double sigma, double delta,
                       std::shared_ptr<const WeightMatrix> weight) {
  KernelSpec spec;
  spec.params.omega = omega;
  spec.params.sigma = sigma;
  spec.params.delta = delta;
  spec.params.identity_weight = weight->is_identity();
  if (!weight->is_identity()) spec.params.weight = weight->params;
  spec.params.validate();
  spec.weight = std::move(weight);
  return spec;
}

KernelSpec make_kernel(const KernelParams& params, const std::optional<Eigen::MatrixXd>& obs_cov,
                       const GridShape& grid, Factorization method) {
  params.validate();
  KernelSpec spec;
  spec.params = params;
  if (params.identity_weight) {
    spec.weight = std::make_shared<const WeightMatrix>(WeightMatrix::identity(grid.size()));
  } else {
    spec.weight = std::make_shared<const WeightMatrix>(
        build_weight_matrix(obs_cov, params.weight, grid, method));
  }
  return spec;
}

double kernel_from_mapped(const KernelSpec& spec, const Eigen::VectorXd& pa,
                          const Eigen::VectorXd& pb) {
  const double omega = spec.omega();
  double value = 0.0;
  if (omega > 0.0) value += omega * pa.dot(pb);
  if (omega < 1.0) {
    const double d2 = (pa - pb).squaredNorm();
    value += (1.0 - omega) * spec.sigma() * std::exp(-d2 / spec.delta());
  }
  return value;
}

double eval_kernel(const KernelSpec& spec, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return kernel_from_mapped(spec, spec.weight->map(a), spec.weight->map(b));
}

namespace {

Eigen::MatrixXd kernel_matrix_mapped(const KernelSpec& spec, const Eigen::MatrixXd& mapped) {
  const auto n = mapped.cols();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd a = mapped.col(i);
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = kernel_from_mapped(spec, a, mapped.col(j));
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

}  // namespace

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& fields) {
  if (fields.cols() < 1) throw ValidationError("kernel_matrix needs at least one field");
  return kernel_matrix_mapped(spec, spec.weight->map(fields));
}

Eigen::MatrixXd center_kernel_matrix(const Eigen::MatrixXd& k) {
  const auto n = k.rows();
  if (k.cols() != n) throw ValidationError("kernel matrix must be square");
  // K is symmetric, so row means double as column means.
  const Eigen::VectorXd m = k.rowwise().mean();
  const double g = m.mean();
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = k(i, j) - m(i) - m(j) + g;
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

Eigen::VectorXd centered_cross_kernel(const KernelSpec& spec, const Eigen::MatrixXd& fields,
                                      const Eigen::MatrixXd& k, const Eigen::VectorXd& v) {
  const auto n = fields.cols();
  const Eigen::MatrixXd mapped = spec.weight->map(fields);
  const Eigen::VectorXd pv = spec.weight->map(v);
  Eigen::VectorXd kv(n);
  for (Eigen::Index i = 0; i < n; ++i) kv(i) = kernel_from_mapped(spec, pv, mapped.col(i));
  const Eigen::VectorXd m = k.rowwise().mean();
  const double g = m.mean();
  const double kv_mean = kv.mean();
  return (kv.array() - kv_mean - m.array() + g).matrix();
}

double self_centered_kernel(const KernelSpec& spec, const Eigen::MatrixXd& fields,
                            const Eigen::MatrixXd& k, const Eigen::VectorXd& v) {
  const Eigen::MatrixXd mapped = spec.weight->map(fields);
  const Eigen::VectorXd pv = spec.weight->map(v);
  double kv_sum = 0.0;
  for (Eigen::Index i = 0; i < fields.cols(); ++i) kv_sum += kernel_from_mapped(spec, pv, mapped.col(i));
  return kernel_from_mapped(spec, pv, pv) - 2.0 * kv_sum / static_cast<double>(fields.cols()) +
         k.mean();
}

CenteredKernelSystem CenteredKernelSystem::build(KernelSpec spec, Eigen::MatrixXd fields) {
  CenteredKernelSystem s;
  s.mapped_ = spec.weight->map(fields);
  s.k_ = kernel_matrix_mapped(spec, s.mapped_);
  s.k_tilde_ = center_kernel_matrix(s.k_);
  s.row_means_ = s.k_.rowwise().mean();
  s.grand_mean_ = s.row_means_.mean();
  s.spec_ = std::move(spec);
  s.fields_ = std::move(fields);
  return s;
}

Eigen::VectorXd CenteredKernelSystem::cross_kernel(const Eigen::VectorXd& v) const {
  const Eigen::VectorXd pv = spec_.weight->map(v);
  Eigen::VectorXd kv(size());
  for (Eigen::Index i = 0; i < size(); ++i) kv(i) = kernel_from_mapped(spec_, pv, mapped_.col(i));
  return kv;
}

Eigen::VectorXd CenteredKernelSystem::centered_cross(const Eigen::VectorXd& v) const {
  const Eigen::VectorXd kv = cross_kernel(v);
  const double kv_mean = kv.mean();
  return (kv.array() - kv_mean - row_means_.array() + grand_mean_).matrix();
}

double CenteredKernelSystem::centered_self(const Eigen::VectorXd& v) const {
  const Eigen::VectorXd pv = spec_.weight->map(v);
  double kv_sum = 0.0;
  for (Eigen::Index i = 0; i < size(); ++i) kv_sum += kernel_from_mapped(spec_, pv, mapped_.col(i));
  return kernel_from_mapped(spec_, pv, pv) - 2.0 * kv_sum / static_cast<double>(size()) +
         grand_mean_;
}

}  // namespace khm
