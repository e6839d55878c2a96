#include "khm/kpca.hpp"

#include "khm/error.hpp"
#include "khm/text_io.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace khm {

KpcaBasis fit_kpca(std::shared_ptr<const CenteredKernelSystem> system, const QRule& rule) {
  const auto& kt = system->k_tilde();
  const auto n = kt.rows();
  if (n < 2) throw ValidationError("KPCA needs n >= 2");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(kt);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of centered kernel failed");

  // Eigen returns ascending order.
  const Eigen::VectorXd vals = es.eigenvalues().reverse();
  const Eigen::MatrixXd vecs = es.eigenvectors().rowwise().reverse();
  const double lambda1 = vals(0);
  const double scale = std::max(system->k().cwiseAbs().maxCoeff(), 1e-300);
  if (!(lambda1 > 1e-12 * scale)) {
    throw NumericalError("centered kernel matrix has no positive eigenvalues (constant ensemble?)");
  }
  Eigen::Index positive = 0;
  while (positive < n && vals(positive) >= 1e-10 * lambda1) ++positive;

  Eigen::Index q = 0;
  if (rule.kind == QRule::Kind::Fixed) {
    if (rule.q < 1) throw ValidationError("q must be >= 1");
    q = std::min<Eigen::Index>(rule.q, positive);
  } else {
    if (!(rule.fraction > 0.0 && rule.fraction <= 1.0)) {
      throw ValidationError("variance fraction must lie in (0, 1]");
    }
    const double total = vals.head(positive).sum();
    double acc = 0.0;
    while (q < positive) {
      acc += vals(q);
      ++q;
      if (acc >= rule.fraction * total) break;
    }
  }

  KpcaBasis b;
  b.system_ = std::move(system);
  b.all_eigenvalues_ = vals.head(positive);
  b.eigenvalues_ = vals.head(q);
  b.vectors_ = vecs.leftCols(q);
  for (Eigen::Index k = 0; k < q; ++k) {
    Eigen::Index imax = 0;
    b.vectors_.col(k).cwiseAbs().maxCoeff(&imax);
    if (b.vectors_(imax, k) < 0) b.vectors_.col(k) *= -1.0;
  }
  b.alpha_ = b.vectors_ * b.eigenvalues_.cwiseSqrt().cwiseInverse().asDiagonal();
  return b;
}

Eigen::MatrixXd KpcaBasis::training_coefficients() const {
  return system_->k_tilde() * alpha_;
}

Eigen::VectorXd KpcaBasis::project(const Eigen::VectorXd& v) const {
  return alpha_.transpose() * system_->centered_cross(v);
}

double clamp_reconstruction(double self, double value) {
  if (value >= 0.0) return value;
  const double tol = 1e-8 * std::max(std::abs(self), 1e-300);
  if (value >= -tol) return 0.0;
  throw NumericalError("negative reconstruction error " + io::format_double(value) +
                       " (basis inconsistent with kernel system)");
}

Projection KpcaBasis::project_full(const Eigen::VectorXd& v) const {
  Projection p;
  p.centered = system_->centered_cross(v);
  p.self = system_->centered_self(v);
  p.coeffs = alpha_.transpose() * p.centered;
  p.recon_err_sq = clamp_reconstruction(p.self, p.self - p.coeffs.squaredNorm());
  return p;
}

double KpcaBasis::reconstruction_error_sq(const Eigen::VectorXd& v) const {
  return project_full(v).recon_err_sq;
}

KpcaBasis KpcaBasis::truncated(int q) const {
  if (q < 0 || q > this->q()) throw ValidationError("truncation rank out of range");
  KpcaBasis b = *this;
  b.alpha_ = alpha_.leftCols(q);
  b.vectors_ = vectors_.leftCols(q);
  b.eigenvalues_ = eigenvalues_.head(q);
  return b;
}

std::string basis_document(const KpcaBasis& basis) {
  std::string out = "q = " + std::to_string(basis.q()) + "\n";
  out += "n = " + std::to_string(basis.alpha().rows()) + "\n";
  out += "eigenvalues =";
  for (double v : basis.positive_eigenvalues()) out += " " + io::format_double(v);
  out += "\n# rows of A (n x q)\n";
  for (Eigen::Index i = 0; i < basis.alpha().rows(); ++i) {
    for (Eigen::Index k = 0; k < basis.alpha().cols(); ++k) {
      if (k) out += ',';
      out += io::format_double(basis.alpha()(i, k));
    }
    out += '\n';
  }
  return out;
}

std::string coefficients_table(const Eigen::MatrixXd& coeffs) {
  std::string out = "run_index";
  for (Eigen::Index k = 0; k < coeffs.cols(); ++k) out += ",C" + std::to_string(k + 1);
  out += '\n';
  for (Eigen::Index i = 0; i < coeffs.rows(); ++i) {
    out += std::to_string(i);
    for (Eigen::Index k = 0; k < coeffs.cols(); ++k) out += "," + io::format_double(coeffs(i, k));
    out += '\n';
  }
  return out;
}

Eigen::MatrixXd parse_coefficients_table(const std::filesystem::path& path) {
  auto table = io::read_table(path, true);
  Eigen::MatrixXd m = io::to_matrix(table, path);
  if (m.cols() < 2) throw ValidationError(path.string() + ": expected run_index and coefficients");
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (m(i, 0) != static_cast<double>(i)) {
      throw ValidationError(path.string() + ": run_index column must be 0..n-1 in order");
    }
  }
  return m.rightCols(m.cols() - 1);
}

}  // namespace khm
