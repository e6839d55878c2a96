#include "khm/implausibility.hpp"

#include "khm/error.hpp"
#include "khm/text_io.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>

namespace khm {

ImplausibilityContext ImplausibilityContext::make(std::shared_ptr<const KpcaBasis> basis,
                                                  CoefficientEmulators emulators,
                                                  const Eigen::VectorXd& z) {
  if (emulators.q() != basis->q()) {
    throw ValidationError("emulator count " + std::to_string(emulators.q()) +
                          " does not match basis rank " + std::to_string(basis->q()));
  }
  ImplausibilityContext ctx;
  ctx.obs = basis->project_full(z);
  ctx.basis = std::move(basis);
  ctx.emulators = std::move(emulators);
  return ctx;
}

double imp0(const KernelSpec& spec, const Eigen::VectorXd& f, const Eigen::VectorXd& z) {
  if (f.size() != z.size()) throw ValidationError("imp0 needs fields of equal length");
  const Eigen::VectorXd pf = spec.weight->map(f);
  const Eigen::VectorXd pz = spec.weight->map(z);
  const double v = kernel_from_mapped(spec, pz, pz) + kernel_from_mapped(spec, pf, pf) -
                   2.0 * kernel_from_mapped(spec, pf, pz);
  return std::max(0.0, v);
}

double imp_f1_from(const Projection& obs, const Eigen::VectorXd& mean) {
  if (mean.size() != obs.coeffs.size()) throw ValidationError("coefficient length mismatch");
  const double v = obs.self + mean.squaredNorm() - 2.0 * mean.dot(obs.coeffs);
  return clamp_reconstruction(obs.self, v);
}

double imp_f1(const ImplausibilityContext& ctx, const Eigen::VectorXd& x) {
  return imp_f1_from(ctx.obs, ctx.emulators.predict(x).mean);
}

double threshold_from_variance(double total_variance, double a, double t) {
  return total_variance + t * std::sqrt(2.0 * total_variance * total_variance) + a;
}

double threshold_T(const ImplausibilityContext& ctx, const Eigen::VectorXd& x) {
  if (!ctx.bound_a) throw ValidationError("threshold T(x) needs the bound a");
  return threshold_from_variance(ctx.emulators.predict(x).variance.sum(), *ctx.bound_a, ctx.t);
}

double imp_f2_from(const Projection& obs, const CoefficientPrediction& pred) {
  if (pred.mean.size() != obs.coeffs.size()) throw ValidationError("coefficient length mismatch");
  const Eigen::ArrayXd d = (obs.coeffs - pred.mean).array();
  return (d.square() / (pred.variance.array() + 1.0)).sum() + obs.recon_err_sq;
}

double imp_f2(const ImplausibilityContext& ctx, const Eigen::VectorXd& x) {
  return imp_f2_from(ctx.obs, ctx.emulators.predict(x));
}

double standard_implausibility(const Eigen::VectorXd& z, const Eigen::VectorXd& mean,
                               const Eigen::MatrixXd& total_cov) {
  if (z.size() != mean.size() || total_cov.rows() != z.size() || total_cov.cols() != z.size()) {
    throw ValidationError("standard implausibility: dimension mismatch");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(total_cov);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("total covariance is not positive definite");
  }
  const Eigen::VectorXd d = z - mean;
  const Eigen::VectorXd w = llt.matrixL().solve(d);
  return w.squaredNorm();
}

double coefficient_implausibility(const Eigen::VectorXd& cz, const Eigen::VectorXd& mean,
                                  const Eigen::MatrixXd& var, const Eigen::MatrixXd& proj_obs_cov,
                                  const Eigen::MatrixXd& proj_disc_cov) {
  const auto q = cz.size();
  if (mean.size() != q || var.rows() != q || var.cols() != q || proj_obs_cov.rows() != q ||
      proj_obs_cov.cols() != q || proj_disc_cov.rows() != q || proj_disc_cov.cols() != q) {
    throw ValidationError("coefficient implausibility: dimension mismatch");
  }
  const Eigen::MatrixXd inner = var + proj_obs_cov + proj_disc_cov;
  Eigen::LLT<Eigen::MatrixXd> llt(inner);
  if (llt.info() != Eigen::Success) throw NumericalError("coefficient covariance is singular");
  const Eigen::VectorXd w = llt.matrixL().solve(cz - mean);
  return w.squaredNorm();
}

Eigen::MatrixXd output_space_basis(const KpcaBasis& basis) {
  const auto& f = basis.system().fields();
  const Eigen::VectorXd u = f.rowwise().mean();
  return (f.colwise() - u) * basis.alpha();
}

OutputPrediction output_space_prediction(const KpcaBasis& basis, const CoefficientPrediction& pred) {
  const auto& f = basis.system().fields();
  const Eigen::MatrixXd b = output_space_basis(basis);
  OutputPrediction out;
  out.mean = f.rowwise().mean() + b * pred.mean;
  out.cov = b * pred.variance.asDiagonal() * b.transpose();
  return out;
}

double bound_a_from_unacceptable(const KpcaBasis& basis, const Projection& obs,
                                 const std::vector<Eigen::Index>& unacceptable) {
  if (unacceptable.empty()) throw ValidationError("bound a needs at least one unacceptable run");
  const Eigen::MatrixXd c = basis.training_coefficients();
  double best = std::numeric_limits<double>::infinity();
  for (auto i : unacceptable) {
    if (i < 0 || i >= c.rows()) throw ValidationError("unacceptable run index out of range");
    const Eigen::VectorXd cu = c.row(i).transpose();
    best = std::min(best, imp_f1_from(obs, cu));
  }
  return best;
}

T2Result derive_T2(const KpcaBasis& basis, const Eigen::MatrixXd& design, const Projection& obs,
                   const std::vector<Eigen::Index>& unacceptable, const GpConfig& config,
                   std::uint64_t seed) {
  if (unacceptable.empty()) throw ValidationError("T2 needs at least one unacceptable run");
  const Eigen::MatrixXd coeffs = basis.training_coefficients();
  if (design.rows() != coeffs.rows()) throw ValidationError("design does not match basis size");
  T2Result out;
  out.t2 = std::numeric_limits<double>::infinity();
  for (auto i : unacceptable) {
    if (i < 0 || i >= design.rows()) throw ValidationError("unacceptable run index out of range");
    CoefficientEmulators loo;
    try {
      loo = emulate_coefficients(drop_row(design, i), drop_row(coeffs, i), config,
                                 derive_seed(seed, static_cast<std::uint64_t>(i)));
    } catch (const Error& e) {
      throw NumericalError("leave-one-out fit without member " + std::to_string(i) + ": " + e.what());
    }
    const double v = imp_f2_from(obs, loo.predict(design.row(i).transpose()));
    out.member_values.push_back(v);
    out.t2 = std::min(out.t2, v);
  }
  return out;
}

}  // namespace khm
