// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "oracles.hpp"

#include "khm/implausibility.hpp"
#include "khm/kernel_selection.hpp"
#include "khm/sampling.hpp"
#include "khm/toy_pipeline.hpp"
#include "khm/toy_sim.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

using namespace khm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

KernelSpec linear_weighted(const MatrixXd& w) {
  return make_kernel(1, 1, 1, std::make_shared<const WeightMatrix>(WeightMatrix::from_matrix(w)));
}

/// Linear kernel with weight W = obs_cov + Sigma_eta on the toy grid, full
/// rank; imp_f2 against the output-space quadratic form with Var f + W.
Outcome equivalence_on_toy() {
  const auto t0 = Clock::now();
  const ToyConfig cfg;
  const auto e = make_toy_ensemble(cfg, 30, 1);
  const int l = static_cast<int>(e.outputs.length());
  const MatrixXd w = *e.observation.obs_cov + oracle::grid_cov_loop(cfg.rows, cfg.cols, 3.0, 3.0, 0.01);

  KernelParams p;
  p.omega = 1;
  p.identity_weight = false;
  p.weight.lengths = {3.0, 3.0};
  p.weight.sigma_eta_sq = 0.01;
  const auto spec = make_kernel(p, e.observation.obs_cov, cfg.grid());
  if (oracle::rel_err(spec.weight->matrix(), w) > 1e-12) return {false, "weight matrix differs from the direct sum"};

  auto sys = std::make_shared<const CenteredKernelSystem>(CenteredKernelSystem::build(spec, e.outputs.fields()));
  auto basis = std::make_shared<const KpcaBasis>(fit_kpca(sys, QRule::full()));
  const auto& x = e.design.points();
  const auto emulators = emulate_coefficients(x, basis->training_coefficients(), GpConfig{}, 3);
  const auto ctx = ImplausibilityContext::make(basis, emulators, e.observation.z);

  const MatrixXd& f = e.outputs.fields();
  const VectorXd u = f.rowwise().mean();
  const MatrixXd b = (f.colwise() - u) * basis->alpha();
  oracle::Gen g(11);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const VectorXd xi = g.box(3, 1).col(0);
    const auto pred = emulators.predict(xi);
    const MatrixXd total = b * pred.variance.asDiagonal() * b.transpose() + w;
    const VectorXd d = e.observation.z - (u + b * pred.mean);
    const double direct = d.dot(total.ldlt().solve(d));
    worst = std::max(worst, std::abs(imp_f2(ctx, xi) - direct) / (1 + direct));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 60,
          fmt("l=%g q=%g max |diff|/(1+value)=%.3g time=%.1fs", l, basis->q(), worst, secs)};
}

struct Instance {
  MatrixXd w, f;
  VectorXd z;
  std::shared_ptr<const KpcaBasis> basis;
  MatrixXd psi;
  VectorXd phi_z;
};

Instance linear_instance(oracle::Gen& g, int l, int n, const QRule& rule) {
  Instance s;
  s.w = g.spd(l);
  s.f = g.gaussian(l, n);
  s.z = g.gaussian(l);
  auto sys = std::make_shared<const CenteredKernelSystem>(CenteredKernelSystem::build(linear_weighted(s.w), s.f));
  s.basis = std::make_shared<const KpcaBasis>(fit_kpca(sys, rule));
  const oracle::LinearFeatures lf(s.f, oracle::inverse_sqrt(s.w));
  const int q = s.basis->q();
  s.psi = lf.aligned(oracle::column_signs(s.basis->training_coefficients(), lf.centered.transpose() * lf.basis.leftCols(q)));
  s.phi_z = lf.phi_tilde(s.z);
  return s;
}

Outcome explicit_features() {
  oracle::Gen g(21);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int l = g.integer(2, 50), n = g.integer(3, 20);
    const int rank = std::min(l, n - 1);
    const auto s = linear_instance(g, l, n, QRule::fixed(g.integer(1, rank)));
    const int q = s.basis->q();
    const auto obs = s.basis->project_full(s.z);
    const VectorXd c_ref = oracle::LinearFeatures::project(s.psi, s.phi_z);
    worst = std::max(worst, oracle::rel_err(s.basis->project(s.z), c_ref));
    worst = std::max(worst, oracle::rel_err(s.basis->reconstruction_error_sq(s.z), oracle::LinearFeatures::recon(s.psi, s.phi_z)));
    for (int rep = 0; rep < 5; ++rep) {
      const CoefficientPrediction pred{g.gaussian(q), g.box(q, 1, 0, 4).col(0)};
      worst = std::max(worst, oracle::rel_err(imp_f1_from(obs, pred.mean),
                                              oracle::LinearFeatures::imp_f1(s.psi, s.phi_z, pred.mean)));
      worst = std::max(worst, oracle::rel_err(imp_f2_from(obs, pred),
                                              oracle::LinearFeatures::imp_f2(s.psi, s.phi_z, pred.mean, pred.variance)));
    }
  }
  return {worst <= 1e-8, fmt("50 instances, max relative error %.3g", worst)};
}

Outcome woodbury() {
  oracle::Gen g(31);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int l = g.integer(5, 40), n = g.integer(5, 20);
    const auto s = linear_instance(g, l, n, trial % 2 ? QRule::full() : QRule::fixed(2));
    const int q = s.basis->q();
    const auto obs = s.basis->project_full(s.z);
    VectorXd v(q);
    for (int k = 0; k < q; ++k) v(k) = std::exp(g.uniform(-5, 3));
    const CoefficientPrediction pred{obs.coeffs + g.gaussian(q), v};
    const Eigen::Index m = s.psi.rows();
    const MatrixXd inner = MatrixXd::Identity(m, m) + s.psi * v.asDiagonal() * s.psi.transpose();
    const VectorXd r = s.phi_z - s.psi * pred.mean;
    const double dense = r.dot(inner.fullPivLu().solve(r));
    worst = std::max(worst, oracle::rel_err(imp_f2_from(obs, pred), dense));
  }
  return {worst <= 1e-8, fmt("20 instances, max relative error %.3g", worst)};
}

Outcome threshold_coverage() {
  oracle::Gen g(41);
  const ToyConfig cfg;
  const auto e = make_toy_ensemble(cfg, 30, 2);
  auto sys = std::make_shared<const CenteredKernelSystem>(
      CenteredKernelSystem::build(make_kernel(0.5, 1.0, 5.0, e.outputs.length()), e.outputs.fields()));
  const auto basis = fit_kpca(sys, QRule::fixed(8));
  const auto obs = basis.project_full(e.observation.z);
  const double a = obs.recon_err_sq;
  double worst = 0;
  for (int profile = 0; profile < 10; ++profile) {
    const int q = g.integer(1, basis.q());
    const KpcaBasis b = basis.truncated(q);
    const auto o = b.project_full(e.observation.z);
    VectorXd v(q);
    for (int k = 0; k < q; ++k) v(k) = std::exp(g.uniform(-6, 1));
    const double t = threshold_from_variance(v.sum(), std::max(a, o.recon_err_sq));
    int over = 0;
    for (int d = 0; d < 10000; ++d) {
      VectorXd c = o.coeffs;
      for (int k = 0; k < q; ++k) c(k) += std::sqrt(v(k)) * g.normal();
      over += imp_f1_from(o, c) > t;
    }
    worst = std::max(worst, over / 10000.0);
  }
  return {worst < 0.1, fmt("10 profiles x 1e4 draws, worst exceedance rate %.4f", worst)};
}

Outcome kpca_matches_pca() {
  oracle::Gen g(51);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int l = g.integer(3, 60), n = g.integer(3, 30);
    const MatrixXd f = g.gaussian(l, n);
    auto sys = std::make_shared<const CenteredKernelSystem>(CenteredKernelSystem::build(make_kernel(1, 1, 1, l), f));
    const auto basis = fit_kpca(sys, QRule::full());
    const MatrixXd ft = f.colwise() - f.rowwise().mean();
    Eigen::JacobiSVD<MatrixXd> svd(ft, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const int q = basis.q();
    const VectorXd s2 = svd.singularValues().head(q).array().square();
    for (int k = 0; k < q; ++k) worst = std::max(worst, std::abs(basis.eigenvalues()(k) - s2(k)) / s2(k));
    const MatrixXd scores = svd.matrixV().leftCols(q) * svd.singularValues().head(q).asDiagonal();
    const MatrixXd coeffs = basis.training_coefficients();
    const MatrixXd aligned = scores * oracle::column_signs(coeffs, scores).asDiagonal();
    for (int k = 0; k < q; ++k)
      worst = std::max(worst, (coeffs.col(k) - aligned.col(k)).norm() / aligned.col(k).norm());
  }
  return {worst <= 1e-8, fmt("20 instances, max relative error %.3g", worst)};
}

Outcome location_pathology() {
  const auto t0 = Clock::now();
  const MatrixXd id = MatrixXd::Identity(100, 100);
  const VectorXd z = line_field(10, 10, 4);
  const double empty = standard_implausibility(z, VectorXd::Zero(100), id);
  const double shifted = standard_implausibility(z, line_field(10, 10, 5), id);
  const bool fixture = empty == 10.0 && shifted == 20.0;

  const ToyConfig cfg;
  const auto e = make_toy_ensemble(cfg, 30, 7);
  const auto labels = auto_label(cfg, e.design.points());
  const auto fit = optimize_kernel(e, labels, default_search_space(e, false), SearchConfig{}, 1);

  std::vector<double> ia, iu;
  for (auto i : labels.acceptable()) ia.push_back(fit.i0[static_cast<size_t>(i)]);
  for (auto i : labels.unacceptable()) iu.push_back(fit.i0[static_cast<size_t>(i)]);
  const double p_fit = oracle::cost_scan(ia, iu, fit.t_star_star, 0.8);
  bool admits_all = true;
  for (double v : ia)
    if (v > fit.t_star_star && oracle::cost_scan(ia, iu, v, 0.8) >= p_fit) admits_all = false;

  std::vector<double> da, du;
  for (auto i : labels.acceptable()) da.push_back((e.outputs.fields().col(i) - e.observation.z).squaredNorm());
  for (auto i : labels.unacceptable()) du.push_back((e.outputs.fields().col(i) - e.observation.z).squaredNorm());
  double p_base = 0;
  for (const auto* vals : {&da, &du})
    for (double t : *vals) p_base = std::max(p_base, oracle::cost_scan(da, du, t, 0.8));

  const double secs = seconds_since(t0);
  const bool pass = fixture && admits_all && p_fit >= 0.9 && p_fit > p_base && secs < 300;
  return {pass, fmt("line fixture %g vs %g; fitted P=%.4f, squared-distance baseline P=%.4f", empty, shifted, p_fit,
                    p_base) +
                    (admits_all ? "; T** admits every acceptable run it can" : "; a larger threshold scores as well") +
                    fmt("; time=%.1fs", secs)};
}

Outcome three_waves() {
  ToyPipelineConfig cfg;
  const auto root = std::filesystem::temp_directory_path() / "khm_acceptance_waves";
  std::filesystem::remove_all(root);
  const auto a = run_toy_waves(cfg, 7, root / "a");
  run_toy_waves(cfg, 7, root / "b");
  const bool same = oracle::tree(root / "a") == oracle::tree(root / "b") && !oracle::tree(root / "a").empty();
  bool nested = true, covered = true;
  std::string detail = same ? "stores identical;" : "stores differ;";
  for (size_t k = 0; k < a.size(); ++k) {
    detail += fmt(" wave %g NROY=%.4f (se %.4f) coverage=%.3f;", static_cast<double>(k + 1), a[k].nroy.fraction,
                  a[k].nroy.std_error, a[k].loo_coverage.value_or(-1));
    if (!a[k].loo_coverage || *a[k].loo_coverage < 0.8) covered = false;
    if (k > 0) {
      const double se = std::hypot(a[k].nroy.std_error, a[k - 1].nroy.std_error);
      if (a[k].nroy.fraction > a[k - 1].nroy.fraction + 3 * se) nested = false;
    }
  }
  return {same && nested && covered && a.size() == 3, detail};
}

Outcome limit_law() {
  const ToyConfig cfg;
  const auto e = make_toy_ensemble(cfg, 50, 4);
  auto sys = std::make_shared<const CenteredKernelSystem>(
      CenteredKernelSystem::build(make_kernel(0.3, 2.0, 10.0, e.outputs.length()), e.outputs.fields()));
  auto basis = std::make_shared<const KpcaBasis>(fit_kpca(sys, QRule::fixed(5)));
  GpConfig gp;
  gp.nugget = 0.0;
  const auto& x = e.design.points();
  const auto ctx = ImplausibilityContext::make(
      basis, emulate_coefficients(x, basis->training_coefficients(), gp, 5), e.observation.z);
  double worst = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const VectorXd xi = x.row(i).transpose();
    const double f1 = imp_f1(ctx, xi);
    worst = std::max(worst, std::abs(imp_f2(ctx, xi) - f1) / (1 + f1));
  }
  return {worst <= 1e-6, fmt("50 training inputs, max |imp_f2 - imp_f1|/(1+imp_f1)=%.3g", worst)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"linear-kernel equivalence with output-space implausibility on the toy grid", equivalence_on_toy},
      {"explicit feature-space oracle", explicit_features},
      {"Woodbury form of imp_f2", woodbury},
      {"Monte Carlo exceedance of T below 0.1", threshold_coverage},
      {"KPCA with linear kernel equals PCA", kpca_matches_pca},
      {"location pathology and kernel selection", location_pathology},
      {"three-wave toy pipeline", three_waves},
      {"imp_f2 tends to imp_f1 at training inputs", limit_law},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
