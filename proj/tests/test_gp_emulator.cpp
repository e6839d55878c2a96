#include "doctest.h"
#include "oracles.hpp"

#include "khm/error.hpp"
#include "khm/gp_emulator.hpp"
#include "khm/sampling.hpp"

#include <cmath>
#include <numbers>

using namespace khm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double smooth(const VectorXd& x) { return std::sin(2.0 * x(0)) + 0.5 * x(1) * x(1) - 0.3 * x(0) * x(1); }

VectorXd apply(const MatrixXd& x, double (*f)(const VectorXd&)) {
  VectorXd y(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) y(i) = f(x.row(i).transpose());
  return y;
}

/// Squared-exponential correlation by explicit loops.
MatrixXd corr_loop(const MatrixXd& a, const MatrixXd& b, const std::vector<double>& len) {
  MatrixXd c(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double s = 0;
      for (Eigen::Index d = 0; d < a.cols(); ++d) {
        const double r = (a(i, d) - b(j, d)) / len[static_cast<size_t>(d)];
        s += r * r;
      }
      c(i, j) = std::exp(-s);
    }
  return c;
}

/// Dense-solve posterior mean and variance without any cached factorization.
std::pair<double, double> dense_predict(const TrainedGp& gp, const VectorXd& x) {
  const MatrixXd& xd = gp.design();
  const auto n = xd.rows();
  MatrixXd r = corr_loop(xd, xd, gp.lengths());
  r.diagonal().array() += gp.nugget() + gp.jitter();
  MatrixXd h = MatrixXd::Ones(n, 1);
  Eigen::RowVectorXd hx = Eigen::RowVectorXd::Ones(1);
  if (gp.config().mean_basis == MeanBasis::Linear) {
    h.conservativeResize(n, 1 + xd.cols());
    h.rightCols(xd.cols()) = xd;
    hx.conservativeResize(1 + xd.cols());
    hx.tail(xd.cols()) = x.transpose();
  }
  const Eigen::FullPivLU<MatrixXd> lu(r);
  const MatrixXd ri = lu.inverse();
  const VectorXd beta = (h.transpose() * ri * h).fullPivLu().solve(h.transpose() * ri * gp.targets());
  const VectorXd t = corr_loop(x.transpose(), xd, gp.lengths()).transpose();
  const double mean = hx.dot(beta) + t.dot(ri * (gp.targets() - h * beta));
  const double var = gp.sigma_sq() * (1.0 + gp.nugget() - t.dot(ri * t));
  return {mean, var};
}

}  // namespace

TEST_CASE("null signal") {
  const MatrixXd x = maximin_lhc(8, 2, 1);
  const auto gp = fit_gp(x, VectorXd::Zero(8), GpConfig{}, 3);
  CHECK(gp.beta().cwiseAbs().maxCoeff() == 0.0);
  oracle::Gen g(1);
  for (int i = 0; i < 10; ++i) CHECK(gp.predict(g.box(2, 1).col(0)).mean == 0.0);
}

TEST_CASE("exactly linear targets with a linear mean basis") {
  const MatrixXd x = maximin_lhc(12, 3, 2);
  VectorXd y(12);
  for (int i = 0; i < 12; ++i) y(i) = 1.5 - 2.0 * x(i, 0) + 0.25 * x(i, 1) + 3.0 * x(i, 2);
  GpConfig cfg;
  cfg.mean_basis = MeanBasis::Linear;
  const auto gp = fit_gp(x, y, cfg, 4);
  CHECK(gp.sigma_sq() < 1e-4);
  oracle::Gen g(2);
  for (int i = 0; i < 20; ++i) {
    const VectorXd p = g.box(3, 1).col(0);
    CHECK(std::abs(gp.predict(p).mean - (1.5 - 2.0 * p(0) + 0.25 * p(1) + 3.0 * p(2))) < 1e-6);
  }
}

TEST_CASE("fitted likelihood beats the generating parameters") {
  oracle::Gen g(3);
  for (int trial = 0; trial < 3; ++trial) {
    const MatrixXd x = g.box(20, 2);
    const std::vector<double> len{0.5, 0.5};
    MatrixXd c = corr_loop(x, x, len);
    c.diagonal().array() += 1e-8;
    const MatrixXd l = c.llt().matrixL();
    const VectorXd y = l * g.gaussian(20);
    GpConfig cfg;
    FitTrace trace;
    const auto gp = fit_gp(x, y, cfg, 10 + trial, &trace);
    const double at_truth = log_likelihood(x, y, MeanBasis::Constant, GpHyper{len, cfg.nugget}, 1.0);
    CHECK(gp.log_likelihood() >= at_truth - 1e-6);
    REQUIRE(trace.start_log_likelihoods.size() >= 10);
    for (double s : trace.start_log_likelihoods) CHECK(gp.log_likelihood() >= s - 1e-9);
    // The profile over sigma^2 is the maximum over every fixed sigma^2.
    const GpHyper fitted{gp.lengths(), gp.nugget()};
    const double prof = profile_log_likelihood(x, y, MeanBasis::Constant, fitted);
    for (double s2 : {0.1, 0.5, 1.0, 2.0, 10.0}) CHECK(prof >= log_likelihood(x, y, MeanBasis::Constant, fitted, s2) - 1e-9);
  }
}

TEST_CASE("log_likelihood equals the dense Gaussian density") {
  oracle::Gen g(4);
  const MatrixXd x = g.box(7, 2);
  const VectorXd y = g.gaussian(7);
  const GpHyper hyper{{0.7, 1.3}, 1e-3};
  const double s2 = 0.8;
  MatrixXd r = corr_loop(x, x, hyper.lengths);
  r.diagonal().array() += hyper.nugget;
  const MatrixXd ri = r.inverse();
  const MatrixXd h = MatrixXd::Ones(7, 1);
  const VectorXd beta = (h.transpose() * ri * h).inverse() * h.transpose() * ri * y;
  const VectorXd res = y - h * beta;
  const double expect = -0.5 * 7 * std::log(2 * std::numbers::pi * s2) - 0.5 * std::log(r.determinant()) -
                        0.5 * res.dot(ri * res) / s2;
  CHECK(log_likelihood(x, y, MeanBasis::Constant, hyper, s2) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("predict") {
  const MatrixXd x = maximin_lhc(15, 2, 5);
  const VectorXd y = apply(x, smooth);
  GpConfig cfg;
  cfg.nugget = 0.0;
  const auto gp = fit_gp(x, y, cfg, 6);

  SUBCASE("interpolates training points with nugget 0") {
    for (int i = 0; i < 15; ++i) {
      const auto p = gp.predict(x.row(i).transpose());
      CHECK(std::abs(p.mean - y(i)) < 1e-6);
      CHECK(p.variance <= 1e-8 * gp.sigma_sq());
    }
  }
  SUBCASE("reverts to the prior far away") {
    const auto p = gp.predict(VectorXd::Constant(2, 1e6));
    CHECK(p.mean == doctest::Approx(gp.beta()(0)).epsilon(1e-12));
    CHECK(p.variance == doctest::Approx(gp.sigma_sq() * (1 + gp.nugget())).epsilon(1e-12));
  }
  SUBCASE("matches a dense solve") {
    oracle::Gen g(7);
    for (auto basis : {MeanBasis::Constant, MeanBasis::Linear}) {
      GpConfig c2;
      c2.mean_basis = basis;
      c2.nugget = 1e-4;
      const auto gp2 = fit_gp(x, y, c2, 8);
      for (int i = 0; i < 10; ++i) {
        const VectorXd p = g.box(2, 1).col(0);
        const auto [m, v] = dense_predict(gp2, p);
        CHECK(gp2.predict(p).mean == doctest::Approx(m).epsilon(1e-8));
        CHECK(gp2.predict(p).variance == doctest::Approx(v).epsilon(1e-6));
      }
    }
  }
  SUBCASE("stored factorization reproduces the training covariance") {
    MatrixXd expect = corr_loop(x, x, gp.lengths());
    expect.diagonal().array() += gp.nugget() + gp.jitter();
    expect *= gp.sigma_sq();
    CHECK(oracle::rel_err(gp.covariance() / gp.sigma_sq(), expect / gp.sigma_sq()) < 1e-8);
  }
}

TEST_CASE("variance bounds (property)") {
  oracle::Gen g(8);
  for (int trial = 0; trial < 5; ++trial) {
    const MatrixXd x = g.box(12, 2);
    const VectorXd y = apply(x, smooth) + 0.05 * g.gaussian(12);
    GpConfig cfg;
    cfg.nugget = trial % 2 ? 0.0 : 1e-3;
    const auto gp = fit_gp(x, y, cfg, 20 + trial);
    for (int i = 0; i < 50; ++i) {
      const auto p = gp.predict(g.box(2, 1, -2, 2).col(0));
      CHECK(p.variance >= 0.0);
      CHECK(p.variance <= gp.sigma_sq() * (1 + gp.nugget()) * (1 + 1e-8));
    }
  }
}

TEST_CASE("fits are deterministic and permutation invariant") {
  oracle::Gen g(9);
  const MatrixXd x = g.box(14, 2);
  const VectorXd y = apply(x, smooth);
  const auto a = fit_gp(x, y, GpConfig{}, 42);
  const auto b = fit_gp(x, y, GpConfig{}, 42);
  CHECK(a.lengths() == b.lengths());
  CHECK(a.log_likelihood() == b.log_likelihood());

  std::vector<int> perm(14);
  for (int i = 0; i < 14; ++i) perm[static_cast<size_t>(i)] = (i * 5 + 3) % 14;
  MatrixXd xp(14, 2);
  VectorXd yp(14);
  for (int i = 0; i < 14; ++i) {
    xp.row(i) = x.row(perm[static_cast<size_t>(i)]);
    yp(i) = y(perm[static_cast<size_t>(i)]);
  }
  const auto c = fit_gp(xp, yp, GpConfig{}, 42);
  for (int i = 0; i < 20; ++i) {
    const VectorXd p = g.box(2, 1).col(0);
    CHECK(std::abs(a.predict(p).mean - c.predict(p).mean) < 1e-6);
  }
}

TEST_CASE("fit_gp errors") {
  const MatrixXd x = maximin_lhc(3, 2, 1);
  GpConfig lin;
  lin.mean_basis = MeanBasis::Linear;
  CHECK_THROWS_AS(fit_gp(x, VectorXd::Ones(3), lin, 1), ValidationError);
  CHECK_THROWS_AS(fit_gp(x, VectorXd::Ones(2), GpConfig{}, 1), ValidationError);
  VectorXd bad = VectorXd::Ones(3);
  bad(1) = NAN;
  CHECK_THROWS_AS(fit_gp(x, bad, GpConfig{}, 1), ValidationError);
  MatrixXd flat(4, 2);
  flat << 0.1, 0.5, 0.2, 0.5, 0.3, 0.5, 0.4, 0.5;
  try {
    (void)fit_gp(flat, VectorXd::LinSpaced(4, 0, 1), lin, 1);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("singular regressor") != std::string::npos);
  }
}

TEST_CASE("leave-one-out predictions") {
  SUBCASE("a duplicate of the held-out point keeps its value") {
    MatrixXd x = maximin_lhc(8, 2, 3);
    MatrixXd xd(9, 2);
    xd << x, x.row(2);
    const VectorXd y = apply(xd, smooth);
    GpConfig cfg;
    cfg.nugget = 0.0;
    const auto p = loo_predict(xd, y, cfg, 8, 1);
    CHECK(std::abs(p.mean - y(8)) < 1e-6);
  }
  SUBCASE("collinear targets with a linear mean") {
    MatrixXd x(3, 1);
    x << -0.8, 0.1, 0.7;
    VectorXd y(3);
    for (int i = 0; i < 3; ++i) y(i) = 0.5 + 2.0 * x(i, 0);
    GpConfig cfg;
    cfg.mean_basis = MeanBasis::Linear;
    // Two remaining points and two regressors leave no residual process.
    CHECK_THROWS_AS(loo_predict(x, y, cfg, 1, 1), ValidationError);
    MatrixXd x4(4, 1);
    x4 << -0.8, -0.2, 0.1, 0.7;
    VectorXd y4(4);
    for (int i = 0; i < 4; ++i) y4(i) = 0.5 + 2.0 * x4(i, 0);
    const auto p = loo_predict(x4, y4, cfg, 2, 1);
    CHECK(std::abs(p.mean - (0.5 + 2.0 * 0.1)) < 1e-6);
  }
  SUBCASE("95% intervals cover held-out truth on a smooth function") {
    const MatrixXd x = maximin_lhc(40, 2, 4);
    const VectorXd y = apply(x, smooth);
    int hit = 0;
    for (int i = 0; i < 40; ++i) {
      const auto p = loo_predict(x, y, GpConfig{}, i, 9);
      hit += std::abs(y(i) - p.mean) <= 1.96 * std::sqrt(p.variance);
    }
    CHECK(hit >= 32);
  }
  CHECK_THROWS_AS(loo_predict(maximin_lhc(2, 1, 1), VectorXd::Ones(2), GpConfig{}, 0, 1), ValidationError);
}

TEST_CASE("coefficient emulators") {
  const MatrixXd x = maximin_lhc(20, 3, 7);
  oracle::Gen g(10);
  MatrixXd coeffs(20, 3);
  for (int i = 0; i < 20; ++i) {
    const VectorXd xi = x.row(i).transpose();
    coeffs(i, 0) = smooth(xi);
    coeffs(i, 1) = std::cos(xi(2)) * 3;
    coeffs(i, 2) = xi(0) - xi(1);
  }
  const auto em = emulate_coefficients(x, coeffs, GpConfig{}, 5);
  CHECK(em.q() == 3);
  const auto single = fit_gp(x, coeffs.col(0), GpConfig{}, derive_seed(5, 0));
  const auto one = emulate_coefficients(x, coeffs.leftCols(1), GpConfig{}, 5);
  const VectorXd p = g.box(3, 1).col(0);
  CHECK(one.predict(p).mean(0) == single.predict(p).mean);

  MatrixXd swapped(20, 3);
  swapped << coeffs.col(2), coeffs.col(0), coeffs.col(1);
  const auto ems = emulate_coefficients(x, swapped, GpConfig{}, 5);
  for (int rep = 0; rep < 10; ++rep) {
    const VectorXd q = g.box(3, 1).col(0);
    const auto a = em.predict(q), b = ems.predict(q);
    CHECK(std::abs(a.mean(2) - b.mean(0)) < 1e-4 * (1 + std::abs(a.mean(2))));
    CHECK(std::abs(a.mean(0) - b.mean(1)) < 1e-4 * (1 + std::abs(a.mean(0))));
    CHECK(std::abs(a.mean(1) - b.mean(2)) < 1e-4 * (1 + std::abs(a.mean(1))));
  }

  CHECK_THROWS_AS(emulate_coefficients(x, MatrixXd::Ones(19, 2), GpConfig{}, 1), ValidationError);
}

TEST_CASE("emulator save and load reproduce predictions") {
  const MatrixXd x = maximin_lhc(12, 2, 8);
  MatrixXd coeffs(12, 2);
  for (int i = 0; i < 12; ++i) {
    coeffs(i, 0) = smooth(x.row(i).transpose());
    coeffs(i, 1) = x(i, 0) * x(i, 1);
  }
  GpConfig cfg;
  cfg.mean_basis = MeanBasis::Linear;
  const auto em = emulate_coefficients(x, coeffs, cfg, 2);
  const auto dir = oracle::scratch("gp_save");
  save_emulators(em, dir / "e.json");
  const auto back = load_emulators(dir / "e.json");
  oracle::Gen g(11);
  for (int i = 0; i < 20; ++i) {
    const VectorXd p = g.box(2, 1).col(0);
    const auto a = em.predict(p), b = back.predict(p);
    CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() <= 1e-12 * (1 + a.mean.cwiseAbs().maxCoeff()));
    CHECK((a.variance - b.variance).cwiseAbs().maxCoeff() <= 1e-12 * (1 + a.variance.cwiseAbs().maxCoeff()));
  }
  CHECK(emulators_to_json(back) == emulators_to_json(em));
  CHECK_THROWS_AS(emulators_from_json("{not json"), ValidationError);
}
