#include "doctest.h"
#include "oracles.hpp"

#include "khm/error.hpp"
#include "khm/kernel_selection.hpp"
#include "khm/toy_sim.hpp"

#include <cmath>

using namespace khm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd x3(double a, double b, double c) {
  VectorXd x(3);
  x << a, b, c;
  return x;
}

}  // namespace

TEST_CASE("band closed form") {
  const ToyConfig cfg;
  const VectorXd f = simulate(cfg, x3(0, -1, 1));
  for (int j = 0; j < cfg.cols; ++j) {
    CHECK(f(10 * cfg.cols + j) == doctest::Approx(1.0));
    CHECK(f(11 * cfg.cols + j) == doctest::Approx(std::exp(-0.5)));
    CHECK(f(11 * cfg.cols + j) == doctest::Approx(0.60653).epsilon(1e-5));
  }
  CHECK(simulate(cfg, x3(0.3, 0.2, -1)).maxCoeff() <= 0.2 + 1e-15);
  CHECK(simulate(cfg, x3(0.0, 0.2, -1)).maxCoeff() == doctest::Approx(0.2));
  CHECK_THROWS_AS(simulate(cfg, x3(1.5, 0, 0)), ValidationError);
}

TEST_CASE("fields are constant along rows (property)") {
  const ToyConfig cfg;
  oracle::Gen g(1);
  for (int t = 0; t < 50; ++t) {
    const VectorXd x = g.box(3, 1).col(0);
    const VectorXd f = simulate(cfg, x);
    for (int i = 0; i < cfg.rows; ++i)
      for (int j = 1; j < cfg.cols; ++j) CHECK(f(i * cfg.cols + j) == f(i * cfg.cols));
    CHECK(cfg.width(x) > 0);
    CHECK(cfg.amplitude(x) >= 0.2);
    CHECK(cfg.amplitude(x) <= 1.0);
  }
}

TEST_CASE("observation") {
  ToyConfig cfg;
  const auto obs = make_observation(cfg);
  CHECK(obs.z.maxCoeff() <= 0.95);
  CHECK(obs.z.maxCoeff() > 0.95 * std::exp(-0.5 * (0.37 / 1.2) * (0.37 / 1.2)) - 1e-12);
  CHECK(obs.z.maxCoeff() == doctest::Approx(obs.z(13 * cfg.cols)));
  CHECK(obs.obs_cov.has_value());
  cfg.obs_noise_var = 0;
  CHECK_FALSE(make_observation(cfg).obs_cov.has_value());
}

TEST_CASE("observation lies outside the span of any five members") {
  const ToyConfig cfg;
  const auto e = make_toy_ensemble(cfg, 30, 3);
  oracle::Gen g(2);
  for (int t = 0; t < 200; ++t) {
    MatrixXd a(e.outputs.length(), 5);
    for (int k = 0; k < 5; ++k) a.col(k) = e.outputs.fields().col(g.integer(0, 29));
    const VectorXd coef = a.completeOrthogonalDecomposition().solve(e.observation.z);
    CHECK((a * coef - e.observation.z).norm() > 1e-3);
  }
}

TEST_CASE("auto_label rule") {
  const ToyConfig cfg;
  MatrixXd pts(3, 3);
  // w = 1.2 needs x2 = -0.6; A = 0.95 needs x3 = 0.875.
  pts << -0.9, -0.6, 0.875, 0.9, -0.6, 0.875, 0.0, -0.6, -0.75;
  const auto c = auto_label(cfg, pts);
  CHECK(c.labels == std::vector<int>{1, 1, 2});
  CHECK(c.annotator == "auto_label");

  const auto e = make_toy_ensemble(cfg, 30, 5);
  const auto labels = auto_label(cfg, e.design.points());
  CHECK(labels.tally()[1] > 0);
  CHECK(labels.tally()[2] > 0);
}

TEST_CASE("labels ignore the band position (property)") {
  const ToyConfig cfg;
  oracle::Gen g(3);
  for (int t = 0; t < 100; ++t) {
    MatrixXd pts = g.box(10, 3);
    const auto before = auto_label(cfg, pts);
    for (int i = 0; i < 10; ++i) pts(i, 0) = g.uniform(-1, 1);
    CHECK(auto_label(cfg, pts).labels == before.labels);
  }
}

TEST_CASE("squared distance ranks some faint runs above shifted acceptable bands") {
  const ToyConfig cfg;
  const auto e = make_toy_ensemble(cfg, 30, 7);
  const auto labels = auto_label(cfg, e.design.points());
  const auto d2 = ensemble_imp0(make_kernel(1, 1, 1, e.outputs.length()), e.outputs.fields(), e.observation.z);
  bool found = false;
  for (auto a : labels.acceptable())
    for (auto u : labels.unacceptable())
      if (d2[static_cast<size_t>(u)] < d2[static_cast<size_t>(a)]) found = true;
  CHECK(found);
}

TEST_CASE("line fixture") {
  const VectorXd f = line_field(10, 10, 5);
  CHECK(f.sum() == 10.0);
  CHECK(f.segment(50, 10).isOnes());
  CHECK_THROWS_AS(line_field(10, 10, 10), ValidationError);
}
