#include "khm/gp_emulator.hpp"

#include "khm/error.hpp"
#include "khm/text_io.hpp"

#include "json.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <gsl/gsl_vector.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace khm {

namespace {

constexpr double kJitterLadder[] = {0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6};

struct Factor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
  bool ok = false;
};

Factor factorize(const Eigen::MatrixXd& r) {
  Factor f;
  for (double jit : kJitterLadder) {
    Eigen::MatrixXd m = r;
    if (jit > 0) m.diagonal().array() += jit;
    f.llt.compute(m);
    if (f.llt.info() != Eigen::Success) continue;
    const Eigen::VectorXd d = f.llt.matrixLLT().diagonal();
    if (d.array().square().minCoeff() <= 1e-13) continue;
    f.jitter = jit;
    f.ok = true;
    return f;
  }
  return f;
}

// Everything the likelihood and the predictor share at fixed hyperparameters.
struct Conditioned {
  Factor factor;
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;  // R^-1 r
  double quad = 0.0;      // r' R^-1 r
  double logdet = 0.0;
  double sigma_sq = 0.0;
  bool ok = false;
};

Conditioned condition_on_matrix(Eigen::MatrixXd r, const Eigen::MatrixXd& h,
                                const Eigen::VectorXd& y) {
  Conditioned c;
  const auto n = r.rows();
  c.factor = factorize(r);
  if (!c.factor.ok) return c;
  const Eigen::MatrixXd rinv_h = c.factor.llt.solve(h);
  const Eigen::MatrixXd hrh = h.transpose() * rinv_h;
  Eigen::LDLT<Eigen::MatrixXd> gls(hrh);
  if (gls.info() != Eigen::Success || !gls.isPositive() ||
      gls.vectorD().minCoeff() <= 1e-12 * std::max(1.0, gls.vectorD().maxCoeff())) {
    throw ValidationError("singular regressor matrix in GP mean basis");
  }
  c.beta = gls.solve(rinv_h.transpose() * y);
  const Eigen::VectorXd resid = y - h * c.beta;
  c.alpha = c.factor.llt.solve(resid);
  c.quad = std::max(0.0, resid.dot(c.alpha));
  c.logdet = 2.0 * c.factor.llt.matrixLLT().diagonal().array().log().sum();
  const double floor = std::max(1e-300, 1e-14 * y.squaredNorm() / static_cast<double>(n));
  c.sigma_sq = std::max(c.quad / static_cast<double>(n), floor);
  c.ok = std::isfinite(c.logdet) && std::isfinite(c.quad);
  return c;
}

Conditioned condition_on(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, MeanBasis basis,
                         const GpHyper& hyper) {
  Eigen::MatrixXd r = correlation(x, x, hyper.lengths);
  r.diagonal().array() += hyper.nugget;
  return condition_on_matrix(std::move(r), regressors(x, basis), y);
}

double full_log_lik(const Conditioned& c, Eigen::Index n, double sigma_sq) {
  const double nn = static_cast<double>(n);
  return -0.5 * nn * std::log(2.0 * std::numbers::pi * sigma_sq) - 0.5 * c.logdet -
         0.5 * c.quad / sigma_sq;
}

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

// Bounded log-scale parametrization of the optimized hyperparameters.
struct Problem {
  const Eigen::MatrixXd* x = nullptr;
  const Eigen::VectorXd* y = nullptr;
  const GpConfig* config = nullptr;
  std::size_t p = 0;
  double log_lo = 0, log_hi = 0;          // lengths
  double log_tau_lo = 0, log_tau_hi = 0;  // nugget when fitted

  std::size_t dims() const { return p + (config->fit_nugget ? 1 : 0); }

  GpHyper decode(const gsl_vector* u) const {
    GpHyper h;
    for (std::size_t d = 0; d < p; ++d) {
      h.lengths.push_back(std::exp(log_lo + (log_hi - log_lo) * sigmoid(gsl_vector_get(u, d))));
    }
    h.nugget = config->fit_nugget
                   ? std::exp(log_tau_lo + (log_tau_hi - log_tau_lo) * sigmoid(gsl_vector_get(u, p)))
                   : config->nugget;
    return h;
  }

  // Best point seen across every evaluation.
  double best_ll = -std::numeric_limits<double>::infinity();
  GpHyper best;

  // Squared input differences per dimension, and the regressors.
  std::vector<Eigen::ArrayXXd> diff2;
  Eigen::MatrixXd h;

  void prepare() {
    const auto n = x->rows();
    h = regressors(*x, config->mean_basis);
    for (std::size_t d = 0; d < p; ++d) {
      Eigen::ArrayXXd m(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
          const double v = (*x)(i, static_cast<Eigen::Index>(d)) - (*x)(j, static_cast<Eigen::Index>(d));
          m(i, j) = v * v;
        }
      }
      diff2.push_back(std::move(m));
    }
  }

  // Returns -log L and its gradient with respect to u.
  double evaluate(const gsl_vector* u, gsl_vector* grad) {
    const GpHyper hp = decode(u);
    const auto n = x->rows();
    Eigen::ArrayXXd expo = Eigen::ArrayXXd::Zero(n, n);
    for (std::size_t d = 0; d < p; ++d) expo += diff2[d] / (hp.lengths[d] * hp.lengths[d]);
    const Eigen::MatrixXd corr = (-expo).exp().matrix();
    Eigen::MatrixXd r = corr;
    r.diagonal().array() += hp.nugget;
    const Conditioned c = condition_on_matrix(std::move(r), h, *y);
    if (!c.ok) {
      if (grad) gsl_vector_set_zero(grad);
      return 1e300;
    }
    const double ll = full_log_lik(c, n, c.sigma_sq);
    if (ll > best_ll) {
      best_ll = ll;
      best = hp;
    }
    if (grad) {
      const Eigen::MatrixXd rinv = c.factor.llt.solve(Eigen::MatrixXd::Identity(n, n));
      const Eigen::ArrayXXd outer = (c.alpha * c.alpha.transpose()).array();
      // dR / dlog l_d = 2 C .* diff2_d / l_d^2; combine the trace and quadratic terms.
      const Eigen::ArrayXXd weight = corr.array() * (outer / c.sigma_sq - rinv.array());
      for (std::size_t d = 0; d < p; ++d) {
        const double dll = (weight * diff2[d]).sum() / (hp.lengths[d] * hp.lengths[d]);
        const double sg = sigmoid(gsl_vector_get(u, d));
        gsl_vector_set(grad, d, -dll * (log_hi - log_lo) * sg * (1.0 - sg));
      }
      if (config->fit_nugget) {
        const double dll = -0.5 * hp.nugget * rinv.trace() + 0.5 * hp.nugget * c.alpha.squaredNorm() / c.sigma_sq;
        const double sg = sigmoid(gsl_vector_get(u, p));
        gsl_vector_set(grad, p, -dll * (log_tau_hi - log_tau_lo) * sg * (1.0 - sg));
      }
    }
    return -ll;
  }
};

double f_cb(const gsl_vector* u, void* params) {
  return static_cast<Problem*>(params)->evaluate(u, nullptr);
}
void df_cb(const gsl_vector* u, void* params, gsl_vector* g) {
  static_cast<Problem*>(params)->evaluate(u, g);
}
void fdf_cb(const gsl_vector* u, void* params, double* f, gsl_vector* g) {
  *f = static_cast<Problem*>(params)->evaluate(u, g);
}

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void validate_training(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GpConfig& config) {
  if (x.rows() != y.size()) throw ValidationError("GP design rows and targets differ in length");
  const Eigen::Index k = config.mean_basis == MeanBasis::Constant ? 1 : 1 + x.cols();
  if (x.rows() <= k) {
    throw ValidationError("GP needs more training points (" + std::to_string(x.rows()) +
                          ") than regressors (" + std::to_string(k) + ")");
  }
  if (!y.allFinite() || !x.allFinite()) throw ValidationError("GP training data must be finite");
  if (config.nugget < 0) throw ValidationError("nugget must be >= 0");
  if (!(config.min_length > 0 && config.min_length < config.max_length)) {
    throw ValidationError("GP length bounds need 0 < min < max");
  }
}

}  // namespace

Eigen::MatrixXd regressors(const Eigen::MatrixXd& design, MeanBasis basis) {
  const auto n = design.rows();
  if (basis == MeanBasis::Constant) return Eigen::MatrixXd::Ones(n, 1);
  Eigen::MatrixXd h(n, design.cols() + 1);
  h.col(0).setOnes();
  h.rightCols(design.cols()) = design;
  return h;
}

Eigen::MatrixXd correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                            const std::vector<double>& lengths) {
  if (static_cast<Eigen::Index>(lengths.size()) != a.cols() || a.cols() != b.cols()) {
    throw ValidationError("correlation lengths do not match input dimension");
  }
  Eigen::MatrixXd c(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (Eigen::Index d = 0; d < a.cols(); ++d) {
        const double r = (a(i, d) - b(j, d)) / lengths[static_cast<std::size_t>(d)];
        s += r * r;
      }
      c(i, j) = std::exp(-s);
    }
  }
  return c;
}

double log_likelihood(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                      MeanBasis basis, const GpHyper& hyper, double sigma_sq) {
  auto c = condition_on(design, targets, basis, hyper);
  if (!c.ok) return -std::numeric_limits<double>::infinity();
  return full_log_lik(c, design.rows(), sigma_sq);
}

double profile_log_likelihood(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                              MeanBasis basis, const GpHyper& hyper) {
  auto c = condition_on(design, targets, basis, hyper);
  if (!c.ok) return -std::numeric_limits<double>::infinity();
  return full_log_lik(c, design.rows(), c.sigma_sq);
}

TrainedGp TrainedGp::condition(Eigen::MatrixXd design, Eigen::VectorXd targets,
                               const GpConfig& config, GpHyper hyper) {
  validate_training(design, targets, config);
  auto c = condition_on(design, targets, config.mean_basis, hyper);
  if (!c.ok) throw NumericalError("GP covariance is not positive definite even with jitter");
  TrainedGp gp;
  gp.config_ = config;
  gp.hyper_ = std::move(hyper);
  gp.jitter_ = c.factor.jitter;
  gp.sigma_sq_ = c.sigma_sq;
  gp.log_lik_ = full_log_lik(c, design.rows(), c.sigma_sq);
  gp.beta_ = std::move(c.beta);
  gp.weights_ = std::move(c.alpha);
  gp.llt_ = std::move(c.factor.llt);
  gp.x_ = std::move(design);
  gp.y_ = std::move(targets);
  return gp;
}

Eigen::MatrixXd TrainedGp::covariance() const {
  const Eigen::MatrixXd l = llt_.matrixL();
  return sigma_sq_ * (l * l.transpose());
}

TrainedGp::Prediction TrainedGp::predict(const Eigen::VectorXd& x) const {
  if (x.size() != x_.cols()) throw ValidationError("prediction input has wrong dimension");
  const Eigen::MatrixXd xr = x.transpose();
  const Eigen::VectorXd t = correlation(xr, x_, hyper_.lengths).transpose();
  const Eigen::RowVectorXd h = regressors(xr, config_.mean_basis).row(0);
  Prediction p;
  p.mean = h.dot(beta_) + t.dot(weights_);
  const double explained = t.dot(llt_.solve(t));
  p.variance = std::max(0.0, sigma_sq_ * (1.0 + hyper_.nugget - explained));
  return p;
}

TrainedGp fit_gp(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                 const GpConfig& config, std::uint64_t seed, FitTrace* trace) {
  validate_training(design, targets, config);
  if (config.starts < 1) throw ValidationError("GP fit needs at least one start");
  Problem prob;
  prob.x = &design;
  prob.y = &targets;
  prob.config = &config;
  prob.p = static_cast<std::size_t>(design.cols());
  prob.log_lo = std::log(config.min_length);
  prob.log_hi = std::log(config.max_length);
  prob.log_tau_lo = std::log(std::max(config.nugget, 1e-10));
  prob.log_tau_hi = 0.0;
  prob.prepare();
  if (config.fit_nugget && prob.log_tau_lo >= prob.log_tau_hi) {
    throw ValidationError("fitted nugget lower bound must be < 1");
  }
  const std::size_t dims = prob.dims();

  gsl_set_error_handler_off();
  gsl_multimin_function_fdf fn;
  fn.n = dims;
  fn.f = f_cb;
  fn.df = df_cb;
  fn.fdf = fdf_cb;
  fn.params = &prob;

  gsl_vector* u = gsl_vector_alloc(dims);
  gsl_multimin_fdfminimizer* s = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, dims);
  try {
    for (int start = 0; start < config.starts; ++start) {
      std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(start)));
      for (std::size_t d = 0; d < dims; ++d) gsl_vector_set(u, d, -2.0 + 4.0 * unit_uniform(rng));
      const double f0 = prob.evaluate(u, nullptr);
      if (trace) trace->start_log_likelihoods.push_back(f0 >= 1e300 ? -INFINITY : -f0);
      if (f0 >= 1e300) continue;
      gsl_multimin_fdfminimizer_set(s, &fn, u, 0.1, 0.1);
      double f_lag = s->f;
      for (int it = 0; it < config.max_iterations; ++it) {
        if (gsl_multimin_fdfminimizer_iterate(s) != GSL_SUCCESS) break;
        if (gsl_multimin_test_gradient(s->gradient, 1e-3) == GSL_SUCCESS) break;
        // Stalled: less than 1e-7 improvement over the last five iterations.
        if (it % 5 == 4) {
          if (f_lag - s->f < 1e-7 * (1.0 + std::abs(s->f))) break;
          f_lag = s->f;
        }
      }
    }
  } catch (...) {
    gsl_multimin_fdfminimizer_free(s);
    gsl_vector_free(u);
    throw;
  }
  gsl_multimin_fdfminimizer_free(s);
  gsl_vector_free(u);

  if (!std::isfinite(prob.best_ll)) {
    throw NumericalError("GP likelihood is not finite at any start");
  }
  return TrainedGp::condition(design, targets, config, prob.best);
}

Eigen::MatrixXd drop_row(const Eigen::MatrixXd& m, Eigen::Index row) {
  Eigen::MatrixXd out(m.rows() - 1, m.cols());
  out.topRows(row) = m.topRows(row);
  out.bottomRows(m.rows() - row - 1) = m.bottomRows(m.rows() - row - 1);
  return out;
}

Eigen::VectorXd drop_entry(const Eigen::VectorXd& v, Eigen::Index index) {
  Eigen::VectorXd out(v.size() - 1);
  out.head(index) = v.head(index);
  out.tail(v.size() - index - 1) = v.tail(v.size() - index - 1);
  return out;
}

TrainedGp::Prediction loo_predict(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets,
                                  const GpConfig& config, Eigen::Index held_out,
                                  std::uint64_t seed) {
  if (design.rows() < 3) throw ValidationError("leave-one-out needs n >= 3");
  if (held_out < 0 || held_out >= design.rows()) throw ValidationError("held-out index out of range");
  auto gp = fit_gp(drop_row(design, held_out), drop_entry(targets, held_out), config, seed);
  return gp.predict(design.row(held_out).transpose());
}

CoefficientPrediction CoefficientEmulators::predict(const Eigen::VectorXd& x) const {
  CoefficientPrediction out;
  out.mean.resize(q());
  out.variance.resize(q());
  for (int k = 0; k < q(); ++k) {
    const auto p = gps_[static_cast<std::size_t>(k)].predict(x);
    out.mean(k) = p.mean;
    out.variance(k) = p.variance;
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

CoefficientEmulators emulate_coefficients(const Eigen::MatrixXd& design,
                                          const Eigen::MatrixXd& coeffs, const GpConfig& config,
                                          std::uint64_t seed) {
  if (coeffs.rows() != design.rows()) {
    throw ValidationError("coefficient table rows do not match design rows");
  }
  std::vector<TrainedGp> gps;
  for (Eigen::Index k = 0; k < coeffs.cols(); ++k) {
    try {
      gps.push_back(fit_gp(design, coeffs.col(k), config, derive_seed(seed, static_cast<std::uint64_t>(k))));
    } catch (const ValidationError& e) {
      throw ValidationError("coefficient " + std::to_string(k + 1) + ": " + e.what());
    } catch (const NumericalError& e) {
      throw NumericalError("coefficient " + std::to_string(k + 1) + ": " + e.what());
    }
  }
  return CoefficientEmulators(std::move(gps));
}

namespace {

using nlohmann::json;

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd json_matrix(const json& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = n ? static_cast<Eigen::Index>(rows.at(0).size()) : 0;
  Eigen::MatrixXd m(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != p) throw ValidationError("ragged matrix in emulator document");
    for (Eigen::Index j = 0; j < p; ++j) m(i, j) = row.at(static_cast<std::size_t>(j)).get<double>();
  }
  return m;
}

}  // namespace

std::string emulators_to_json(const CoefficientEmulators& emulators) {
  json doc;
  doc["q"] = emulators.q();
  json list = json::array();
  for (const auto& gp : emulators.gps()) {
    json g;
    const auto& c = gp.config();
    g["config"] = {{"mean_basis", c.mean_basis == MeanBasis::Constant ? "constant" : "linear"},
                   {"nugget", c.nugget},
                   {"fit_nugget", c.fit_nugget},
                   {"starts", c.starts},
                   {"min_length", c.min_length},
                   {"max_length", c.max_length},
                   {"max_iterations", c.max_iterations}};
    g["lengths"] = gp.lengths();
    g["nugget"] = gp.nugget();
    g["sigma_sq"] = gp.sigma_sq();
    g["jitter"] = gp.jitter();
    g["log_likelihood"] = gp.log_likelihood();
    g["beta"] = std::vector<double>(gp.beta().data(), gp.beta().data() + gp.beta().size());
    g["design"] = matrix_json(gp.design());
    g["targets"] = std::vector<double>(gp.targets().data(), gp.targets().data() + gp.targets().size());
    list.push_back(g);
  }
  doc["emulators"] = list;
  return doc.dump(1) + "\n";
}

CoefficientEmulators emulators_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("emulator document is not valid JSON: ") + e.what());
  }
  std::vector<TrainedGp> gps;
  try {
    for (const auto& g : doc.at("emulators")) {
      GpConfig c;
      const auto& jc = g.at("config");
      const auto basis = jc.at("mean_basis").get<std::string>();
      if (basis != "constant" && basis != "linear") throw ValidationError("unknown mean_basis " + basis);
      c.mean_basis = basis == "constant" ? MeanBasis::Constant : MeanBasis::Linear;
      c.nugget = jc.at("nugget").get<double>();
      c.fit_nugget = jc.at("fit_nugget").get<bool>();
      c.starts = jc.at("starts").get<int>();
      c.min_length = jc.at("min_length").get<double>();
      c.max_length = jc.at("max_length").get<double>();
      c.max_iterations = jc.at("max_iterations").get<int>();
      GpHyper h;
      h.lengths = g.at("lengths").get<std::vector<double>>();
      h.nugget = g.at("nugget").get<double>();
      const auto t = g.at("targets").get<std::vector<double>>();
      Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
      gps.push_back(TrainedGp::condition(json_matrix(g.at("design")), std::move(y), c, std::move(h)));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed emulator document: ") + e.what());
  }
  return CoefficientEmulators(std::move(gps));
}

void save_emulators(const CoefficientEmulators& emulators, const std::filesystem::path& path) {
  io::write_file_atomic(path, emulators_to_json(emulators));
}

CoefficientEmulators load_emulators(const std::filesystem::path& path) {
  return emulators_from_json(io::read_file(path));
}

}  // namespace khm
