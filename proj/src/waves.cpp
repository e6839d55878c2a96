#include "khm/waves.hpp"

#include "khm/error.hpp"
#include "khm/sampling.hpp"
#include "khm/text_io.hpp"

#include <cmath>

namespace khm {

std::string to_string(NroyMode mode) { return mode == NroyMode::IF1 ? "IF1" : "IF2"; }

NroyMode parse_nroy_mode(const std::string& text) {
  if (text == "IF1" || text == "if1") return NroyMode::IF1;
  if (text == "IF2" || text == "if2") return NroyMode::IF2;
  throw ValidationError("unknown NROY mode '" + text + "' (expected IF1 or IF2)");
}

WavePredicate::WavePredicate(NroyMode mode, std::shared_ptr<const ImplausibilityContext> context,
                             std::shared_ptr<const WavePredicate> prior)
    : mode_(mode), context_(std::move(context)), prior_(std::move(prior)) {
  if (mode_ == NroyMode::IF1 && !context_->bound_a) {
    throw ValidationError("IF1 predicate needs the bound a");
  }
  if (mode_ == NroyMode::IF2 && !context_->t2) {
    throw ValidationError("IF2 predicate needs the threshold T2");
  }
}

bool WavePredicate::passes_own(const Eigen::VectorXd& x) const {
  const auto pred = context_->emulators.predict(x);
  if (mode_ == NroyMode::IF1) {
    const double t = threshold_from_variance(pred.variance.sum(), *context_->bound_a, context_->t);
    return imp_f1_from(context_->obs, pred.mean) <= t;
  }
  return imp_f2_from(context_->obs, pred) <= *context_->t2;
}

bool WavePredicate::member(const Eigen::VectorXd& x) const {
  if (prior_ && !prior_->member(x)) return false;
  return passes_own(x);
}

bool nroy_member(const WavePredicate& pred, const Eigen::VectorXd& x) { return pred.member(x); }

NroyEstimate nroy_fraction(const Membership& member, int p, int samples, std::uint64_t seed) {
  if (samples < 100) throw ValidationError("NROY estimate needs at least 100 samples");
  const Eigen::MatrixXd pts = uniform_points(samples, p, seed);
  int hits = 0;
  for (int i = 0; i < samples; ++i) hits += member(pts.row(i).transpose()) ? 1 : 0;
  NroyEstimate e;
  e.samples = samples;
  e.fraction = static_cast<double>(hits) / samples;
  e.std_error = std::sqrt(e.fraction * (1.0 - e.fraction) / samples);
  return e;
}

NroyEstimate nroy_fraction(const WavePredicate& pred, int p, int samples, std::uint64_t seed) {
  return nroy_fraction([&](const Eigen::VectorXd& x) { return pred.member(x); }, p, samples, seed);
}

Eigen::MatrixXd next_wave_design(const Membership& member, int p, int n_new, int candidate_budget,
                                 std::uint64_t seed) {
  if (n_new < 1) throw ValidationError("next wave needs n_new >= 1");
  const Eigen::MatrixXd direct = maximin_lhc(n_new, p, derive_seed(seed, 0));
  bool all = true;
  for (Eigen::Index i = 0; i < direct.rows() && all; ++i) all = member(direct.row(i).transpose());
  if (all) return direct;

  if (candidate_budget < n_new) throw ValidationError("candidate budget is smaller than n_new");
  const Eigen::MatrixXd cand = latin_hypercube(candidate_budget, p, derive_seed(seed, 1));
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < cand.rows(); ++i) {
    if (member(cand.row(i).transpose())) keep.push_back(i);
  }
  if (static_cast<int>(keep.size()) < n_new) {
    throw ValidationError("NROY too small: found " + std::to_string(keep.size()) + " of " +
                          std::to_string(n_new) + " requested points in " +
                          std::to_string(candidate_budget) + " candidates");
  }
  Eigen::MatrixXd members(static_cast<Eigen::Index>(keep.size()), p);
  for (size_t i = 0; i < keep.size(); ++i) members.row(static_cast<Eigen::Index>(i)) = cand.row(keep[i]);
  const auto chosen = greedy_maximin(members, n_new);
  Eigen::MatrixXd out(n_new, p);
  for (int i = 0; i < n_new; ++i) out.row(i) = members.row(chosen[static_cast<size_t>(i)]);
  return out;
}

Eigen::MatrixXd next_wave_design(const WavePredicate& pred, int p, int n_new, int candidate_budget,
                                 std::uint64_t seed) {
  return next_wave_design([&](const Eigen::VectorXd& x) { return pred.member(x); }, p, n_new,
                          candidate_budget, seed);
}

double loo_coverage(const Eigen::MatrixXd& design, const Eigen::MatrixXd& coeffs,
                    const GpConfig& config, std::uint64_t seed) {
  int inside = 0, total = 0;
  for (Eigen::Index k = 0; k < coeffs.cols(); ++k) {
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
      const auto p = loo_predict(design, coeffs.col(k), config, i,
                                 derive_seed(seed, static_cast<std::uint64_t>(k * design.rows() + i)));
      inside += std::abs(coeffs(i, k) - p.mean) <= 1.96 * std::sqrt(p.variance) ? 1 : 0;
      ++total;
    }
  }
  return total ? static_cast<double>(inside) / total : 1.0;
}

std::string stopping_advisory(double previous_fraction, double current_fraction) {
  if (!(previous_fraction > 0)) return "";
  const double change = (previous_fraction - current_fraction) / previous_fraction;
  if (std::abs(change) < 0.1) {
    return "NROY fraction changed by " + io::format_double(100.0 * change) +
           "% relative to the previous wave; further waves may not be needed";
  }
  return "";
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(name) + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(name) + ": " + e.what());
  } catch (const Error& e) {
    throw Error(std::string(name) + ": " + e.what());
  }
}

}  // namespace

WaveRecord run_wave(int wave_id, const Ensemble& ensemble, const Classification& labels,
                    std::shared_ptr<const WavePredicate> prior, const WaveConfig& config,
                    std::uint64_t seed, const WaveRecord* previous) {
  WaveRecord rec;
  rec.wave_id = wave_id;
  rec.seed = seed;
  rec.ensemble = ensemble;
  rec.labels = labels;
  rec.labels.wave_id = wave_id;

  rec.fit = stage("kernel selection", [&] {
    const SearchSpace space = config.search_space ? *config.search_space
                                                  : default_search_space(ensemble, config.identity_weight);
    return optimize_kernel(ensemble, labels, space, config.search, derive_seed(seed, 1));
  });

  rec.basis = stage("kpca", [&] {
    auto system = std::make_shared<const CenteredKernelSystem>(
        CenteredKernelSystem::build(rec.fit.spec, ensemble.outputs.fields()));
    return std::make_shared<const KpcaBasis>(fit_kpca(system, config.q_rule));
  });

  const Eigen::MatrixXd coeffs = rec.basis->training_coefficients();
  const auto& points = ensemble.design.points();
  auto emulators = stage("emulation", [&] {
    return emulate_coefficients(points, coeffs, config.gp, derive_seed(seed, 2));
  });

  auto ctx = std::make_shared<ImplausibilityContext>(
      ImplausibilityContext::make(rec.basis, std::move(emulators), ensemble.observation.z));
  ctx->t = config.t;
  rec.bound_a = rec.fit.t_star_star;
  ctx->bound_a = rec.bound_a;
  const auto t2 = stage("threshold T2", [&] {
    return derive_T2(*rec.basis, points, ctx->obs, labels.unacceptable(), config.gp, derive_seed(seed, 3));
  });
  rec.t2 = t2.t2;
  rec.t2_members = t2.member_values;
  ctx->t2 = rec.t2;
  rec.context = ctx;

  rec.predicate = stage("predicate", [&] {
    return std::make_shared<const WavePredicate>(config.mode, rec.context, std::move(prior));
  });
  rec.nroy = nroy_fraction(*rec.predicate, static_cast<int>(points.cols()), config.nroy_samples,
                           config.mc_seed);
  if (config.loo_coverage) {
    rec.loo_coverage = stage("leave-one-out coverage", [&] {
      return loo_coverage(points, coeffs, config.gp, derive_seed(seed, 4));
    });
  }
  if (previous) rec.advisory = stopping_advisory(previous->nroy.fraction, rec.nroy.fraction);
  return rec;
}

}  // namespace khm
