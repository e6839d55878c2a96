#include "khm/kernel_selection.hpp"

#include "khm/error.hpp"
#include "khm/gp_emulator.hpp"
#include "khm/sampling.hpp"
#include "khm/text_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

namespace khm {

std::vector<Eigen::Index> Classification::with_label(int label) const {
  std::vector<Eigen::Index> out;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

std::array<int, 3> Classification::tally() const {
  std::array<int, 3> t{0, 0, 0};
  for (int l : labels) ++t[static_cast<size_t>(l)];
  return t;
}

void Classification::require_both_classes() const {
  const auto t = tally();
  if (t[1] == 0) throw ValidationError("classification has no acceptable runs (label 1)");
  if (t[2] == 0) throw ValidationError("classification has no unacceptable runs (label 2)");
}

std::string classification_table(const Classification& c) {
  std::string out = "run_index,label\n";
  for (size_t i = 0; i < c.labels.size(); ++i) {
    out += std::to_string(i) + "," + std::to_string(c.labels[i]) + "\n";
  }
  return out;
}

Classification parse_classification(const std::string& text, Eigen::Index n,
                                    const std::string& where) {
  Classification c;
  c.labels.assign(static_cast<size_t>(n), 0);
  std::vector<bool> seen(static_cast<size_t>(n), false);
  size_t start = 0;
  int lineno = 0;
  bool header_done = false;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    auto cells = io::split_cells(line);
    if (cells.empty() || (cells.size() == 1 && cells[0].empty()) || line[0] == '#') continue;
    if (!header_done) {
      header_done = true;
      if (cells.size() == 2 && cells[0] == "run_index" && cells[1] == "label") continue;
      throw ValidationError(where + ": expected header 'run_index,label'");
    }
    if (cells.size() != 2) throw ValidationError(where + " line " + std::to_string(lineno) + ": expected 2 columns");
    const std::string ctx = where + " line " + std::to_string(lineno);
    const double idx = io::parse_double(cells[0], ctx);
    const double lab = io::parse_double(cells[1], ctx);
    if (idx != std::floor(idx) || idx < 0 || idx >= static_cast<double>(n)) {
      throw ValidationError(ctx + ": run_index " + cells[0] + " is not in 0.." + std::to_string(n - 1));
    }
    if (lab != 0 && lab != 1 && lab != 2) {
      throw ValidationError(ctx + ": label must be 0, 1 or 2");
    }
    const auto i = static_cast<size_t>(idx);
    if (seen[i]) throw ValidationError(ctx + ": duplicate run_index " + cells[0]);
    seen[i] = true;
    c.labels[i] = static_cast<int>(lab);
  }
  if (!header_done) throw ValidationError(where + ": empty classification file");
  return c;
}

Classification load_classification(const std::filesystem::path& path, Eigen::Index n) {
  if (!std::filesystem::exists(path)) {
    throw ValidationError("classification file not found: " + path.string());
  }
  return parse_classification(io::read_file(path), n, path.string());
}

void save_classification(const Classification& c, const std::filesystem::path& path) {
  io::write_file_atomic(path, classification_table(c));
}

double cost(const std::vector<double>& i0_acceptable, const std::vector<double>& i0_unacceptable,
            double threshold, double alpha, CostCounts* counts) {
  if (i0_acceptable.empty()) throw ValidationError("cost needs at least one acceptable run");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
  int na = 0, nu = 0;
  for (double v : i0_acceptable) na += v <= threshold;
  for (double v : i0_unacceptable) nu += v <= threshold;
  if (counts) *counts = {na, nu};
  if (na + nu == 0) return 0.0;
  return alpha * na / static_cast<double>(i0_acceptable.size()) +
         (1.0 - alpha) * na / static_cast<double>(na + nu);
}

ThresholdChoice t_star_star(const std::vector<double>& i0_acceptable,
                            const std::vector<double>& i0_unacceptable, double alpha) {
  std::set<double> candidates(i0_acceptable.begin(), i0_acceptable.end());
  candidates.insert(i0_unacceptable.begin(), i0_unacceptable.end());
  ThresholdChoice best{0.0, -1.0};
  for (double t : candidates) {
    const double p = cost(i0_acceptable, i0_unacceptable, t, alpha);
    if (p >= best.score) best = {t, p};  // ascending scan: ties go to the larger T
  }
  return best;
}

std::vector<double> ensemble_imp0(const KernelSpec& spec, const Eigen::MatrixXd& fields,
                                  const Eigen::VectorXd& z) {
  const Eigen::MatrixXd pf = spec.weight->map(fields);
  const Eigen::VectorXd pz = spec.weight->map(z);
  const double kzz = kernel_from_mapped(spec, pz, pz);
  std::vector<double> out(static_cast<size_t>(fields.cols()));
  for (Eigen::Index i = 0; i < fields.cols(); ++i) {
    const Eigen::VectorXd f = pf.col(i);
    const double v = kzz + kernel_from_mapped(spec, f, f) - 2.0 * kernel_from_mapped(spec, f, pz);
    out[static_cast<size_t>(i)] = std::max(0.0, v);
  }
  return out;
}

namespace {

KernelFit score_from_i0(KernelSpec spec, std::vector<double> i0, const Classification& labels,
                        double alpha) {
  std::vector<double> a, u;
  for (size_t i = 0; i < i0.size(); ++i) {
    if (labels.labels[i] == 1) a.push_back(i0[i]);
    if (labels.labels[i] == 2) u.push_back(i0[i]);
  }
  KernelFit fit;
  const auto choice = t_star_star(a, u, alpha);
  CostCounts counts;
  cost(a, u, choice.t_star_star, alpha, &counts);
  fit.spec = std::move(spec);
  fit.t_star_star = choice.t_star_star;
  fit.score = choice.score;
  fit.retained_acceptable = counts.retained_acceptable;
  fit.retained_unacceptable = counts.retained_unacceptable;
  fit.n_acceptable = static_cast<int>(a.size());
  fit.n_unacceptable = static_cast<int>(u.size());
  fit.i0 = std::move(i0);
  return fit;
}

// True when a is strictly preferred to b.
bool better(const KernelFit& a, const KernelFit& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.t_star_star != b.t_star_star) return a.t_star_star > b.t_star_star;
  return a.spec.omega() < b.spec.omega();
}

void check_range(const Range& r, const char* name, bool log_scale) {
  if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi)) {
    throw ValidationError(std::string("search range for ") + name + " needs lo <= hi");
  }
  if (log_scale && r.lo <= 0) throw ValidationError(std::string("search range for ") + name + " must be > 0");
}

struct Dim {
  Range range;
  bool log_scale;
  double decode(double u) const {
    if (range.pinned()) return range.lo;
    if (log_scale) return std::exp(std::log(range.lo) + u * (std::log(range.hi) - std::log(range.lo)));
    return range.lo + u * (range.hi - range.lo);
  }
};

}  // namespace

KernelFit score_kernel(const KernelSpec& spec, const Ensemble& ensemble, const Classification& labels,
                       double alpha) {
  if (static_cast<Eigen::Index>(labels.labels.size()) != ensemble.outputs.size()) {
    throw ValidationError("classification length does not match ensemble size");
  }
  labels.require_both_classes();
  return score_from_i0(spec, ensemble_imp0(spec, ensemble.outputs.fields(), ensemble.observation.z),
                       labels, alpha);
}

SearchSpace default_search_space(const Ensemble& ensemble, bool identity_weight) {
  SearchSpace s;
  s.identity_weight = identity_weight;
  const auto& f = ensemble.outputs.fields();
  const auto& z = ensemble.observation.z;
  const GridShape grid = ensemble.outputs.grid().value_or(GridShape{static_cast<int>(f.rows()), 1, 1});
  const double cell_var = std::max(
      1e-300, ensemble.outputs.centered().array().square().sum() / static_cast<double>(f.size()));

  if (!identity_weight) {
    const int extents[3] = {grid.rows, grid.cols, grid.frames};
    int axes = 1;
    if (grid.cols > 1) axes = 2;
    if (grid.frames > 1) axes = 3;
    for (int d = 0; d < axes; ++d) {
      s.lengths.push_back({0.5, std::max(1.0, static_cast<double>(extents[d]))});
    }
    s.sigma_eta_sq = {1e-4 * cell_var, 10.0 * cell_var};
  }

  // Scale of squared distances to z under a mid-box weight.
  KernelParams mid;
  mid.identity_weight = identity_weight;
  for (const auto& r : s.lengths) mid.weight.lengths.push_back(std::sqrt(r.lo * r.hi));
  mid.weight.sigma_eta_sq = std::sqrt(s.sigma_eta_sq.lo * s.sigma_eta_sq.hi);
  mid.weight.jitter = s.jitter;
  const auto spec = make_kernel(mid, ensemble.observation.obs_cov, grid, Factorization::Cholesky);
  std::vector<double> d2 = ensemble_imp0(spec, f, z);  // omega = 1: squared W-distance
  std::nth_element(d2.begin(), d2.begin() + static_cast<long>(d2.size() / 2), d2.end());
  const double scale = std::max(1e-300, d2[d2.size() / 2]);
  s.sigma = {1e-3 * scale, 1e3 * scale};
  s.delta = {1e-3 * scale, 1e3 * scale};
  return s;
}

KernelFit optimize_kernel(const Ensemble& ensemble, const Classification& labels,
                          const SearchSpace& space, const SearchConfig& config, std::uint64_t seed) {
  const auto& fields = ensemble.outputs.fields();
  if (static_cast<Eigen::Index>(labels.labels.size()) != fields.cols()) {
    throw ValidationError("classification length does not match ensemble size");
  }
  labels.require_both_classes();
  if (config.max_evaluations < 1) throw ValidationError("kernel search budget must be >= 1");
  if (config.population < 4) throw ValidationError("kernel search population must be >= 4");
  check_range(space.omega, "omega", false);
  if (space.omega.lo < 0 || space.omega.hi > 1) throw ValidationError("omega range must lie in [0, 1]");
  check_range(space.sigma, "sigma", true);
  check_range(space.delta, "delta", true);
  std::vector<Dim> dims{{space.omega, false}, {space.sigma, true}, {space.delta, true}};
  if (!space.identity_weight) {
    if (space.lengths.empty()) throw ValidationError("structured weight search needs length ranges");
    for (const auto& r : space.lengths) {
      check_range(r, "correlation length", true);
      dims.push_back({r, true});
    }
    check_range(space.sigma_eta_sq, "sigma_eta_sq", true);
    dims.push_back({space.sigma_eta_sq, true});
  }
  const GridShape grid = ensemble.outputs.grid().value_or(GridShape{static_cast<int>(fields.rows()), 1, 1});
  const auto& z = ensemble.observation.z;
  const auto& obs_cov = ensemble.observation.obs_cov;

  // Only the classified runs enter the cost.
  std::vector<Eigen::Index> classified;
  for (size_t i = 0; i < labels.labels.size(); ++i) {
    if (labels.labels[i] != 0) classified.push_back(static_cast<Eigen::Index>(i));
  }
  Eigen::MatrixXd cfields(fields.rows(), static_cast<Eigen::Index>(classified.size()));
  Classification clabels;
  for (size_t j = 0; j < classified.size(); ++j) {
    cfields.col(static_cast<Eigen::Index>(j)) = fields.col(classified[j]);
    clabels.labels.push_back(labels.labels[static_cast<size_t>(classified[j])]);
  }

  // Mapped fields are cached per weight parameter set.
  std::map<std::vector<double>, std::pair<std::shared_ptr<const WeightMatrix>, Eigen::MatrixXd>> cache;
  const std::shared_ptr<const WeightMatrix> identity =
      std::make_shared<const WeightMatrix>(WeightMatrix::identity(fields.rows()));

  auto params_of = [&](const std::vector<double>& u) {
    KernelParams p;
    p.omega = dims[0].decode(u[0]);
    p.sigma = dims[1].decode(u[1]);
    p.delta = dims[2].decode(u[2]);
    p.identity_weight = space.identity_weight;
    if (!space.identity_weight) {
      for (size_t d = 0; d < space.lengths.size(); ++d) p.weight.lengths.push_back(dims[3 + d].decode(u[3 + d]));
      p.weight.sigma_eta_sq = dims.back().decode(u.back());
      p.weight.jitter = space.jitter;
    }
    return p;
  };

  int evaluations = 0;
  auto evaluate = [&](const std::vector<double>& u) {
    ++evaluations;
    const KernelParams p = params_of(u);
    std::vector<double> key(p.weight.lengths);
    key.push_back(p.weight.sigma_eta_sq);
    auto it = cache.find(key);
    if (it == cache.end()) {
      if (cache.size() > 64) cache.clear();
      std::shared_ptr<const WeightMatrix> w = identity;
      if (!space.identity_weight) {
        w = std::make_shared<const WeightMatrix>(
            build_weight_matrix(obs_cov, p.weight, grid, Factorization::Cholesky));
      }
      Eigen::MatrixXd mapped(fields.rows(), cfields.cols() + 1);
      mapped.leftCols(cfields.cols()) = w->map(cfields);
      mapped.col(cfields.cols()) = w->map(z);
      it = cache.emplace(key, std::make_pair(w, std::move(mapped))).first;
    }
    KernelSpec spec;
    spec.params = p;
    spec.weight = it->second.first;
    const auto& mapped = it->second.second;
    const Eigen::VectorXd pz = mapped.col(cfields.cols());
    const double kzz = kernel_from_mapped(spec, pz, pz);
    std::vector<double> i0(static_cast<size_t>(cfields.cols()));
    for (Eigen::Index i = 0; i < cfields.cols(); ++i) {
      const Eigen::VectorXd f = mapped.col(i);
      i0[static_cast<size_t>(i)] =
          std::max(0.0, kzz + kernel_from_mapped(spec, f, f) - 2.0 * kernel_from_mapped(spec, f, pz));
    }
    return score_from_i0(std::move(spec), std::move(i0), clabels, config.alpha);
  };

  const size_t nd = dims.size();
  std::mt19937_64 rng(derive_seed(seed, 0x6b65726eULL));
  auto uniform = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  const int np = config.population;
  const Eigen::MatrixXd init = latin_hypercube(np, static_cast<int>(nd), derive_seed(seed, 1));
  std::vector<std::vector<double>> pop(static_cast<size_t>(np), std::vector<double>(nd));
  std::vector<KernelFit> scores;
  for (int i = 0; i < np && evaluations < config.max_evaluations; ++i) {
    for (size_t d = 0; d < nd; ++d) pop[static_cast<size_t>(i)][d] = 0.5 * (init(i, static_cast<Eigen::Index>(d)) + 1.0);
    scores.push_back(evaluate(pop[static_cast<size_t>(i)]));
  }
  pop.resize(scores.size());

  while (evaluations < config.max_evaluations && scores.size() >= 4) {
    for (size_t i = 0; i < pop.size() && evaluations < config.max_evaluations; ++i) {
      size_t r[3];
      for (int k = 0; k < 3; ++k) {
        do {
          r[k] = static_cast<size_t>(rng() % pop.size());
        } while (r[k] == i || (k > 0 && r[k] == r[0]) || (k > 1 && r[k] == r[1]));
      }
      const size_t forced = static_cast<size_t>(rng() % nd);
      std::vector<double> trial = pop[i];
      for (size_t d = 0; d < nd; ++d) {
        if (d == forced || uniform() < config.crossover) {
          double v = pop[r[0]][d] + config.differential_weight * (pop[r[1]][d] - pop[r[2]][d]);
          if (v < 0.0) v = uniform() * pop[r[0]][d];
          if (v > 1.0) v = pop[r[0]][d] + uniform() * (1.0 - pop[r[0]][d]);
          trial[d] = v;
        }
      }
      auto s = evaluate(trial);
      if (!better(scores[i], s)) {
        pop[i] = std::move(trial);
        scores[i] = std::move(s);
      }
    }
  }

  size_t best = 0;
  for (size_t i = 1; i < scores.size(); ++i) {
    if (better(scores[i], scores[best])) best = i;
  }
  if (!(scores[best].score > 0.0)) throw NumericalError("every kernel candidate scored P = 0");

  // Rebuild with the eigendecomposition factor and rescore on every run.
  const auto final_spec = make_kernel(scores[best].spec.params, obs_cov, grid, Factorization::Eigen);
  KernelFit fit = score_kernel(final_spec, ensemble, labels, config.alpha);
  fit.evaluations = evaluations;
  return fit;
}

std::string kernel_fit_json(const KernelFit& fit, const Classification& labels) {
  nlohmann::json j;
  j["t_star_star"] = fit.t_star_star;
  j["score"] = fit.score;
  j["retained_acceptable"] = fit.retained_acceptable;
  j["retained_unacceptable"] = fit.retained_unacceptable;
  j["n_acceptable"] = fit.n_acceptable;
  j["n_unacceptable"] = fit.n_unacceptable;
  j["evaluations"] = fit.evaluations;
  j["weight_jitter"] = fit.spec.weight ? fit.spec.weight->jitter_applied() : 0.0;
  nlohmann::json runs = nlohmann::json::array();
  for (size_t i = 0; i < fit.i0.size(); ++i) {
    runs.push_back({{"run_index", i}, {"label", labels.labels.at(i)}, {"i0", fit.i0[i]},
                    {"retained", fit.i0[i] <= fit.t_star_star}});
  }
  j["runs"] = runs;
  return j.dump(1) + "\n";
}

}  // namespace khm
