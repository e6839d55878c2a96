#include "khm/wave_store.hpp"

#include "khm/error.hpp"
#include "khm/text_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace khm {

namespace {

using nlohmann::json;

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }
Range json_range(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json config_json(const WaveConfig& c) {
  json j;
  j["identity_weight"] = c.identity_weight;
  if (c.search_space) {
    const auto& s = *c.search_space;
    json js;
    js["omega"] = range_json(s.omega);
    js["sigma"] = range_json(s.sigma);
    js["delta"] = range_json(s.delta);
    js["identity_weight"] = s.identity_weight;
    json ls = json::array();
    for (const auto& r : s.lengths) ls.push_back(range_json(r));
    js["lengths"] = ls;
    js["sigma_eta_sq"] = range_json(s.sigma_eta_sq);
    js["jitter"] = s.jitter;
    j["search_space"] = js;
  }
  j["search"] = {{"alpha", c.search.alpha},
                 {"population", c.search.population},
                 {"max_evaluations", c.search.max_evaluations},
                 {"differential_weight", c.search.differential_weight},
                 {"crossover", c.search.crossover}};
  j["q_rule"] = {{"kind", c.q_rule.kind == QRule::Kind::Fixed ? "fixed" : "variance"},
                 {"q", c.q_rule.q},
                 {"fraction", c.q_rule.fraction}};
  j["gp"] = {{"mean_basis", c.gp.mean_basis == MeanBasis::Constant ? "constant" : "linear"},
             {"nugget", c.gp.nugget},
             {"fit_nugget", c.gp.fit_nugget},
             {"starts", c.gp.starts},
             {"min_length", c.gp.min_length},
             {"max_length", c.gp.max_length},
             {"max_iterations", c.gp.max_iterations}};
  j["mode"] = to_string(c.mode);
  j["t"] = c.t;
  j["nroy_samples"] = c.nroy_samples;
  j["mc_seed"] = c.mc_seed;
  j["loo_coverage"] = c.loo_coverage;
  return j;
}

WaveConfig json_config(const json& j) {
  WaveConfig c;
  c.identity_weight = j.at("identity_weight").get<bool>();
  if (j.contains("search_space")) {
    const auto& js = j.at("search_space");
    SearchSpace s;
    s.omega = json_range(js.at("omega"));
    s.sigma = json_range(js.at("sigma"));
    s.delta = json_range(js.at("delta"));
    s.identity_weight = js.at("identity_weight").get<bool>();
    for (const auto& r : js.at("lengths")) s.lengths.push_back(json_range(r));
    s.sigma_eta_sq = json_range(js.at("sigma_eta_sq"));
    s.jitter = js.at("jitter").get<double>();
    c.search_space = s;
  }
  const auto& s = j.at("search");
  c.search.alpha = s.at("alpha").get<double>();
  c.search.population = s.at("population").get<int>();
  c.search.max_evaluations = s.at("max_evaluations").get<int>();
  c.search.differential_weight = s.at("differential_weight").get<double>();
  c.search.crossover = s.at("crossover").get<double>();
  const auto& q = j.at("q_rule");
  c.q_rule.kind = q.at("kind").get<std::string>() == "fixed" ? QRule::Kind::Fixed : QRule::Kind::VarianceFraction;
  c.q_rule.q = q.at("q").get<int>();
  c.q_rule.fraction = q.at("fraction").get<double>();
  const auto& g = j.at("gp");
  c.gp.mean_basis = g.at("mean_basis").get<std::string>() == "constant" ? MeanBasis::Constant : MeanBasis::Linear;
  c.gp.nugget = g.at("nugget").get<double>();
  c.gp.fit_nugget = g.at("fit_nugget").get<bool>();
  c.gp.starts = g.at("starts").get<int>();
  c.gp.min_length = g.at("min_length").get<double>();
  c.gp.max_length = g.at("max_length").get<double>();
  c.gp.max_iterations = g.at("max_iterations").get<int>();
  c.mode = parse_nroy_mode(j.at("mode").get<std::string>());
  c.t = j.at("t").get<double>();
  c.nroy_samples = j.at("nroy_samples").get<int>();
  c.mc_seed = j.at("mc_seed").get<std::uint64_t>();
  c.loo_coverage = j.at("loo_coverage").get<bool>();
  return c;
}

json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::filesystem::path wave_directory(const std::filesystem::path& root, int wave_id) {
  return root / ("wave_" + std::to_string(wave_id));
}

void save_wave(const WaveRecord& r, const WaveConfig& config, const std::filesystem::path& root) {
  const auto dir = wave_directory(root, r.wave_id);
  std::filesystem::create_directories(dir);
  save_ensemble(r.ensemble, dir);
  save_classification(r.labels, dir / "classification.csv");
  save_kernel_params(r.fit.spec.params, dir / "kernel.txt");
  io::write_file_atomic(dir / "kernel_fit.json", kernel_fit_json(r.fit, r.labels));
  io::write_file_atomic(dir / "basis.txt", basis_document(*r.basis));
  io::write_file_atomic(dir / "coefficients.csv", coefficients_table(r.basis->training_coefficients()));
  save_emulators(r.context->emulators, dir / "emulators.json");

  json j;
  j["wave_id"] = r.wave_id;
  j["seed"] = r.seed;
  j["n"] = r.ensemble.outputs.size();
  j["q"] = r.basis->q();
  j["annotator"] = r.labels.annotator;
  j["thresholds"] = {{"t_star_star", r.fit.t_star_star}, {"a", r.bound_a}, {"t", r.context->t}};
  if (r.t2) j["thresholds"]["t2"] = *r.t2;
  j["t2_members"] = r.t2_members;
  j["score"] = r.fit.score;
  j["nroy"] = {{"fraction", r.nroy.fraction}, {"std_error", r.nroy.std_error}, {"samples", r.nroy.samples}};
  if (r.loo_coverage) j["loo_coverage"] = *r.loo_coverage;
  j["advisory"] = r.advisory;
  j["config"] = config_json(config);
  io::write_file_atomic(dir / "wave.json", j.dump(1) + "\n");
}

WaveConfig load_wave_config(const std::filesystem::path& wave_dir) {
  return json_config(read_json(wave_dir / "wave.json").at("config"));
}

std::vector<WaveRecord> load_store(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw ValidationError("wave store not found: " + root.string());
  std::vector<WaveRecord> out;
  std::shared_ptr<const WavePredicate> prior;
  for (int k = 1;; ++k) {
    const auto dir = wave_directory(root, k);
    if (!std::filesystem::exists(dir / "wave.json")) break;
    const json j = read_json(dir / "wave.json");
    try {
      const WaveConfig config = json_config(j.at("config"));
      WaveRecord r;
      r.wave_id = k;
      r.seed = j.at("seed").get<std::uint64_t>();
      r.ensemble = load_ensemble(dir);
      r.labels = load_classification(dir / "classification.csv", r.ensemble.outputs.size());
      r.labels.wave_id = k;
      r.labels.annotator = j.at("annotator").get<std::string>();
      const GridShape grid = r.ensemble.outputs.grid().value_or(
          GridShape{static_cast<int>(r.ensemble.outputs.length()), 1, 1});
      const auto spec = make_kernel(load_kernel_params(dir / "kernel.txt"), r.ensemble.observation.obs_cov,
                                    grid, Factorization::Eigen);
      r.fit = score_kernel(spec, r.ensemble, r.labels, config.search.alpha);
      r.fit.evaluations = read_json(dir / "kernel_fit.json").at("evaluations").get<int>();
      auto system = std::make_shared<const CenteredKernelSystem>(
          CenteredKernelSystem::build(spec, r.ensemble.outputs.fields()));
      r.basis = std::make_shared<const KpcaBasis>(fit_kpca(system, QRule::fixed(j.at("q").get<int>())));
      auto ctx = std::make_shared<ImplausibilityContext>(ImplausibilityContext::make(
          r.basis, load_emulators(dir / "emulators.json"), r.ensemble.observation.z));
      const auto& th = j.at("thresholds");
      ctx->t = th.at("t").get<double>();
      r.bound_a = th.at("a").get<double>();
      ctx->bound_a = r.bound_a;
      if (th.contains("t2")) {
        r.t2 = th.at("t2").get<double>();
        ctx->t2 = r.t2;
      }
      r.t2_members = j.at("t2_members").get<std::vector<double>>();
      r.context = ctx;
      r.predicate = std::make_shared<const WavePredicate>(config.mode, r.context, prior);
      const auto& nj = j.at("nroy");
      r.nroy = {nj.at("fraction").get<double>(), nj.at("std_error").get<double>(), nj.at("samples").get<int>()};
      if (j.contains("loo_coverage")) r.loo_coverage = j.at("loo_coverage").get<double>();
      r.advisory = j.at("advisory").get<std::string>();
      prior = r.predicate;
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ValidationError((dir / "wave.json").string() + ": " + e.what());
    }
  }
  if (out.empty()) throw ValidationError("no wave_1 directory under " + root.string());
  return out;
}

std::string store_report(const std::filesystem::path& root) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-5s %5s %4s %4s %12s %12s %10s %9s %9s\n", "wave", "n", "n_A", "n_U",
                "T**", "T2", "NROY", "NROY_se", "LOO_cov");
  out << line;
  std::vector<std::string> notes;
  for (int k = 1;; ++k) {
    const auto dir = wave_directory(root, k);
    if (!std::filesystem::exists(dir / "wave.json")) break;
    const json j = read_json(dir / "wave.json");
    const json fit = read_json(dir / "kernel_fit.json");
    const auto& th = j.at("thresholds");
    char coverage[32] = "-";
    if (j.contains("loo_coverage")) std::snprintf(coverage, sizeof coverage, "%.4f", j.at("loo_coverage").get<double>());
    std::snprintf(line, sizeof line, "%-5d %5d %4d %4d %12.6g %12.6g %10.6f %9.6f %9s\n", k,
                  j.at("n").get<int>(), fit.at("n_acceptable").get<int>(), fit.at("n_unacceptable").get<int>(),
                  th.at("t_star_star").get<double>(), th.contains("t2") ? th.at("t2").get<double>() : 0.0,
                  j.at("nroy").at("fraction").get<double>(), j.at("nroy").at("std_error").get<double>(),
                  coverage);
    out << line;
    const auto adv = j.at("advisory").get<std::string>();
    if (!adv.empty()) notes.push_back("wave " + std::to_string(k) + ": " + adv);
  }
  for (const auto& n : notes) out << n << "\n";
  return out.str();
}

}  // namespace khm
