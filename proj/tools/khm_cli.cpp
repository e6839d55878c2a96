// khm: command-line driver for kernel history matching.

#include "khm/ensemble.hpp"
#include "khm/error.hpp"
#include "khm/gp_emulator.hpp"
#include "khm/implausibility.hpp"
#include "khm/kernel.hpp"
#include "khm/kernel_selection.hpp"
#include "khm/kpca.hpp"
#include "khm/service.hpp"
#include "khm/text_io.hpp"
#include "khm/toy_pipeline.hpp"
#include "khm/toy_sim.hpp"
#include "khm/wave_store.hpp"
#include "khm/waves.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <csignal>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace khm;

namespace {

struct WaveOptions {
  int q = 5;
  double variance_fraction = 0.0;
  std::string mode = "IF1";
  double t = 3.0;
  int nroy_samples = 10000;
  std::uint64_t mc_seed = 12345;
  double alpha = 0.8;
  int budget = 600;
  int population = 20;
  bool identity_weight = false;
  bool no_coverage = false;
  double nugget = 1e-8;
  bool fit_nugget = false;
  std::string mean_basis = "constant";
  int gp_starts = 10;
};

void add_gp_options(CLI::App* cmd, WaveOptions& o) {
  cmd->add_option("--nugget", o.nugget, "GP nugget relative to the process variance")->check(CLI::NonNegativeNumber);
  cmd->add_flag("--fit-nugget", o.fit_nugget, "Optimize the nugget (with --nugget as lower bound)");
  cmd->add_option("--mean-basis", o.mean_basis, "GP mean basis")->check(CLI::IsMember({"constant", "linear"}));
  cmd->add_option("--gp-starts", o.gp_starts, "Likelihood multi-starts per GP")->check(CLI::PositiveNumber);
}

void add_q_options(CLI::App* cmd, WaveOptions& o) {
  cmd->add_option("--q", o.q, "Number of retained basis vectors")->check(CLI::PositiveNumber);
  cmd->add_option("--variance-fraction", o.variance_fraction,
                  "Retain the smallest q explaining this share of variance (overrides --q)")
      ->check(CLI::Range(0.0, 1.0));
}

void add_search_options(CLI::App* cmd, WaveOptions& o) {
  cmd->add_option("--alpha", o.alpha, "Accuracy/efficiency trade-off of the cost")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--budget", o.budget, "Kernel search evaluations")->check(CLI::PositiveNumber);
  cmd->add_option("--population", o.population, "Differential evolution population")->check(CLI::Range(4, 100000));
  cmd->add_flag("--identity-weight", o.identity_weight, "Use W = I instead of obs_cov + Sigma_eta");
}

void add_wave_options(CLI::App* cmd, WaveOptions& o) {
  add_search_options(cmd, o);
  add_q_options(cmd, o);
  add_gp_options(cmd, o);
  cmd->add_option("--mode", o.mode, "NROY test")->check(CLI::IsMember({"IF1", "IF2"}));
  cmd->add_option("--t", o.t, "Multiplier of the spread term in T(x)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--nroy-samples", o.nroy_samples, "Monte Carlo samples for the NROY fraction")
      ->check(CLI::Range(100, 100000000));
  cmd->add_option("--mc-seed", o.mc_seed, "Monte Carlo seed shared by all waves");
  cmd->add_flag("--no-coverage", o.no_coverage, "Skip the leave-one-out coverage check");
}

GpConfig gp_config(const WaveOptions& o) {
  GpConfig c;
  c.nugget = o.nugget;
  c.fit_nugget = o.fit_nugget;
  c.mean_basis = o.mean_basis == "linear" ? MeanBasis::Linear : MeanBasis::Constant;
  c.starts = o.gp_starts;
  return c;
}

QRule q_rule(const WaveOptions& o) {
  return o.variance_fraction > 0 ? QRule::variance(o.variance_fraction) : QRule::fixed(o.q);
}

SearchConfig search_config(const WaveOptions& o) {
  SearchConfig c;
  c.alpha = o.alpha;
  c.max_evaluations = o.budget;
  c.population = o.population;
  return c;
}

WaveConfig wave_config(const WaveOptions& o) {
  WaveConfig c;
  c.identity_weight = o.identity_weight;
  c.search = search_config(o);
  c.q_rule = q_rule(o);
  c.gp = gp_config(o);
  c.mode = parse_nroy_mode(o.mode);
  c.t = o.t;
  c.nroy_samples = o.nroy_samples;
  c.mc_seed = o.mc_seed;
  c.loo_coverage = !o.no_coverage;
  return c;
}

GridShape grid_of(const Ensemble& e) {
  return e.outputs.grid().value_or(GridShape{static_cast<int>(e.outputs.length()), 1, 1});
}

std::string design_csv(const std::vector<std::string>& names, const Eigen::MatrixXd& raw) {
  std::string text;
  for (size_t j = 0; j < names.size(); ++j) text += (j ? "," : "") + names[j];
  text += '\n';
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    for (Eigen::Index j = 0; j < raw.cols(); ++j) text += (j ? "," : "") + io::format_double(raw(i, j));
    text += '\n';
  }
  return text;
}

/// Latest wave directory under a store root.
int last_wave(const fs::path& root) {
  int k = 0;
  while (fs::exists(wave_directory(root, k + 1) / "wave.json")) ++k;
  return k;
}

LabelServer* active_server = nullptr;

extern "C" void handle_signal(int) {
  if (active_server) active_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel history matching: kernel selection, KPCA emulation and NROY waves"};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "Seed for every stochastic step")->capture_default_str();

  // toy-generate
  auto* toy_cmd = app.add_subcommand("toy-generate", "Write a synthetic band ensemble with labels");
  std::string toy_out;
  int toy_n = 30;
  ToyConfig toy;
  bool toy_no_labels = false;
  toy_cmd->add_option("--out", toy_out, "Output directory")->required();
  toy_cmd->add_option("--n", toy_n, "Number of runs")->check(CLI::Range(2, 100000));
  toy_cmd->add_option("--rows", toy.rows, "Grid rows")->check(CLI::PositiveNumber);
  toy_cmd->add_option("--cols", toy.cols, "Grid columns")->check(CLI::PositiveNumber);
  toy_cmd->add_option("--noise-var", toy.obs_noise_var, "Observation error variance (0: none)")
      ->check(CLI::NonNegativeNumber);
  toy_cmd->add_flag("--no-labels", toy_no_labels, "Do not write classification.csv");

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate raw files and write a normalized ensemble directory");
  EnsemblePaths ingest_paths;
  std::string ingest_grid, ingest_cov, ingest_out;
  ingest_cmd->add_option("--design", ingest_paths.design, "Design CSV with a header of parameter names")->required();
  ingest_cmd->add_option("--bounds", ingest_paths.bounds, "Bounds CSV: name,lower,upper")->required();
  ingest_cmd->add_option("--outputs", ingest_paths.outputs, "l x n output matrix")->required();
  ingest_cmd->add_option("--observation", ingest_paths.observation, "Observation column")->required();
  ingest_cmd->add_option("--grid", ingest_grid, "Grid sidecar rows,cols,frames");
  ingest_cmd->add_option("--obs-cov", ingest_cov, "Observation covariance (l x l or scalar)");
  ingest_cmd->add_option("--out", ingest_out, "Output directory")->required();

  // classify-serve
  auto* serve_cmd = app.add_subcommand("classify-serve", "Serve the labelling API for an ensemble");
  std::string serve_ensemble, serve_labels, serve_host = "127.0.0.1";
  int serve_port = 8080, serve_wave = 1;
  serve_cmd->add_option("--ensemble", serve_ensemble, "Ensemble directory")->required();
  serve_cmd->add_option("--classification", serve_labels, "Classification file written on save")->required();
  serve_cmd->add_option("--host", serve_host, "Bind address");
  serve_cmd->add_option("--port", serve_port, "Port")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--wave", serve_wave, "Wave id reported to the UI")->check(CLI::PositiveNumber);

  WaveOptions opts;

  // fit-kernel
  auto* fit_cmd = app.add_subcommand("fit-kernel", "Choose kernel parameters and T** from labels");
  std::string fit_ensemble, fit_labels, fit_out;
  fit_cmd->add_option("--ensemble", fit_ensemble, "Ensemble directory")->required();
  fit_cmd->add_option("--classification", fit_labels, "Classification file (run_index,label)")->required();
  fit_cmd->add_option("--out", fit_out, "Output directory for kernel.txt and kernel_fit.json")->required();
  add_search_options(fit_cmd, opts);

  // emulate
  auto* emu_cmd = app.add_subcommand("emulate", "Fit the KPCA basis and coefficient emulators");
  std::string emu_ensemble, emu_kernel, emu_out;
  emu_cmd->add_option("--ensemble", emu_ensemble, "Ensemble directory")->required();
  emu_cmd->add_option("--kernel", emu_kernel, "Kernel document")->required();
  emu_cmd->add_option("--out", emu_out, "Output directory")->required();
  add_q_options(emu_cmd, opts);
  add_gp_options(emu_cmd, opts);

  // history-match
  auto* hm_cmd = app.add_subcommand("history-match", "Evaluate implausibilities at candidate inputs");
  std::string hm_ensemble, hm_kernel, hm_emulators, hm_candidates, hm_out, hm_fit;
  std::optional<double> hm_a, hm_t2;
  double hm_t = 3.0;
  hm_cmd->add_option("--ensemble", hm_ensemble, "Ensemble directory")->required();
  hm_cmd->add_option("--kernel", hm_kernel, "Kernel document")->required();
  hm_cmd->add_option("--emulators", hm_emulators, "Emulator document")->required();
  hm_cmd->add_option("--candidates", hm_candidates, "Candidate design CSV in native units")->required();
  hm_cmd->add_option("--out", hm_out, "Output table")->required();
  hm_cmd->add_option("--kernel-fit", hm_fit, "kernel_fit.json supplying a = T**");
  hm_cmd->add_option("--a", hm_a, "Bound a in T(x)");
  hm_cmd->add_option("--t2", hm_t2, "Threshold for IF2");
  hm_cmd->add_option("--t", hm_t, "Multiplier of the spread term in T(x)");

  // nroy-sample
  auto* nroy_cmd = app.add_subcommand("nroy-sample", "Estimate the NROY fraction of a wave store");
  std::string nroy_store;
  int nroy_samples = 10000;
  std::optional<std::uint64_t> nroy_mc_seed;
  nroy_cmd->add_option("--store", nroy_store, "Wave store root")->required();
  nroy_cmd->add_option("--samples", nroy_samples, "Monte Carlo samples")->check(CLI::Range(100, 100000000));
  nroy_cmd->add_option("--mc-seed", nroy_mc_seed, "Monte Carlo seed (default: the stored one)");

  // next-design
  auto* next_cmd = app.add_subcommand("next-design", "Space-filling design inside the current NROY space");
  std::string next_store, next_out;
  int next_n = 30, next_budget = 5000;
  next_cmd->add_option("--store", next_store, "Wave store root")->required();
  next_cmd->add_option("--n", next_n, "Number of new runs")->check(CLI::PositiveNumber);
  next_cmd->add_option("--budget", next_budget, "Candidate points to screen")->check(CLI::PositiveNumber);
  next_cmd->add_option("--out", next_out, "Output directory for design.csv and bounds.csv")->required();

  // wave-run
  auto* wave_cmd = app.add_subcommand("wave-run", "Run one labelled wave, or a chain of toy waves");
  std::string wave_store, wave_ensemble, wave_labels;
  bool wave_toy = false;
  int wave_count = 3, wave_runs = 30;
  wave_cmd->add_option("--store", wave_store, "Wave store root")->required();
  wave_cmd->add_flag("--toy", wave_toy, "Use the synthetic simulator with automatic labels");
  wave_cmd->add_option("--waves", wave_count, "Number of toy waves")->check(CLI::PositiveNumber);
  wave_cmd->add_option("--runs", wave_runs, "Runs per toy wave")->check(CLI::Range(4, 100000));
  wave_cmd->add_option("--ensemble", wave_ensemble, "Ensemble directory for the next wave");
  wave_cmd->add_option("--classification", wave_labels, "Classification file for that ensemble");
  add_wave_options(wave_cmd, opts);

  // report
  auto* report_cmd = app.add_subcommand("report", "Summarize a wave store");
  std::string report_store;
  report_cmd->add_option("--store", report_store, "Wave store root")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*toy_cmd) {
      const Ensemble e = make_toy_ensemble(toy, toy_n, seed);
      save_ensemble(e, toy_out);
      if (!toy_no_labels) save_classification(auto_label(toy, e.design.points()), fs::path(toy_out) / "classification.csv");
      std::cout << "wrote " << toy_n << " runs (" << toy.rows << "x" << toy.cols << " grid) to " << toy_out << "\n";
    } else if (*ingest_cmd) {
      if (!ingest_grid.empty()) ingest_paths.grid = ingest_grid;
      if (!ingest_cov.empty()) ingest_paths.obs_cov = ingest_cov;
      const Ensemble e = load_ensemble(ingest_paths);
      save_ensemble(e, ingest_out);
      std::cout << "n=" << e.outputs.size() << " p=" << e.design.dim() << " l=" << e.outputs.length()
                << (e.observation.obs_cov ? " obs_cov=yes" : " obs_cov=no") << "\n";
    } else if (*serve_cmd) {
      auto session = std::make_shared<LabelSession>(load_ensemble(serve_ensemble), serve_labels, serve_wave);
      LabelServer server(session);
      active_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      std::cout << "serving " << session->ensemble().outputs.size() << " runs on http://" << serve_host << ":"
                << serve_port << "/api" << std::endl;
      server.run(serve_host, serve_port);
      active_server = nullptr;
    } else if (*fit_cmd) {
      const Ensemble e = load_ensemble(fit_ensemble);
      const Classification labels = load_classification(fit_labels, e.outputs.size());
      const auto space = default_search_space(e, opts.identity_weight);
      const KernelFit fit = optimize_kernel(e, labels, space, search_config(opts), seed);
      fs::create_directories(fit_out);
      save_kernel_params(fit.spec.params, fs::path(fit_out) / "kernel.txt");
      io::write_file_atomic(fs::path(fit_out) / "kernel_fit.json", kernel_fit_json(fit, labels));
      std::cout << "P=" << io::format_double(fit.score) << " T**=" << io::format_double(fit.t_star_star)
                << " N_A=" << fit.retained_acceptable << "/" << fit.n_acceptable
                << " N_U=" << fit.retained_unacceptable << "/" << fit.n_unacceptable << "\n"
                << to_document(fit.spec.params);
    } else if (*emu_cmd) {
      const Ensemble e = load_ensemble(emu_ensemble);
      const auto spec = make_kernel(load_kernel_params(emu_kernel), e.observation.obs_cov, grid_of(e));
      auto system = std::make_shared<const CenteredKernelSystem>(CenteredKernelSystem::build(spec, e.outputs.fields()));
      const KpcaBasis basis = fit_kpca(system, q_rule(opts));
      const Eigen::MatrixXd coeffs = basis.training_coefficients();
      const auto emulators = emulate_coefficients(e.design.points(), coeffs, gp_config(opts), seed);
      fs::create_directories(emu_out);
      io::write_file_atomic(fs::path(emu_out) / "basis.txt", basis_document(basis));
      io::write_file_atomic(fs::path(emu_out) / "coefficients.csv", coefficients_table(coeffs));
      save_emulators(emulators, fs::path(emu_out) / "emulators.json");
      const auto obs = basis.project_full(e.observation.z);
      std::cout << "q=" << basis.q() << " obs_reconstruction_error=" << io::format_double(obs.recon_err_sq) << "\n";
    } else if (*hm_cmd) {
      const Ensemble e = load_ensemble(hm_ensemble);
      const auto spec = make_kernel(load_kernel_params(hm_kernel), e.observation.obs_cov, grid_of(e));
      auto emulators = load_emulators(hm_emulators);
      auto system = std::make_shared<const CenteredKernelSystem>(CenteredKernelSystem::build(spec, e.outputs.fields()));
      auto basis = std::make_shared<const KpcaBasis>(fit_kpca(system, QRule::fixed(emulators.q())));
      auto ctx = ImplausibilityContext::make(basis, std::move(emulators), e.observation.z);
      ctx.t = hm_t;
      if (hm_a) {
        ctx.bound_a = *hm_a;
      } else if (!hm_fit.empty()) {
        ctx.bound_a = nlohmann::json::parse(io::read_file(hm_fit)).at("t_star_star").get<double>();
      } else {
        throw ValidationError("history-match needs --a or --kernel-fit for the bound a");
      }
      ctx.t2 = hm_t2;
      const auto table = io::read_table(hm_candidates, true);
      const Eigen::MatrixXd raw = io::to_matrix(table, hm_candidates);
      if (raw.cols() != e.design.dim()) throw ValidationError("candidate file has the wrong number of columns");
      const Eigen::MatrixXd pts = scale_inputs(raw, e.design.bounds());
      std::string out;
      for (const auto& name : e.design.names()) out += name + ",";
      out += "imp_f1,T,imp_f2,nroy_if1";
      if (ctx.t2) out += ",nroy_if2";
      out += "\n";
      for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        const Eigen::VectorXd x = pts.row(i).transpose();
        const auto pred = ctx.emulators.predict(x);
        const double f1 = imp_f1_from(ctx.obs, pred.mean);
        const double t = threshold_from_variance(pred.variance.sum(), *ctx.bound_a, ctx.t);
        const double f2 = imp_f2_from(ctx.obs, pred);
        for (Eigen::Index j = 0; j < raw.cols(); ++j) out += io::format_double(raw(i, j)) + ",";
        out += io::format_double(f1) + "," + io::format_double(t) + "," + io::format_double(f2) + "," +
               (f1 <= t ? "1" : "0");
        if (ctx.t2) out += std::string(",") + (f2 <= *ctx.t2 ? "1" : "0");
        out += "\n";
      }
      io::write_file_atomic(hm_out, out);
      std::cout << "evaluated " << pts.rows() << " candidates\n";
    } else if (*nroy_cmd) {
      const auto waves = load_store(nroy_store);
      const auto config = load_wave_config(wave_directory(nroy_store, static_cast<int>(waves.size())));
      const auto est = nroy_fraction(*waves.back().predicate, static_cast<int>(waves.back().ensemble.design.dim()),
                                     nroy_samples, nroy_mc_seed.value_or(config.mc_seed));
      std::cout << "wave " << waves.size() << " nroy_fraction=" << io::format_double(est.fraction)
                << " std_error=" << io::format_double(est.std_error) << " samples=" << est.samples << "\n";
    } else if (*next_cmd) {
      const auto waves = load_store(next_store);
      const auto& last = waves.back();
      const Eigen::MatrixXd pts = next_wave_design(*last.predicate, static_cast<int>(last.ensemble.design.dim()),
                                                   next_n, next_budget, seed);
      const auto& d = last.ensemble.design;
      fs::create_directories(next_out);
      io::write_file_atomic(fs::path(next_out) / "design.csv", design_csv(d.names(), unscale_inputs(pts, d.bounds())));
      std::string bounds = "name,lower,upper\n";
      for (size_t j = 0; j < d.names().size(); ++j) {
        bounds += d.names()[j] + "," + io::format_double(d.bounds()[j].first) + "," +
                  io::format_double(d.bounds()[j].second) + "\n";
      }
      io::write_file_atomic(fs::path(next_out) / "bounds.csv", bounds);
      std::cout << "wrote " << next_n << " NROY points to " << next_out << "\n";
    } else if (*wave_cmd) {
      const WaveConfig config = wave_config(opts);
      if (wave_toy) {
        ToyPipelineConfig pc;
        pc.wave = config;
        pc.waves = wave_count;
        pc.runs_per_wave = wave_runs;
        if (fs::exists(wave_directory(wave_store, 1))) {
          throw ValidationError("wave store " + wave_store + " already contains waves");
        }
        run_toy_waves(pc, seed, fs::path(wave_store));
      } else {
        if (wave_ensemble.empty() || wave_labels.empty()) {
          throw ValidationError("wave-run needs --ensemble and --classification (or --toy)");
        }
        const Ensemble e = load_ensemble(wave_ensemble);
        const Classification labels = load_classification(wave_labels, e.outputs.size());
        const int k = last_wave(wave_store);
        std::vector<WaveRecord> prior;
        if (k > 0) prior = load_store(wave_store);
        auto rec = run_wave(k + 1, e, labels, prior.empty() ? nullptr : prior.back().predicate, config, seed,
                            prior.empty() ? nullptr : &prior.back());
        rec.labels.annotator = "file";
        save_wave(rec, config, wave_store);
      }
      std::cout << store_report(wave_store);
    } else if (*report_cmd) {
      std::cout << store_report(report_store);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
