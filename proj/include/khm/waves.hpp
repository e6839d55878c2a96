#pragma once

// Refocusing waves: NROY predicates, their volume, designs inside them, and
// the per-wave pipeline from labels to predicate.

#include "khm/ensemble.hpp"
#include "khm/gp_emulator.hpp"
#include "khm/implausibility.hpp"
#include "khm/kernel_selection.hpp"
#include "khm/kpca.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace khm {

enum class NroyMode { IF1, IF2 };

std::string to_string(NroyMode mode);
NroyMode parse_nroy_mode(const std::string& text);

/// One wave's cut, conjoined with every earlier wave's cut.
class WavePredicate {
 public:
  WavePredicate(NroyMode mode, std::shared_ptr<const ImplausibilityContext> context,
                std::shared_ptr<const WavePredicate> prior = nullptr);

  [[nodiscard]] NroyMode mode() const { return mode_; }
  [[nodiscard]] const ImplausibilityContext& context() const { return *context_; }
  [[nodiscard]] const std::shared_ptr<const WavePredicate>& prior() const { return prior_; }
  [[nodiscard]] int depth() const { return prior_ ? prior_->depth() + 1 : 1; }

  /// This wave's test alone.
  [[nodiscard]] bool passes_own(const Eigen::VectorXd& x) const;
  /// This wave and every prior wave.
  [[nodiscard]] bool member(const Eigen::VectorXd& x) const;

 private:
  NroyMode mode_;
  std::shared_ptr<const ImplausibilityContext> context_;
  std::shared_ptr<const WavePredicate> prior_;
};

using Membership = std::function<bool(const Eigen::VectorXd&)>;

bool nroy_member(const WavePredicate& pred, const Eigen::VectorXd& x);

struct NroyEstimate {
  double fraction = 0.0;
  double std_error = 0.0;
  int samples = 0;
};

/// Uniform Monte Carlo over [-1, 1]^p with standard error sqrt(f (1 - f) / N).
NroyEstimate nroy_fraction(const Membership& member, int p, int samples, std::uint64_t seed);
NroyEstimate nroy_fraction(const WavePredicate& pred, int p, int samples, std::uint64_t seed);

/// Scaled points inside NROY. A maximin Latin hypercube of n_new points is
/// returned directly when every point is a member; otherwise Latin-hypercube
/// candidates are filtered and thinned by greedy maximin distance.
Eigen::MatrixXd next_wave_design(const Membership& member, int p, int n_new, int candidate_budget,
                                 std::uint64_t seed);
Eigen::MatrixXd next_wave_design(const WavePredicate& pred, int p, int n_new, int candidate_budget,
                                 std::uint64_t seed);

struct WaveConfig {
  std::optional<SearchSpace> search_space;  // default_search_space when absent
  bool identity_weight = false;
  SearchConfig search;
  QRule q_rule = QRule::fixed(5);
  GpConfig gp;
  NroyMode mode = NroyMode::IF1;
  double t = 3.0;
  int nroy_samples = 10000;
  /// Shared by every wave so that nested predicates give nested estimates.
  std::uint64_t mc_seed = 12345;
  bool loo_coverage = true;
};

struct WaveRecord {
  int wave_id = 1;
  std::uint64_t seed = 0;
  Ensemble ensemble;
  Classification labels;
  KernelFit fit;
  std::shared_ptr<const KpcaBasis> basis;
  std::shared_ptr<const ImplausibilityContext> context;
  std::shared_ptr<const WavePredicate> predicate;
  double bound_a = 0.0;
  std::optional<double> t2;
  std::vector<double> t2_members;
  NroyEstimate nroy;
  std::optional<double> loo_coverage;
  std::string advisory;
};

/// Kernel selection, KPCA, emulation, thresholds, predicate and NROY volume.
/// Errors carry the stage that raised them.
WaveRecord run_wave(int wave_id, const Ensemble& ensemble, const Classification& labels,
                    std::shared_ptr<const WavePredicate> prior, const WaveConfig& config,
                    std::uint64_t seed, const WaveRecord* previous = nullptr);

/// Share of (member, coefficient) pairs whose held-out value lies inside the
/// leave-one-out 95% interval m +- 1.96 sqrt(v).
double loo_coverage(const Eigen::MatrixXd& design, const Eigen::MatrixXd& coeffs,
                    const GpConfig& config, std::uint64_t seed);

/// Relative change in NROY fraction between consecutive waves and the advisory
/// text when it is below 10%.
std::string stopping_advisory(double previous_fraction, double current_fraction);

}  // namespace khm
