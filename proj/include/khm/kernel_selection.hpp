#pragma once

// Choosing kernel parameters and the threshold T** from a labelled ensemble.

#include "khm/ensemble.hpp"
#include "khm/kernel.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace khm {

/// Per-run labels: 0 unselected, 1 acceptable, 2 unacceptable.
struct Classification {
  std::vector<int> labels;
  int wave_id = 1;
  std::string annotator;

  [[nodiscard]] std::vector<Eigen::Index> with_label(int label) const;
  [[nodiscard]] std::vector<Eigen::Index> acceptable() const { return with_label(1); }
  [[nodiscard]] std::vector<Eigen::Index> unacceptable() const { return with_label(2); }
  /// Counts of labels 0, 1 and 2.
  [[nodiscard]] std::array<int, 3> tally() const;
  /// Throws unless at least one run is acceptable and one unacceptable.
  void require_both_classes() const;
};

/// "run_index,label" header then one row per run, indices 0..n-1.
std::string classification_table(const Classification& c);
/// Rows may be in any order; runs absent from the file get label 0.
Classification parse_classification(const std::string& text, Eigen::Index n,
                                    const std::string& where = "classification");
Classification load_classification(const std::filesystem::path& path, Eigen::Index n);
void save_classification(const Classification& c, const std::filesystem::path& path);

struct CostCounts {
  int retained_acceptable = 0;    // N_A
  int retained_unacceptable = 0;  // N_U
};

/// P = (alpha / n_A) N_A + (1 - alpha) N_A / (N_A + N_U), membership I0 <= T.
double cost(const std::vector<double>& i0_acceptable, const std::vector<double>& i0_unacceptable,
            double threshold, double alpha, CostCounts* counts = nullptr);

struct ThresholdChoice {
  double t_star_star = 0.0;
  double score = 0.0;
};

/// Scans every distinct classified I0 value and returns the largest threshold
/// among those maximizing the cost.
ThresholdChoice t_star_star(const std::vector<double>& i0_acceptable,
                            const std::vector<double>& i0_unacceptable, double alpha);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  [[nodiscard]] bool pinned() const { return lo == hi; }
};

struct SearchSpace {
  Range omega{0.0, 1.0};
  Range sigma{1e-3, 1e3};
  Range delta{1e-3, 1e3};
  /// true: W = I and no weight parameters are searched.
  bool identity_weight = false;
  std::vector<Range> lengths;  // one per grid axis in use
  Range sigma_eta_sq{1e-6, 1.0};
  double jitter = -1.0;
};

/// Bounds scaled to the ensemble: sigma and delta around the median squared
/// distance to z, sigma_eta_sq around the average per-cell variance.
SearchSpace default_search_space(const Ensemble& ensemble, bool identity_weight);

struct SearchConfig {
  double alpha = 0.8;
  int population = 20;
  int max_evaluations = 600;
  double differential_weight = 0.7;
  double crossover = 0.9;
};

struct KernelFit {
  KernelSpec spec;
  double t_star_star = 0.0;
  double score = 0.0;
  int retained_acceptable = 0;
  int retained_unacceptable = 0;
  int n_acceptable = 0;
  int n_unacceptable = 0;
  std::vector<double> i0;  // every run, labelled or not
  int evaluations = 0;
};

/// I0 of every ensemble member against z under spec.
std::vector<double> ensemble_imp0(const KernelSpec& spec, const Eigen::MatrixXd& fields,
                                  const Eigen::VectorXd& z);

/// Scores a fixed kernel: I0 for every run, then T** and P.
KernelFit score_kernel(const KernelSpec& spec, const Ensemble& ensemble,
                       const Classification& labels, double alpha);

/// Seeded differential evolution over the search space maximizing P(K, T**).
/// Candidates are ordered by P, then larger T**, then smaller omega.
KernelFit optimize_kernel(const Ensemble& ensemble, const Classification& labels,
                          const SearchSpace& space, const SearchConfig& config, std::uint64_t seed);

std::string kernel_fit_json(const KernelFit& fit, const Classification& labels);

}  // namespace khm
