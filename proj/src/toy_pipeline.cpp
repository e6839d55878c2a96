#include "khm/toy_pipeline.hpp"

#include "khm/gp_emulator.hpp"
#include "khm/sampling.hpp"
#include "khm/wave_store.hpp"

namespace khm {

std::vector<WaveRecord> run_toy_waves(const ToyPipelineConfig& config, std::uint64_t seed,
                                      const std::optional<std::filesystem::path>& store_root) {
  std::vector<WaveRecord> records;
  std::shared_ptr<const WavePredicate> prior;
  for (int k = 1; k <= config.waves; ++k) {
    Eigen::MatrixXd points;
    const auto design_seed = derive_seed(seed, 100 + static_cast<std::uint64_t>(k));
    if (!prior) {
      points = maximin_lhc(config.runs_per_wave, 3, design_seed);
    } else {
      points = next_wave_design(*prior, 3, config.runs_per_wave, config.candidate_budget, design_seed);
    }
    const Ensemble ensemble = toy_ensemble_from_points(config.toy, points);
    const Classification labels = auto_label(config.toy, points);
    records.push_back(run_wave(k, ensemble, labels, prior, config.wave,
                               derive_seed(seed, 200 + static_cast<std::uint64_t>(k)),
                               records.empty() ? nullptr : &records.back()));
    if (store_root) save_wave(records.back(), config.wave, *store_root);
    prior = records.back().predicate;
  }
  return records;
}

}  // namespace khm
