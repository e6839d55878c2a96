#pragma once

// Chained waves on the synthetic band simulator, labelled by auto_label.

#include "khm/toy_sim.hpp"
#include "khm/waves.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace khm {

struct ToyPipelineConfig {
  ToyConfig toy;
  WaveConfig wave;
  int waves = 3;
  int runs_per_wave = 30;
  int candidate_budget = 5000;
};

/// Wave 1 uses a maximin Latin hypercube; later waves sample inside the
/// previous wave's NROY space. Each wave is written to store_root when given.
std::vector<WaveRecord> run_toy_waves(const ToyPipelineConfig& config, std::uint64_t seed,
                                      const std::optional<std::filesystem::path>& store_root = {});

}  // namespace khm
