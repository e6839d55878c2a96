#pragma once

// On-disk wave lineage: root/wave_<k>/ holds everything needed to rebuild
// wave k's predicate without refitting anything.

#include "khm/waves.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace khm {

std::filesystem::path wave_directory(const std::filesystem::path& root, int wave_id);

/// Writes the wave's ensemble, labels, kernel, basis, coefficients, emulators
/// and summary. Contents depend only on the record and config.
void save_wave(const WaveRecord& record, const WaveConfig& config, const std::filesystem::path& root);

/// Rebuilds every wave_<k> directory under root in order, chaining predicates.
std::vector<WaveRecord> load_store(const std::filesystem::path& root);

/// Config fields stored alongside a wave (search, q rule, GP, thresholds).
WaveConfig load_wave_config(const std::filesystem::path& wave_dir);

/// Plain-text table of per-wave summaries.
std::string store_report(const std::filesystem::path& root);

}  // namespace khm
