#pragma once

#include <string>
#include <vector>

#include "cbsn/config.hpp"

namespace cbsn {

/// Noisy/clean pair written by make-noise.
struct NoisePairFiles {
    std::string clean;
    std::string noisy;
    std::uint64_t stream = 0;
};

/// Generates data_count clean/noisy raster pairs under dir and writes
/// manifest.txt describing them. Deterministic in the config seed.
std::vector<NoisePairFiles> write_noise_set(const std::string& dir, const ExperimentConfig& cfg);

/// Reads the noisy files listed in dir/manifest.txt (or noisy_*.cbr when no
/// manifest exists), sorted by name.
NoisyDataset load_noisy_dir(const std::string& dir);
std::vector<std::string> list_rasters(const std::string& dir, const std::string& prefix);

/// Deterministic holdout split: indices shuffled by seed, the first
/// ceil(frac*n) held out.
struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> holdout;
};
SplitIndices split_holdout(std::size_t n, double frac, std::uint64_t seed);

}  // namespace cbsn
