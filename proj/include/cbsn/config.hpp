#pragma once

#include <string>

#include "cbsn/noisegen.hpp"
#include "cbsn/trainkit.hpp"

namespace cbsn {

/// One experiment, fully determined: two runs from the same config are
/// bitwise identical. Plain-text key=value file; '#' starts a comment;
/// unknown keys are rejected. A `preset` line (desk|paper) loads scaled
/// defaults and later keys override it.
struct ExperimentConfig {
    std::uint64_t seed = 1;
    CbsnConfig model;
    LossWeights loss;
    TrainConfig train;
    NoiseSpec noise;

    std::int64_t data_count = 40;
    std::int64_t data_height = 128;
    std::int64_t data_width = 128;
    std::int64_t data_channels = 3;
    CleanKind clean_kind = CleanKind::BandLimited;
    double holdout_frac = 0.1;

    std::string data_dir;
    std::string out_dir;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

}  // namespace cbsn
