#pragma once

#include <string>
#include <vector>

namespace cbsn {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Machine-checks of the framework's stated invariants: blind-spot
/// exactness, gradient fidelity, resampler round-trips, sampler uniformity,
/// schedule anchors, normalization and file-format round-trips. Runs in
/// seconds.
std::vector<CheckResult> verify_quick(std::uint64_t seed);

/// verify_quick plus the Monte-Carlo bound check and a toy training run.
std::vector<CheckResult> verify_full(std::uint64_t seed);

}  // namespace cbsn
