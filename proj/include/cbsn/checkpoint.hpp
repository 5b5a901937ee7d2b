#pragma once

#include <string>

#include "cbsn/model.hpp"

namespace cbsn {

/// Binary parameter checkpoint: magic "CBSN", version u32, then per tensor
/// name length u32, name bytes, rank u32, dims u32 each, raw 32-bit
/// little-endian floats. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const CbsnParams& params);

/// Loads a checkpoint and reconstructs the architecture from the tensor
/// names and shapes (branch dilations follow from the kernel sizes).
CbsnParams load_checkpoint(const std::string& path);

}  // namespace cbsn
