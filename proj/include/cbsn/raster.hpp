#pragma once

#include <string>

#include "cbsn/tensor.hpp"

namespace cbsn {

/// Float raster file, magic "CBR1": u32 little-endian width, height,
/// channels, then float32 little-endian values in channel-major planes,
/// row-major within a plane. Round-trips bit-exactly.
void write_raster(const std::string& path, const Tensor<float>& img);  // img is [C,H,W]
Tensor<float> read_raster(const std::string& path);

/// Binary PGM (P5) / PPM (P6), maxval 255. Import scales to [0,1] via v/255;
/// export rounds half-to-even back to 0..255.
void write_image8(const std::string& path, const Tensor<float>& img);
Tensor<float> read_image8(const std::string& path);

/// True if the file starts with the CBR1 magic.
bool is_raster_file(const std::string& path);

}  // namespace cbsn
