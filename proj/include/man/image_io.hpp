#pragma once

#include <string>
#include <vector>

#include "man/tensor.hpp"

namespace man {

// 8-bit PNG ingestion into a (1,3,h,w) tensor in [0,1] (values/255).
// Grayscale and palette images are promoted to RGB, alpha is dropped,
// 16-bit depth is reduced to 8. Throws DataError on unreadable files.
Tensor read_png(const std::string& path);

// Writes an (1,3,h,w) tensor as 8-bit RGB PNG, quantizing with
// round(clamp(x,0,1)*255).
void write_png(const std::string& path, const Tensor& img);

// The 8-bit quantization used before metric computation and file output.
std::vector<u8> quantize_u8(const Tensor& img);
Tensor quantize_roundtrip(const Tensor& img);

}  // namespace man
