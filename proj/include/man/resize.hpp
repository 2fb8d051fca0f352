#pragma once

#include "man/tensor.hpp"

namespace man {

// Keys cubic-convolution kernel with a = -0.5.
double cubic_kernel(double x);

// Cubic resampling with reference imresize semantics: output sample
// centers aligned via (i+0.5)/scale - 0.5, replicated borders, weights
// normalized to unit sum, and the kernel stretched by the scale factor
// when downscaling with antialias enabled. Output is clamped to [0,1].
// Works per channel on (n,c,h,w) tensors.
Tensor bicubic_resize(const Tensor& img, i64 out_h, i64 out_w, bool antialias);

}  // namespace man
