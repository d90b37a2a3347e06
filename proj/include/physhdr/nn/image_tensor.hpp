#pragma once

#include <vector>

#include "physhdr/image.hpp"
#include "physhdr/nn/tensor.hpp"

namespace physhdr::nn {

/// [1, 3, H, W] copy of an interleaved image.
Tensor to_tensor(const HdrImage& img);
/// [N, 3, H, W]; every image must share the first one's dims.
Tensor to_tensor(const std::vector<HdrImage>& batch);
/// 8-bit values scaled to [0, 1].
Tensor to_tensor(const LdrImage& img);
Tensor to_tensor(const std::vector<LdrImage>& batch);

/// Sample n of a [N, 3, H, W] tensor.
HdrImage to_image(const Tensor& t, int n = 0);

} // namespace physhdr::nn
