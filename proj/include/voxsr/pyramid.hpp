#pragma once

#include "voxsr/types.hpp"

namespace voxsr {

// 2x local-mean downsampling: non-overlapping 2x2x2 block means, rounded half
// to even. Odd trailing voxels are cropped. Spacing doubles. Masks downsample
// by majority vote (>= 4 of 8).
Volume downsample_mean2(const Volume& v);

// Levels [1x, 2x, 4x, 8x] truncated at max_factor; element 0 is a copy of the
// input. max_factor must be one of {1, 2, 4, 8} and every input dimension must
// be >= max_factor.
std::vector<Volume> build_pyramid(const Volume& v, int max_factor);

}  // namespace voxsr
