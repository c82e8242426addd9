#pragma once

#include "voxsr/types.hpp"

namespace voxsr {

// Percentile clip followed by an affine map onto [0, 65535], rounding half to
// even. Percentiles use linear interpolation between order statistics. A
// degenerate clip range produces an all-zero volume and logs a warning.
Volume clip_normalize(const RawVolume& raw, double p_low = 0.1, double p_high = 99.9);

// Attaches mask = (intensity >= threshold).
void threshold_mask(Volume& v, u16 threshold);

struct SliceSplit {
    std::size_t train_begin = 0, train_end = 0;
    std::size_t test_begin = 0, test_end = 0;
    std::size_t train_count() const { return train_end - train_begin; }
    std::size_t test_count() const { return test_end - test_begin; }
};

// Contiguous train/test split along z. Test slices come from the volume end
// unless test_at_end is false. chunk_align > 0 rounds the test length to the
// nearest positive multiple of chunk_align.
SliceSplit split_slices(std::size_t depth, double test_fraction, bool test_at_end = true,
                        std::size_t chunk_align = 0);

}  // namespace voxsr
