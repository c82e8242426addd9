#pragma once

#include <span>

#include "voxsr/types.hpp"

namespace voxsr {

// Value lookup table for matching the source CDF to the reference CDF:
// lut[v] = min{ w : CDF_ref(w) >= CDF_src(v) }. Histograms are exact 65536-bin
// counts over masked voxels; the comparison is done in integers, so there is
// no floating-point tie ambiguity.
std::vector<u16> cdf_match_lut(const u64* src_hist, const u64* ref_hist);

// Matches one slice. Masks may be empty (all foreground). Unmasked output
// voxels are 0. Fails with invalid input if either mask is empty of voxels.
void cdf_match_slice(std::span<const u16> src, std::span<const u8> src_mask,
                     std::span<const u16> ref, std::span<const u8> ref_mask,
                     std::span<u16> out);

// Slice-wise CDF matching of a registered LR volume to the downsampled HR
// volume on the same grid. Masks are intersected per slice; slices whose joint
// mask is empty are zeroed with a warning. The output mask is the
// intersection, and unmasked output voxels are exactly 0.
Volume match_volume(const Volume& reg_lr, const Volume& down_hr);

}  // namespace voxsr
