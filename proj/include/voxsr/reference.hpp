#pragma once

#include <span>

#include "voxsr/registration.hpp"
#include "voxsr/types.hpp"

// Serial reference implementations. Written as plain loops, independent of
// the OpenMP kernels in the main library, so tests can use them as oracles
// and the benchmark can compare against them. Keep them dumb.
namespace voxsr::reference {

// Percentile clip + normalize via a full sort of the raw values.
Volume clip_normalize_sorted(const RawVolume& raw, double p_low, double p_high);

// Triple-loop 2x2x2 block mean with integer tie handling.
Volume downsample_mean2_loop(const Volume& v);

// Two-pass centered Pearson correlation over jointly masked voxels.
double ncc_loop(const Volume& fixed, const Volume& moving);

// Dense integer-shift NCC search (no pyramid), returns the argmax shift of
// moving relative to fixed in voxels.
Vec3i grid_search_shift(const Volume& fixed, const Volume& moving, int radius);

// Naive trilinear affine resampling.
Volume resample_affine_loop(const Volume& moving, const AffineTransform3D& transform,
                            const GridSpec& out_grid);

// Sort-based rank-mapping histogram match (source values must map through the
// reference order statistics); ties in the source share a rank.
std::vector<u16> rank_match(std::span<const u16> src, std::span<const u8> src_mask,
                            std::span<const u16> ref, std::span<const u8> ref_mask);

// Slice metrics as direct double loops.
double psnr_loop(std::span<const u16> pred, std::span<const u16> ref);
double ssim_loop(std::span<const u16> pred, std::span<const u16> ref, std::size_t height,
                 std::size_t width);
double nrmse_loop(std::span<const u16> pred, std::span<const u16> ref);
double tv_loop(std::span<const u16> slice, std::size_t height, std::size_t width);

// O(n^4) DFT radial power profile.
std::vector<double> radial_profile_dft(std::span<const u16> slice, std::size_t side,
                                       std::size_t num_rings);

// Whole-volume trilinear upsampling (single shot, no tiling).
Volume upsample_trilinear_loop(const Volume& lr, int scale);

// Dense ridge solve by Gaussian elimination with partial pivoting on the
// normal equations built from explicit rows; the bias column is appended and
// left unpenalized. Returns k^3 weights followed by the bias.
std::vector<double> ridge_direct(const std::vector<std::vector<double>>& rows,
                                 const std::vector<double>& targets, double lambda);

}  // namespace voxsr::reference
