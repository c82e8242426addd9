#pragma once

#include <iosfwd>
#include <span>

#include "voxsr/types.hpp"

namespace voxsr {

// All slice metrics rescale u16 to [0,1] by dividing by 65535 first.

// 10*log10(1/MSE), capped at 100 dB.
double psnr_slice(std::span<const u16> pred, std::span<const u16> ref);

// Gaussian-weighted SSIM, 11x11 window, sigma 1.5, K1=0.01, K2=0.03, L=1,
// symmetric boundary padding, mean over all pixel positions. Slice dims must
// be >= 11.
double ssim_slice(std::span<const u16> pred, std::span<const u16> ref, std::size_t height,
                  std::size_t width);

// ||pred - ref||_2 / ||ref||_2. Fails on an all-zero reference.
double nrmse_slice(std::span<const u16> pred, std::span<const u16> ref);

// Anisotropic total variation: mean absolute forward difference over both
// in-plane axes.
double tv_slice(std::span<const u16> slice, std::size_t height, std::size_t width);

// Relative power per radial frequency ring of unit width: profile[k] is the
// power at integer-rounded radius k divided by total power. Square slices
// only. num_rings == 0 means floor(side/2); passing a count large enough to
// cover the spectrum corners makes the profile sum to exactly 1.
std::vector<double> radial_power_profile(std::span<const u16> slice, std::size_t side,
                                         std::size_t num_rings = 0);

enum class EvalMode { every_slice, every_sth };

struct MetricsReport {
    std::vector<std::size_t> slice_index;
    std::vector<double> psnr_db, ssim, nrmse, tv;
    double mean_psnr = 0, mean_ssim = 0, mean_nrmse = 0, mean_tv = 0;
    int scale = 1;
    EvalMode mode = EvalMode::every_slice;
};

// Per-z-slice evaluation. All-zero reference slices are excluded; every_sth
// evaluates slices 0, s, 2s, ... Fails if no slice remains.
MetricsReport evaluate_volume(const Volume& pred, const Volume& ref, int scale, EvalMode mode);

// "19.08 / .6779 / .2746" style row: PSNR to two decimals, SSIM and NRMSE to
// four with the leading zero dropped.
std::string format_metrics_row(double psnr_db, double ssim, double nrmse);

void write_report_csv(const MetricsReport& report, std::ostream& os);
std::string report_to_json(const MetricsReport& report);

}  // namespace voxsr
