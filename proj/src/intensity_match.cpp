#include "voxsr/intensity_match.hpp"

#include <array>
#include <cstring>
#include <vector>

#include "voxsr/log.hpp"

namespace voxsr {

namespace {
constexpr std::size_t kBins = 65536;
}

std::vector<u16> cdf_match_lut(const u64* src_hist, const u64* ref_hist) {
    u64 n_src = 0, n_ref = 0;
    for (std::size_t v = 0; v < kBins; ++v) {
        n_src += src_hist[v];
        n_ref += ref_hist[v];
    }
    if (n_src == 0) fail(ErrorKind::invalid_input, "cdf_match", "empty source mask");
    if (n_ref == 0) fail(ErrorKind::invalid_input, "cdf_match", "empty reference mask");

    // lut[v] = min{ w : cum_ref[w]/n_ref >= cum_src[v]/n_src }, compared as
    // cum_ref[w] * n_src >= cum_src[v] * n_ref in 128-bit integers. Both
    // cumulative sums are non-decreasing, so a single forward pointer w works.
    std::vector<u16> lut(kBins);
    u64 cum_src = 0, cum_ref = ref_hist[0];
    std::size_t w = 0;
    for (std::size_t v = 0; v < kBins; ++v) {
        cum_src += src_hist[v];
        const unsigned __int128 need = static_cast<unsigned __int128>(cum_src) * n_ref;
        while (static_cast<unsigned __int128>(cum_ref) * n_src < need && w + 1 < kBins) {
            ++w;
            cum_ref += ref_hist[w];
        }
        lut[v] = static_cast<u16>(w);
    }
    return lut;
}

void cdf_match_slice(std::span<const u16> src, std::span<const u8> src_mask,
                     std::span<const u16> ref, std::span<const u8> ref_mask,
                     std::span<u16> out) {
    if (src.size() != out.size() || ref.size() == 0 || src.size() == 0)
        fail(ErrorKind::invalid_input, "cdf_match", "slice size mismatch");
    if (!src_mask.empty() && src_mask.size() != src.size())
        fail(ErrorKind::invalid_input, "cdf_match", "source mask size mismatch");
    if (!ref_mask.empty() && ref_mask.size() != ref.size())
        fail(ErrorKind::invalid_input, "cdf_match", "reference mask size mismatch");

    std::vector<u64> src_hist(kBins, 0), ref_hist(kBins, 0);
    for (std::size_t i = 0; i < src.size(); ++i)
        if (src_mask.empty() || src_mask[i]) ++src_hist[src[i]];
    for (std::size_t i = 0; i < ref.size(); ++i)
        if (ref_mask.empty() || ref_mask[i]) ++ref_hist[ref[i]];

    const std::vector<u16> lut = cdf_match_lut(src_hist.data(), ref_hist.data());
    for (std::size_t i = 0; i < src.size(); ++i)
        out[i] = (src_mask.empty() || src_mask[i]) ? lut[src[i]] : 0;
}

Volume match_volume(const Volume& reg_lr, const Volume& down_hr) {
    if (!(reg_lr.dims == down_hr.dims))
        fail(ErrorKind::invalid_input, "match", "volumes must share dims");
    if (reg_lr.dims.total() == 0)
        fail(ErrorKind::invalid_input, "match", "empty volume");

    Volume out;
    out.dims = reg_lr.dims;
    out.spacing = reg_lr.spacing;
    out.origin = reg_lr.origin;
    out.data.assign(out.dims.total(), 0);
    out.mask.assign(out.dims.total(), 0);

    const std::size_t slice = reg_lr.dims.y * reg_lr.dims.x;
    const i64 nz = static_cast<i64>(reg_lr.dims.z);
    std::vector<u8> empty_slice(static_cast<std::size_t>(nz), 0);

#pragma omp parallel for schedule(static)
    for (i64 z = 0; z < nz; ++z) {
        const std::size_t base = static_cast<std::size_t>(z) * slice;
        std::vector<u64> src_hist(kBins, 0), ref_hist(kBins, 0);
        u64 count = 0;
        for (std::size_t i = base; i < base + slice; ++i) {
            if (!reg_lr.mask_at(i) || !down_hr.mask_at(i)) continue;
            out.mask[i] = 1;
            ++src_hist[reg_lr.data[i]];
            ++ref_hist[down_hr.data[i]];
            ++count;
        }
        if (count == 0) {
            // The joint mask is empty, so there is no distribution to match;
            // the whole slice stays unmasked and therefore zero.
            empty_slice[static_cast<std::size_t>(z)] = 1;
            continue;
        }
        const std::vector<u16> lut = cdf_match_lut(src_hist.data(), ref_hist.data());
        for (std::size_t i = base; i < base + slice; ++i)
            if (out.mask[i]) out.data[i] = lut[reg_lr.data[i]];
    }

    std::size_t n_empty = 0;
    i64 first = -1;
    for (i64 z = 0; z < nz; ++z)
        if (empty_slice[static_cast<std::size_t>(z)]) {
            ++n_empty;
            if (first < 0) first = z;
        }
    if (n_empty > 0)
        log_warn("match: %zu slice(s) with empty joint mask (first z=%lld) left unmasked and zero",
                 n_empty, static_cast<long long>(first));
    return out;
}

}  // namespace voxsr
