#include "voxsr/volume_ops.hpp"

#include <algorithm>
#include <cmath>

#include "voxsr/log.hpp"

namespace voxsr {

namespace {

const char* error_kind_names[] = {
    "invalid-input", "range", "storage", "config", "contract-violation",
    "registration-failure", "singular",
};

// Linear interpolation between order statistics at h = (n-1) * p / 100.
// Selects the two needed order statistics with nth_element.
double percentile(std::vector<float>& scratch, double p) {
    const std::size_t n = scratch.size();
    if (n == 1) return scratch[0];
    double h = static_cast<double>(n - 1) * p / 100.0;
    std::size_t i0 = static_cast<std::size_t>(h);
    if (i0 >= n - 1) i0 = n - 2;
    double frac = h - static_cast<double>(i0);
    std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(i0),
                     scratch.end());
    double lo = scratch[i0];
    double hi = *std::min_element(scratch.begin() + static_cast<std::ptrdiff_t>(i0) + 1,
                                  scratch.end());
    return lo + frac * (hi - lo);
}

}  // namespace

const char* error_kind_name(ErrorKind kind) {
    return error_kind_names[static_cast<int>(kind)];
}

Volume clip_normalize(const RawVolume& raw, double p_low, double p_high) {
    if (raw.data.empty() || raw.dims.total() != raw.data.size())
        fail(ErrorKind::invalid_input, "clip_normalize", "empty or inconsistent raw volume");
    if (!(p_low >= 0.0 && p_low < p_high && p_high <= 100.0))
        fail(ErrorKind::invalid_input, "clip_normalize", "percentiles must satisfy 0 <= p_low < p_high <= 100");
    for (float f : raw.data)
        if (!std::isfinite(f))
            fail(ErrorKind::invalid_input, "clip_normalize", "non-finite input voxel");

    std::vector<float> scratch = raw.data;
    double q_low = percentile(scratch, p_low);
    double q_high = percentile(scratch, p_high);

    Volume out;
    out.dims = raw.dims;
    out.spacing = raw.spacing;
    out.data.assign(raw.data.size(), 0);
    if (q_low == q_high) {
        log_warn("clip_normalize: degenerate clip range (q=%g); output is all zero", q_low);
        return out;
    }

    const double range = q_high - q_low;
    const i64 n = static_cast<i64>(raw.data.size());
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < n; ++i) {
        double v = raw.data[static_cast<std::size_t>(i)];
        if (v < q_low) v = q_low;
        if (v > q_high) v = q_high;
        out.data[static_cast<std::size_t>(i)] = quantize_u16((v - q_low) * 65535.0 / range);
    }
    return out;
}

void threshold_mask(Volume& v, u16 threshold) {
    v.mask.resize(v.data.size());
    const i64 n = static_cast<i64>(v.data.size());
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < n; ++i)
        v.mask[static_cast<std::size_t>(i)] = v.data[static_cast<std::size_t>(i)] >= threshold ? 1 : 0;
}

SliceSplit split_slices(std::size_t depth, double test_fraction, bool test_at_end,
                        std::size_t chunk_align) {
    if (depth < 2)
        fail(ErrorKind::invalid_input, "split_slices", "need at least two slices");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        fail(ErrorKind::invalid_input, "split_slices", "test_fraction must be in (0, 1)");

    std::size_t len = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(static_cast<double>(depth) * test_fraction)));
    if (chunk_align > 0) {
        long long m = std::llround(static_cast<double>(len) / static_cast<double>(chunk_align));
        if (m < 1) m = 1;
        len = static_cast<std::size_t>(m) * chunk_align;
        if (len > depth - 1)
            fail(ErrorKind::invalid_input, "split_slices",
                 "chunk-aligned test range does not fit the volume");
    }
    if (len > depth - 1) len = depth - 1;

    SliceSplit s;
    if (test_at_end) {
        s.train_begin = 0;
        s.train_end = depth - len;
        s.test_begin = depth - len;
        s.test_end = depth;
    } else {
        s.test_begin = 0;
        s.test_end = len;
        s.train_begin = len;
        s.train_end = depth;
    }
    return s;
}

}  // namespace voxsr
