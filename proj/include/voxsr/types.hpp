#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxsr {

using u8 = std::uint8_t;
using u16 = std::uint16_t;
using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i64 = std::int64_t;

static_assert(std::endian::native == std::endian::little,
              "chunk blobs are written via memcpy and assume a little-endian host");

// Axis order is (z, y, x) everywhere; z is the slice axis.
struct Dims3 {
    std::size_t z = 0, y = 0, x = 0;
    std::size_t total() const { return z * y * x; }
    bool operator==(const Dims3&) const = default;
};

struct Spacing3 {
    double z = 1.0, y = 1.0, x = 1.0;  // micrometers per voxel
    bool operator==(const Spacing3&) const = default;
};

struct Vec3i {
    i64 z = 0, y = 0, x = 0;
    bool operator==(const Vec3i&) const = default;
};

struct Vec3d {
    double z = 0.0, y = 0.0, x = 0.0;
};

enum class ErrorKind {
    invalid_input,
    range,
    storage,
    config,
    contract,
    registration,
    singular,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string stage, std::string detail)
        : std::runtime_error(stage + ": " + detail),
          kind_(kind), stage_(std::move(stage)), detail_(std::move(detail)) {}

    ErrorKind kind() const { return kind_; }
    const std::string& stage() const { return stage_; }
    const std::string& detail() const { return detail_; }

private:
    ErrorKind kind_;
    std::string stage_;
    std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, std::string stage, std::string detail) {
    throw Error(kind, std::move(stage), std::move(detail));
}

// Dense u16 volume, z-major C order. The mask is optional: empty means
// every voxel is foreground.
struct Volume {
    Dims3 dims;
    Spacing3 spacing;
    Vec3d origin;  // physical coordinate of the center of voxel (0,0,0), micrometers
    std::vector<u16> data;
    std::vector<u8> mask;

    std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
        return (z * dims.y + y) * dims.x + x;
    }
    u16 at(std::size_t z, std::size_t y, std::size_t x) const { return data[index(z, y, x)]; }
    u16& at(std::size_t z, std::size_t y, std::size_t x) { return data[index(z, y, x)]; }
    bool has_mask() const { return !mask.empty(); }
    bool mask_at(std::size_t idx) const { return mask.empty() || mask[idx] != 0; }
    bool empty() const { return data.empty(); }

    static Volume filled(Dims3 dims, Spacing3 spacing, u16 value) {
        Volume v;
        v.dims = dims;
        v.spacing = spacing;
        v.data.assign(dims.total(), value);
        return v;
    }
};

// Pre-normalization volume as read from disk; float carries u8/u16/f32 sources.
struct RawVolume {
    Dims3 dims;
    Spacing3 spacing;
    std::vector<float> data;
};

// Round half to even, independent of the FPU rounding mode.
inline double round_half_even(double v) {
    double f = std::floor(v);
    double diff = v - f;
    if (diff > 0.5) return f + 1.0;
    if (diff < 0.5) return f;
    return (std::fmod(f, 2.0) == 0.0) ? f : f + 1.0;
}

inline u16 quantize_u16(double v) {
    double r = round_half_even(v);
    if (r <= 0.0) return 0;
    if (r >= 65535.0) return 65535;
    return static_cast<u16>(r);
}

// Symmetric boundary reflection: index -1 maps to 0, index n to n-1, and so on
// ("half-sample" reflection, every source index used exactly once per bounce).
inline std::size_t reflect_index(i64 i, i64 n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -1 - i;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return static_cast<std::size_t>(i);
}

}  // namespace voxsr
