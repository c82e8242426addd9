#pragma once

#include <filesystem>

#include "voxsr/types.hpp"

namespace voxsr {

// Sidecar schema: {"dims": [z,y,x], "spacing_um": [z,y,x], "dtype": "u8"|"u16"|"f32"}
struct Sidecar {
    Dims3 dims;
    Spacing3 spacing_um;
    std::string dtype;
};

Sidecar read_sidecar(const std::filesystem::path& path);

// Flat little-endian binary volume described by a JSON sidecar.
RawVolume read_raw_volume(const std::filesystem::path& raw_path,
                          const std::filesystem::path& sidecar_path);

// Directory of 16-bit PGM (P5) slices, one file per z, lexicographic order.
// An optional sidecar.json in the directory supplies the voxel spacing.
RawVolume read_slice_stack(const std::filesystem::path& dir);

// Single 16-bit grayscale PGM slice (maxval 65535, big-endian samples).
void write_pgm16(const std::filesystem::path& path, const u16* data, std::size_t height,
                 std::size_t width);
std::vector<u16> read_pgm16(const std::filesystem::path& path, std::size_t& height,
                            std::size_t& width);

}  // namespace voxsr
