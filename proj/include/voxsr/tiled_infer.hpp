#pragma once

#include <filesystem>
#include <map>
#include <memory>

#include "voxsr/types.hpp"

namespace voxsr {

// Half-sample-offset Hann window, strictly positive on [0, len).
std::vector<double> hann_weights(std::size_t len);

// A deterministic map from an LR tile to an HR tile of scale times its size.
// The tile origin (LR voxel coordinates in the source volume) is provided so
// replay-style operators can key on position.
class SrOperator {
public:
    virtual ~SrOperator() = default;
    virtual int scale() const = 0;
    virtual Dims3 lr_tile_dims() const = 0;
    virtual Volume apply(const Volume& lr_tile, const Vec3i& lr_origin) const = 0;
};

enum class UpsampleMode { nearest, trilinear, tricubic };

class UpsampleOperator : public SrOperator {
public:
    UpsampleOperator(UpsampleMode mode, int scale, Dims3 tile_dims);
    int scale() const override { return scale_; }
    Dims3 lr_tile_dims() const override { return tile_; }
    Volume apply(const Volume& lr_tile, const Vec3i& lr_origin) const override;

private:
    UpsampleMode mode_;
    int scale_;
    Dims3 tile_;
};

// Whole-volume interpolation upsampling; also the kernel behind
// UpsampleOperator. HR voxel j samples the LR grid at (j + 0.5)/s - 0.5 with
// edge clamping.
Volume upsample_volume(const Volume& lr, int scale, UpsampleMode mode);

// Overlap-blended tiled application: tile origins advance by
// tile - 2*overlap per axis with the last origin clamped to dim - tile, each
// HR tile is weighted by a separable 3D Hann window, and the weighted average
// is accumulated in doubles before rounding half to even.
Volume tiled_apply(const Volume& lr, const SrOperator& op, std::size_t overlap = 4);

// Tile origins along one axis; dim must be >= tile.
std::vector<std::size_t> tile_origins(std::size_t dim, std::size_t tile, std::size_t stride);

// Writes every tile prediction of `op` plus a manifest.json so the run can be
// replayed bit-identically later.
void dump_tiles(const Volume& lr, const SrOperator& op, std::size_t overlap,
                const std::filesystem::path& dir);

// Serves tiles recorded by dump_tiles. Unknown origins, wrong blob sizes and
// wrong dims are storage/contract errors naming the tile.
class ReplayOperator : public SrOperator {
public:
    explicit ReplayOperator(const std::filesystem::path& dir);
    int scale() const override { return scale_; }
    Dims3 lr_tile_dims() const override { return tile_; }
    std::size_t overlap() const { return overlap_; }
    Volume apply(const Volume& lr_tile, const Vec3i& lr_origin) const override;

private:
    std::filesystem::path dir_;
    int scale_ = 1;
    Dims3 tile_;
    std::size_t overlap_ = 4;
    struct Entry {
        Dims3 dims;
        std::string file;
    };
    std::map<std::array<i64, 3>, Entry> entries_;
};

}  // namespace voxsr
