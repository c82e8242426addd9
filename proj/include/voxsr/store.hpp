#pragma once

#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>

#include "voxsr/types.hpp"

namespace voxsr {

// Chunked multiscale u16 store, zarr v2 compatible with OME-NGFF 0.4 group
// attributes:
//
//   root/{HR|LR|REG}/.zattrs            multiscales metadata (axes z/y/x, micrometer)
//   root/{group}/{level}/.zarray        zarr v2 array metadata, dtype "<u2"
//   root/{group}/{level}/{cz}.{cy}.{cx} raw little-endian chunk, C order
//
// Chunks on disk always have the full chunk shape; edge chunks are
// zero-padded. Writes go through a temp file plus rename so readers never
// observe a partial chunk.

struct StoreCompression {
    bool deflate = false;  // zarr "zlib" codec when set
    int level = 6;
};

struct LevelMeta {
    Dims3 shape;
    Dims3 chunks;
    Spacing3 spacing;
    bool deflate = false;
    int deflate_level = 6;
};

class PyramidStore {
public:
    static PyramidStore create(const std::filesystem::path& root);
    static PyramidStore open(const std::filesystem::path& root);

    const std::filesystem::path& root() const { return root_; }

    // Writes a full multiscale group. Fails with a storage error if the group
    // exists and overwrite is false.
    void write_group(const std::string& group, const std::vector<Volume>& pyramid,
                     Dims3 chunk_shape, bool overwrite = false, StoreCompression comp = {});

    bool has_group(const std::string& group) const;
    std::vector<std::string> groups() const;
    int num_levels(const std::string& group) const;
    LevelMeta level_meta(const std::string& group, int level) const;

    Volume read_level(const std::string& group, int level) const;

    // Region read in voxel coordinates of the level. The region must lie
    // within the array bounds; a zero-size shape yields an empty volume. Only
    // chunks intersecting the region are touched.
    Volume read_region(const std::string& group, int level, Vec3i origin, Dims3 shape) const;

    struct ReadStats {
        u64 chunks_read = 0;  // chunk files actually read from disk
        u64 cache_hits = 0;
    };
    ReadStats read_stats() const;
    void reset_read_stats();

    // Chunk cache capacity in chunks; 0 disables caching.
    void set_cache_capacity(std::size_t chunks);

    static constexpr Dims3 kDefaultHrChunk{160, 160, 160};
    static constexpr Dims3 kDefaultLrChunk{96, 96, 96};

private:
    explicit PyramidStore(std::filesystem::path root);

    struct CacheEntry {
        std::shared_ptr<std::vector<u16>> data;
        std::list<std::string>::iterator lru_it;
    };
    struct State {
        std::mutex mutex;
        std::map<std::string, LevelMeta> meta_cache;
        std::map<std::string, CacheEntry> chunk_cache;
        std::list<std::string> lru;
        std::size_t cache_capacity = 16;
        ReadStats stats;
    };

    std::filesystem::path level_dir(const std::string& group, int level) const;
    LevelMeta read_zarray(const std::string& group, int level) const;
    std::shared_ptr<std::vector<u16>> load_chunk(const std::string& group, int level,
                                                 const LevelMeta& meta, std::size_t cz,
                                                 std::size_t cy, std::size_t cx) const;

    std::filesystem::path root_;
    std::unique_ptr<State> state_;
};

// Chunk count along one axis: ceil(extent / chunk).
inline std::size_t num_chunks_along(std::size_t extent, std::size_t chunk) {
    return (extent + chunk - 1) / chunk;
}

}  // namespace voxsr
