#include "voxsr/store.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>
#include <zlib.h>

namespace voxsr {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr const char* kGroups[] = {"HR", "LR", "REG"};

bool known_group(const std::string& g) {
    for (const char* k : kGroups)
        if (g == k) return true;
    return false;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::storage, "store", "cannot create " + path.string());
    out << text;
    if (!out) fail(ErrorKind::storage, "store", "short write on " + path.string());
}

json parse_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::storage, "store", "cannot open " + path.string());
    json j;
    try {
            in >> j;
        } catch (const json::exception& e) {
            fail(ErrorKind::storage, "store", path.string() + ": " + e.what());
        }
        return j;
    }

    std::string chunk_name(std::size_t cz, std::size_t cy, std::size_t cx) {
        return std::to_string(cz) + "." + std::to_string(cy) + "." + std::to_string(cx);
    }

    }  // namespace

    PyramidStore::PyramidStore(std::filesystem::path root)
        : root_(std::move(root)), state_(std::make_unique<State>()) {}

    PyramidStore PyramidStore::create(const std::filesystem::path& root) {
        std::error_code ec;
        std::filesystem::create_directories(root, ec);
        if (ec) fail(ErrorKind::storage, "store", "cannot create " + root.string());
        write_text_file(root / ".zgroup", "{\"zarr_format\":2}");
        return PyramidStore(root);
    }

    PyramidStore PyramidStore::open(const std::filesystem::path& root) {
        if (!std::filesystem::is_directory(root))
            fail(ErrorKind::storage, "store", root.string() + " is not a store directory");
        return PyramidStore(root);
    }

    std::filesystem::path PyramidStore::level_dir(const std::string& group, int level) const {
        return root_ / group / std::to_string(level);
    }

    void PyramidStore::write_group(const std::string& group, const std::vector<Volume>& pyramid,
                                   Dims3 chunk_shape, bool overwrite, StoreCompression comp) {
        if (!known_group(group))
            fail(ErrorKind::invalid_input, "store", "group must be one of HR, LR, REG");
        if (pyramid.empty())
            fail(ErrorKind::invalid_input, "store", "empty pyramid");
        if (chunk_shape.z == 0 || chunk_shape.y == 0 || chunk_shape.x == 0)
            fail(ErrorKind::invalid_input, "store", "chunk shape must be positive");
        for (const Volume& v : pyramid)
            if (v.dims.total() == 0 || v.data.size() != v.dims.total())
                fail(ErrorKind::invalid_input, "store", "inconsistent pyramid level");

        const auto group_dir = root_ / group;
        if (std::filesystem::exists(group_dir)) {
            if (!overwrite)
                fail(ErrorKind::storage, "store", "group " + group + " already exists");
            std::filesystem::remove_all(group_dir);
        }
        std::filesystem::create_directories(group_dir);
        write_text_file(group_dir / ".zgroup", "{\"zarr_format\":2}");

        ordered_json attrs;
        ordered_json scale_entry;
        ordered_json multiscale;
        multiscale["version"] = "0.4";
        multiscale["axes"] = ordered_json::array();
        for (const char* axis : {"z", "y", "x"}) {
            ordered_json a;
            a["name"] = axis;
            a["type"] = "space";
            a["unit"] = "micrometer";
            multiscale["axes"].push_back(a);
        }
        multiscale["datasets"] = ordered_json::array();
        for (std::size_t lvl = 0; lvl < pyramid.size(); ++lvl) {
            ordered_json tf;
            tf["type"] = "scale";
            tf["scale"] = {pyramid[lvl].spacing.z, pyramid[lvl].spacing.y, pyramid[lvl].spacing.x};
            ordered_json ds;
            ds["path"] = std::to_string(lvl);
            ds["coordinateTransformations"] = ordered_json::array({tf});
            multiscale["datasets"].push_back(ds);
        }
        attrs["multiscales"] = ordered_json::array({multiscale});
        write_text_file(group_dir / ".zattrs", attrs.dump());

        for (std::size_t lvl = 0; lvl < pyramid.size(); ++lvl) {
            const Volume& v = pyramid[lvl];
            const auto dir = level_dir(group, static_cast<int>(lvl));
            std::filesystem::create_directories(dir);

            ordered_json za;
            za["shape"] = {v.dims.z, v.dims.y, v.dims.x};
            za["chunks"] = {chunk_shape.z, chunk_shape.y, chunk_shape.x};
            za["dtype"] = "<u2";
            za["order"] = "C";
            za["fill_value"] = 0;
            if (comp.deflate) {
                ordered_json c;
                c["id"] = "zlib";
                c["level"] = comp.level;
                za["compressor"] = c;
            } else {
                za["compressor"] = nullptr;
            }
            za["filters"] = nullptr;
            za["zarr_format"] = 2;
            write_text_file(dir / ".zarray", za.dump());

            const std::size_t ncz = num_chunks_along(v.dims.z, chunk_shape.z);
            const std::size_t ncy = num_chunks_along(v.dims.y, chunk_shape.y);
            const std::size_t ncx = num_chunks_along(v.dims.x, chunk_shape.x);
            const std::size_t chunk_voxels = chunk_shape.total();
            const i64 nchunks = static_cast<i64>(ncz * ncy * ncx);
            std::exception_ptr error;

    #pragma omp parallel
            {
                std::vector<u16> buf(chunk_voxels);
                std::vector<unsigned char> zbuf;
    #pragma omp for schedule(dynamic)
                for (i64 ci = 0; ci < nchunks; ++ci) {
                    try {
                    const std::size_t cz = static_cast<std::size_t>(ci) / (ncy * ncx);
                    const std::size_t cy = (static_cast<std::size_t>(ci) / ncx) % ncy;
                    const std::size_t cx = static_cast<std::size_t>(ci) % ncx;
                    std::fill(buf.begin(), buf.end(), 0);
                    const std::size_t z0 = cz * chunk_shape.z;
                    const std::size_t y0 = cy * chunk_shape.y;
                    const std::size_t x0 = cx * chunk_shape.x;
                    const std::size_t zn = std::min(chunk_shape.z, v.dims.z - z0);
                    const std::size_t yn = std::min(chunk_shape.y, v.dims.y - y0);
                    const std::size_t xn = std::min(chunk_shape.x, v.dims.x - x0);
                    for (std::size_t z = 0; z < zn; ++z)
                        for (std::size_t y = 0; y < yn; ++y) {
                            const u16* src = v.data.data() + v.index(z0 + z, y0 + y, x0);
                            u16* dst = buf.data() + (z * chunk_shape.y + y) * chunk_shape.x;
                            std::memcpy(dst, src, xn * sizeof(u16));
                        }

                    const auto final_path = dir / chunk_name(cz, cy, cx);
                    const auto tmp_path = dir / (chunk_name(cz, cy, cx) + ".tmp");
                    {
                        std::ofstream out(tmp_path, std::ios::binary);
                        if (!out) fail(ErrorKind::storage, "store", "cannot create " + tmp_path.string());
                        if (comp.deflate) {
                            uLongf zlen = compressBound(static_cast<uLong>(chunk_voxels * 2));
                            zbuf.resize(zlen);
                            int rc = compress2(zbuf.data(), &zlen,
                                               reinterpret_cast<const Bytef*>(buf.data()),
                                               static_cast<uLong>(chunk_voxels * 2), comp.level);
                            if (rc != Z_OK)
                                fail(ErrorKind::storage, "store", "deflate failed on " + final_path.string());
                            out.write(reinterpret_cast<const char*>(zbuf.data()),
                                      static_cast<std::streamsize>(zlen));
                        } else {
                            out.write(reinterpret_cast<const char*>(buf.data()),
                                      static_cast<std::streamsize>(chunk_voxels * 2));
                        }
                        if (!out) fail(ErrorKind::storage, "store", "short write on " + tmp_path.string());
                    }
                    std::filesystem::rename(tmp_path, final_path);
                } catch (...) {
#pragma omp critical(voxsr_store_error)
                    if (!error) error = std::current_exception();
                }
            }
        }
        if (error) std::rethrow_exception(error);
    }

    std::lock_guard<std::mutex> lock(state_->mutex);
    state_->meta_cache.clear();
    state_->chunk_cache.clear();
    state_->lru.clear();
}

bool PyramidStore::has_group(const std::string& group) const {
    return std::filesystem::exists(root_ / group / ".zattrs");
}

std::vector<std::string> PyramidStore::groups() const {
    std::vector<std::string> out;
    for (const char* g : kGroups)
        if (has_group(g)) out.emplace_back(g);
    return out;
}

int PyramidStore::num_levels(const std::string& group) const {
    int n = 0;
    while (std::filesystem::exists(level_dir(group, n) / ".zarray")) ++n;
    if (n == 0) fail(ErrorKind::storage, "store", "group " + group + " not found in " + root_.string());
    return n;
}

LevelMeta PyramidStore::read_zarray(const std::string& group, int level) const {
    const std::string key = group + "/" + std::to_string(level);
    {
        std::lock_guard<std::mutex> lock(state_->mutex);
        auto it = state_->meta_cache.find(key);
        if (it != state_->meta_cache.end()) return it->second;
    }

    json za = parse_json_file(level_dir(group, level) / ".zarray");
    LevelMeta meta;
    try {
            auto shape = za.at("shape");
            auto chunks = za.at("chunks");
            meta.shape = {shape[0].get<std::size_t>(), shape[1].get<std::size_t>(),
                          shape[2].get<std::size_t>()};
            meta.chunks = {chunks[0].get<std::size_t>(), chunks[1].get<std::size_t>(),
                           chunks[2].get<std::size_t>()};
            if (za.at("dtype").get<std::string>() != "<u2")
                fail(ErrorKind::storage, "store", "unsupported dtype in " + key);
            if (za.at("order").get<std::string>() != "C")
                fail(ErrorKind::storage, "store", "unsupported order in " + key);
            if (za.at("zarr_format").get<int>() != 2)
                fail(ErrorKind::storage, "store", "unsupported zarr_format in " + key);
            const auto& comp = za.at("compressor");
            if (!comp.is_null()) {
                if (comp.at("id").get<std::string>() != "zlib")
                    fail(ErrorKind::storage, "store", "unsupported compressor in " + key);
                meta.deflate = true;
                meta.deflate_level = comp.value("level", 6);
            }
        } catch (const json::exception& e) {
            fail(ErrorKind::storage, "store", key + "/.zarray: " + e.what());
        }

        // Spacing comes from the group's multiscales attributes.
        json attrs = parse_json_file(root_ / group / ".zattrs");
        try {
            auto scale =
                attrs.at("multiscales")[0].at("datasets")[level].at("coordinateTransformations")[0].at(
                    "scale");
            meta.spacing = {scale[0].get<double>(), scale[1].get<double>(), scale[2].get<double>()};
        } catch (const json::exception& e) {
            fail(ErrorKind::storage, "store", group + "/.zattrs: " + e.what());
        }

        std::lock_guard<std::mutex> lock(state_->mutex);
        state_->meta_cache.emplace(key, meta);
        return meta;
    }

    LevelMeta PyramidStore::level_meta(const std::string& group, int level) const {
        if (!std::filesystem::exists(level_dir(group, level) / ".zarray"))
            fail(ErrorKind::storage, "store",
                 "level " + group + "/" + std::to_string(level) + " not found");
        return read_zarray(group, level);
    }

    std::shared_ptr<std::vector<u16>> PyramidStore::load_chunk(const std::string& group, int level,
                                                               const LevelMeta& meta, std::size_t cz,
                                                               std::size_t cy, std::size_t cx) const {
        const std::string key =
            group + "/" + std::to_string(level) + "/" + chunk_name(cz, cy, cx);
        {
            std::lock_guard<std::mutex> lock(state_->mutex);
            auto it = state_->chunk_cache.find(key);
            if (it != state_->chunk_cache.end()) {
                ++state_->stats.cache_hits;
                state_->lru.splice(state_->lru.begin(), state_->lru, it->second.lru_it);
                return it->second.data;
            }
        }

        const auto path = root_ / key;
        std::ifstream in(path, std::ios::binary);
        if (!in)
            fail(ErrorKind::storage, "store", "missing or unreadable chunk " + key);
        in.seekg(0, std::ios::end);
        const std::size_t fsize = static_cast<std::size_t>(in.tellg());
        in.seekg(0);

        const std::size_t chunk_bytes = meta.chunks.total() * sizeof(u16);
        auto data = std::make_shared<std::vector<u16>>(meta.chunks.total());
        if (meta.deflate) {
            std::vector<unsigned char> zbuf(fsize);
            in.read(reinterpret_cast<char*>(zbuf.data()), static_cast<std::streamsize>(fsize));
            if (!in) fail(ErrorKind::storage, "store", "short read on chunk " + key);
            uLongf out_len = static_cast<uLongf>(chunk_bytes);
            int rc = uncompress(reinterpret_cast<Bytef*>(data->data()), &out_len, zbuf.data(),
                                static_cast<uLong>(fsize));
            if (rc != Z_OK || out_len != chunk_bytes)
                fail(ErrorKind::storage, "store", "corrupt chunk " + key);
        } else {
            if (fsize != chunk_bytes)
                fail(ErrorKind::storage, "store",
                     "corrupt chunk " + key + " (size " + std::to_string(fsize) + ", expected " +
                         std::to_string(chunk_bytes) + ")");
            in.read(reinterpret_cast<char*>(data->data()), static_cast<std::streamsize>(chunk_bytes));
            if (!in) fail(ErrorKind::storage, "store", "short read on chunk " + key);
        }

        std::lock_guard<std::mutex> lock(state_->mutex);
        ++state_->stats.chunks_read;
        if (state_->cache_capacity > 0) {
            auto existing = state_->chunk_cache.find(key);
            if (existing == state_->chunk_cache.end()) {
                state_->lru.push_front(key);
                state_->chunk_cache[key] = {data, state_->lru.begin()};
                while (state_->chunk_cache.size() > state_->cache_capacity) {
                    state_->chunk_cache.erase(state_->lru.back());
                    state_->lru.pop_back();
                }
            }
        }
        return data;
    }

    Volume PyramidStore::read_region(const std::string& group, int level, Vec3i origin,
                                     Dims3 shape) const {
        const LevelMeta meta = level_meta(group, level);

        Volume out;
        out.spacing = meta.spacing;
        out.dims = shape;
        if (shape.total() == 0) return out;

        if (origin.z < 0 || origin.y < 0 || origin.x < 0 ||
            static_cast<std::size_t>(origin.z) + shape.z > meta.shape.z ||
            static_cast<std::size_t>(origin.y) + shape.y > meta.shape.y ||
            static_cast<std::size_t>(origin.x) + shape.x > meta.shape.x)
            fail(ErrorKind::range, "store", "region outside array bounds");

        out.origin = {static_cast<double>(origin.z) * meta.spacing.z,
                      static_cast<double>(origin.y) * meta.spacing.y,
                      static_cast<double>(origin.x) * meta.spacing.x};
        out.data.resize(shape.total());

        const std::size_t oz = static_cast<std::size_t>(origin.z);
        const std::size_t oy = static_cast<std::size_t>(origin.y);
        const std::size_t ox = static_cast<std::size_t>(origin.x);
        const std::size_t cz0 = oz / meta.chunks.z, cz1 = (oz + shape.z - 1) / meta.chunks.z;
        const std::size_t cy0 = oy / meta.chunks.y, cy1 = (oy + shape.y - 1) / meta.chunks.y;
        const std::size_t cx0 = ox / meta.chunks.x, cx1 = (ox + shape.x - 1) / meta.chunks.x;

        for (std::size_t cz = cz0; cz <= cz1; ++cz)
            for (std::size_t cy = cy0; cy <= cy1; ++cy)
                for (std::size_t cx = cx0; cx <= cx1; ++cx) {
                    auto chunk = load_chunk(group, level, meta, cz, cy, cx);
                    // Intersection of the chunk with the requested region.
                    const std::size_t gz0 = std::max(oz, cz * meta.chunks.z);
                    const std::size_t gz1 = std::min(oz + shape.z, (cz + 1) * meta.chunks.z);
                    const std::size_t gy0 = std::max(oy, cy * meta.chunks.y);
                    const std::size_t gy1 = std::min(oy + shape.y, (cy + 1) * meta.chunks.y);
                    const std::size_t gx0 = std::max(ox, cx * meta.chunks.x);
                    const std::size_t gx1 = std::min(ox + shape.x, (cx + 1) * meta.chunks.x);
                    for (std::size_t z = gz0; z < gz1; ++z)
                        for (std::size_t y = gy0; y < gy1; ++y) {
                            const std::size_t src =
                                ((z - cz * meta.chunks.z) * meta.chunks.y + (y - cy * meta.chunks.y)) *
                                    meta.chunks.x +
                                (gx0 - cx * meta.chunks.x);
                            const std::size_t dst =
                                ((z - oz) * shape.y + (y - oy)) * shape.x + (gx0 - ox);
                            std::memcpy(out.data.data() + dst, chunk->data() + src,
                                        (gx1 - gx0) * sizeof(u16));
                        }
                }
        return out;
    }

    Volume PyramidStore::read_level(const std::string& group, int level) const {
        const LevelMeta meta = level_meta(group, level);
        return read_region(group, level, {0, 0, 0}, meta.shape);
    }

    PyramidStore::ReadStats PyramidStore::read_stats() const {
        std::lock_guard<std::mutex> lock(state_->mutex);
        return state_->stats;
    }

    void PyramidStore::reset_read_stats() {
        std::lock_guard<std::mutex> lock(state_->mutex);
        state_->stats = {};
    }

    void PyramidStore::set_cache_capacity(std::size_t chunks) {
        std::lock_guard<std::mutex> lock(state_->mutex);
        state_->cache_capacity = chunks;
        while (state_->chunk_cache.size() > state_->cache_capacity) {
            state_->chunk_cache.erase(state_->lru.back());
            state_->lru.pop_back();
        }
    }

    }  // namespace voxsr
