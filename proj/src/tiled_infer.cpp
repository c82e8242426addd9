#include "voxsr/tiled_infer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace voxsr {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

double hr_origin_axis(double lr_origin, double lr_spacing, int scale) {
    return lr_origin + lr_spacing * (0.5 / scale - 0.5);
}

// Clamped linear interpolation index pair along one axis. The continuous
// coordinate for HR voxel j is (j + 0.5)/s - 0.5.
void clamp_lerp(double c, std::size_t n, std::size_t& lo, std::size_t& hi, double& frac) {
    if (c <= 0.0) {
        lo = hi = 0;
        frac = 0.0;
        return;
    }
    if (c >= static_cast<double>(n - 1)) {
        lo = hi = n - 1;
        frac = 0.0;
        return;
    }
    lo = static_cast<std::size_t>(c);
    hi = lo + 1;
    frac = c - static_cast<double>(lo);
}

std::size_t clamp_index(i64 i, std::size_t n) {
    if (i < 0) return 0;
    if (i >= static_cast<i64>(n)) return n - 1;
    return static_cast<std::size_t>(i);
}

// Catmull-Rom weights for fractional position t in [0,1).
std::array<double, 4> catmull_rom(double t) {
    const double t2 = t * t, t3 = t2 * t;
    return {(-t3 + 2.0 * t2 - t) * 0.5, (3.0 * t3 - 5.0 * t2 + 2.0) * 0.5,
            (-3.0 * t3 + 4.0 * t2 + t) * 0.5, (t3 - t2) * 0.5};
}

Volume extract_tile(const Volume& lr, std::size_t oz, std::size_t oy, std::size_t ox,
                    Dims3 tile) {
    Volume t;
    t.dims = tile;
    t.spacing = lr.spacing;
    t.origin = {lr.origin.z + static_cast<double>(oz) * lr.spacing.z,
                lr.origin.y + static_cast<double>(oy) * lr.spacing.y,
                lr.origin.x + static_cast<double>(ox) * lr.spacing.x};
    t.data.resize(tile.total());
    for (std::size_t z = 0; z < tile.z; ++z)
        for (std::size_t y = 0; y < tile.y; ++y)
            std::memcpy(t.data.data() + t.index(z, y, 0),
                        lr.data.data() + lr.index(oz + z, oy + y, ox),
                        tile.x * sizeof(u16));
    return t;
}

}  // namespace

std::vector<double> hann_weights(std::size_t len) {
    if (len == 0) fail(ErrorKind::invalid_input, "tiled_apply", "window length must be positive");
    std::vector<double> w(len);
    for (std::size_t i = 0; i < len; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * (static_cast<double>(i) + 0.5) /
                                    static_cast<double>(len));
    return w;
}

Volume upsample_volume(const Volume& lr, int scale, UpsampleMode mode) {
    if (scale < 1) fail(ErrorKind::invalid_input, "upsample", "scale must be >= 1");
    if (lr.dims.total() == 0) fail(ErrorKind::invalid_input, "upsample", "empty volume");

    Volume out;
    out.dims = {lr.dims.z * static_cast<std::size_t>(scale),
                lr.dims.y * static_cast<std::size_t>(scale),
                lr.dims.x * static_cast<std::size_t>(scale)};
    out.spacing = {lr.spacing.z / scale, lr.spacing.y / scale, lr.spacing.x / scale};
    out.origin = {hr_origin_axis(lr.origin.z, lr.spacing.z, scale),
                  hr_origin_axis(lr.origin.y, lr.spacing.y, scale),
                  hr_origin_axis(lr.origin.x, lr.spacing.x, scale)};
    out.data.resize(out.dims.total());

#pragma omp parallel for schedule(static)
    for (i64 z = 0; z < static_cast<i64>(out.dims.z); ++z) {
        const double cz = (static_cast<double>(z) + 0.5) / scale - 0.5;
        for (std::size_t y = 0; y < out.dims.y; ++y) {
            const double cy = (static_cast<double>(y) + 0.5) / scale - 0.5;
            for (std::size_t x = 0; x < out.dims.x; ++x) {
                const double cx = (static_cast<double>(x) + 0.5) / scale - 0.5;
                double acc = 0.0;
                switch (mode) {
                    case UpsampleMode::nearest: {
                        const std::size_t iz = clamp_index(std::llround(cz), lr.dims.z);
                        const std::size_t iy = clamp_index(std::llround(cy), lr.dims.y);
                        const std::size_t ix = clamp_index(std::llround(cx), lr.dims.x);
                        acc = lr.at(iz, iy, ix);
                        break;
                    }
                    case UpsampleMode::trilinear: {
                        std::size_t z0, z1, y0, y1, x0, x1;
                        double dz, dy, dx;
                        clamp_lerp(cz, lr.dims.z, z0, z1, dz);
                        clamp_lerp(cy, lr.dims.y, y0, y1, dy);
                        clamp_lerp(cx, lr.dims.x, x0, x1, dx);
                        acc = (1 - dz) * (1 - dy) * (1 - dx) * lr.at(z0, y0, x0) +
                              (1 - dz) * (1 - dy) * dx * lr.at(z0, y0, x1) +
                              (1 - dz) * dy * (1 - dx) * lr.at(z0, y1, x0) +
                              (1 - dz) * dy * dx * lr.at(z0, y1, x1) +
                              dz * (1 - dy) * (1 - dx) * lr.at(z1, y0, x0) +
                              dz * (1 - dy) * dx * lr.at(z1, y0, x1) +
                              dz * dy * (1 - dx) * lr.at(z1, y1, x0) +
                              dz * dy * dx * lr.at(z1, y1, x1);
                        break;
                    }
                    case UpsampleMode::tricubic: {
                        const double fz = std::floor(cz), fy = std::floor(cy), fx = std::floor(cx);
                        const auto wz = catmull_rom(cz - fz);
                        const auto wy = catmull_rom(cy - fy);
                        const auto wx = catmull_rom(cx - fx);
                        for (int a = 0; a < 4; ++a) {
                            const std::size_t iz =
                                clamp_index(static_cast<i64>(fz) + a - 1, lr.dims.z);
                            for (int b = 0; b < 4; ++b) {
                                const std::size_t iy =
                                    clamp_index(static_cast<i64>(fy) + b - 1, lr.dims.y);
                                double row = 0.0;
                                for (int c = 0; c < 4; ++c) {
                                    const std::size_t ix =
                                        clamp_index(static_cast<i64>(fx) + c - 1, lr.dims.x);
                                    row += wx[c] * lr.at(iz, iy, ix);
                                }
                                acc += wz[a] * wy[b] * row;
                            }
                        }
                        break;
                    }
                }
                out.at(static_cast<std::size_t>(z), y, x) = quantize_u16(acc);
            }
        }
    }
    return out;
}

UpsampleOperator::UpsampleOperator(UpsampleMode mode, int scale, Dims3 tile_dims)
    : mode_(mode), scale_(scale), tile_(tile_dims) {
    if (scale < 1) fail(ErrorKind::config, "tiled_apply", "scale must be >= 1");
    if (tile_.total() == 0) fail(ErrorKind::config, "tiled_apply", "empty tile dims");
}

Volume UpsampleOperator::apply(const Volume& lr_tile, const Vec3i&) const {
    if (!(lr_tile.dims == tile_))
        fail(ErrorKind::contract, "tiled_apply", "tile dims do not match the operator");
    return upsample_volume(lr_tile, scale_, mode_);
}

std::vector<std::size_t> tile_origins(std::size_t dim, std::size_t tile, std::size_t stride) {
    if (tile > dim) fail(ErrorKind::config, "tiled_apply", "tile exceeds volume dims");
    if (stride == 0) fail(ErrorKind::config, "tiled_apply", "stride must be positive");
    std::vector<std::size_t> origins;
    for (std::size_t o = 0;; o += stride) {
        if (o + tile >= dim) {
            origins.push_back(dim - tile);
            break;
        }
        origins.push_back(o);
    }
    return origins;
}

Volume tiled_apply(const Volume& lr, const SrOperator& op, std::size_t overlap) {
    const Dims3 tile = op.lr_tile_dims();
    const int s = op.scale();
    if (s < 1) fail(ErrorKind::config, "tiled_apply", "operator scale must be >= 1");
    if (tile.z > lr.dims.z || tile.y > lr.dims.y || tile.x > lr.dims.x)
        fail(ErrorKind::config, "tiled_apply", "tile exceeds volume dims");
    const std::size_t min_tile = std::min({tile.z, tile.y, tile.x});
    if (2 * overlap >= min_tile)
        fail(ErrorKind::config, "tiled_apply", "overlap must be below half the tile length");

    const auto oz = tile_origins(lr.dims.z, tile.z, tile.z - 2 * overlap);
    const auto oy = tile_origins(lr.dims.y, tile.y, tile.y - 2 * overlap);
    const auto ox = tile_origins(lr.dims.x, tile.x, tile.x - 2 * overlap);

    const std::size_t us = static_cast<std::size_t>(s);
    const Dims3 hr_tile{tile.z * us, tile.y * us, tile.x * us};
    const Dims3 hr_dims{lr.dims.z * us, lr.dims.y * us, lr.dims.x * us};
    const auto wz = hann_weights(hr_tile.z);
    const auto wy = hann_weights(hr_tile.y);
    const auto wx = hann_weights(hr_tile.x);

    // The covering tiles form a Cartesian product per axis and the 3D window
    // is separable, so the per-voxel weight total factors into three 1D sums.
    std::vector<double> tz(hr_dims.z, 0.0), ty(hr_dims.y, 0.0), tx(hr_dims.x, 0.0);
    for (std::size_t o : oz)
        for (std::size_t i = 0; i < hr_tile.z; ++i) tz[o * us + i] += wz[i];
    for (std::size_t o : oy)
        for (std::size_t i = 0; i < hr_tile.y; ++i) ty[o * us + i] += wy[i];
    for (std::size_t o : ox)
        for (std::size_t i = 0; i < hr_tile.x; ++i) tx[o * us + i] += wx[i];

    struct Job {
        std::size_t z, y, x;
    };
    std::vector<Job> jobs;
    jobs.reserve(oz.size() * oy.size() * ox.size());
    for (std::size_t a : oz)
        for (std::size_t b : oy)
            for (std::size_t c : ox) jobs.push_back({a, b, c});

    std::vector<double> vsum(hr_dims.total(), 0.0);
    const std::size_t pred_bytes = hr_tile.total() * sizeof(u16) + tile.total() * sizeof(u16);
    const std::size_t batch = std::max<std::size_t>(1, (std::size_t{256} << 20) / pred_bytes);

    for (std::size_t b0 = 0; b0 < jobs.size(); b0 += batch) {
        const std::size_t b1 = std::min(jobs.size(), b0 + batch);
        std::vector<Volume> preds(b1 - b0);

        std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
        for (i64 j = static_cast<i64>(b0); j < static_cast<i64>(b1); ++j) {
            try {
                const Job& job = jobs[static_cast<std::size_t>(j)];
                Volume t = extract_tile(lr, job.z, job.y, job.x, tile);
                Volume pred = op.apply(t, {static_cast<i64>(job.z), static_cast<i64>(job.y),
                                           static_cast<i64>(job.x)});
                if (!(pred.dims == hr_tile))
                    fail(ErrorKind::contract, "tiled_apply",
                         "operator returned wrong dims for the tile at origin " +
                             std::to_string(job.z) + "," + std::to_string(job.y) + "," +
                             std::to_string(job.x));
                preds[static_cast<std::size_t>(j) - b0] = std::move(pred);
            } catch (...) {
#pragma omp critical(voxsr_tiled_error)
                if (!error) error = std::current_exception();
            }
        }
        if (error) std::rethrow_exception(error);

        // Accumulate by output z partition: each output voxel is touched by
        // exactly one thread and tiles are visited in job order, so sums are
        // reproducible for any thread count.
#pragma omp parallel for schedule(static)
        for (i64 hz = 0; hz < static_cast<i64>(hr_dims.z); ++hz) {
            for (std::size_t j = b0; j < b1; ++j) {
                const Job& job = jobs[j];
                const i64 z0 = static_cast<i64>(job.z * us);
                if (hz < z0 || hz >= z0 + static_cast<i64>(hr_tile.z)) continue;
                const Volume& pred = preds[j - b0];
                const std::size_t pz = static_cast<std::size_t>(hz - z0);
                const double wzz = wz[pz];
                for (std::size_t py = 0; py < hr_tile.y; ++py) {
                    const double wzy = wzz * wy[py];
                    const std::size_t gy = job.y * us + py;
                    const std::size_t out_base =
                        (static_cast<std::size_t>(hz) * hr_dims.y + gy) * hr_dims.x + job.x * us;
                    const std::size_t pred_base = (pz * hr_tile.y + py) * hr_tile.x;
                    for (std::size_t px = 0; px < hr_tile.x; ++px)
                        vsum[out_base + px] += wzy * wx[px] * pred.data[pred_base + px];
                }
            }
        }
    }

    Volume out;
    out.dims = hr_dims;
    out.spacing = {lr.spacing.z / s, lr.spacing.y / s, lr.spacing.x / s};
    out.origin = {hr_origin_axis(lr.origin.z, lr.spacing.z, s),
                  hr_origin_axis(lr.origin.y, lr.spacing.y, s),
                  hr_origin_axis(lr.origin.x, lr.spacing.x, s)};
    out.data.resize(hr_dims.total());
#pragma omp parallel for schedule(static)
    for (i64 z = 0; z < static_cast<i64>(hr_dims.z); ++z) {
        const double wzz = tz[static_cast<std::size_t>(z)];
        for (std::size_t y = 0; y < hr_dims.y; ++y) {
            const double wzy = wzz * ty[y];
            const std::size_t base = (static_cast<std::size_t>(z) * hr_dims.y + y) * hr_dims.x;
            for (std::size_t x = 0; x < hr_dims.x; ++x)
                out.data[base + x] = quantize_u16(vsum[base + x] / (wzy * tx[x]));
        }
    }
    return out;
}

void dump_tiles(const Volume& lr, const SrOperator& op, std::size_t overlap,
                const std::filesystem::path& dir) {
    const Dims3 tile = op.lr_tile_dims();
    const int s = op.scale();
    if (tile.z > lr.dims.z || tile.y > lr.dims.y || tile.x > lr.dims.x)
        fail(ErrorKind::config, "tiled_apply", "tile exceeds volume dims");
    const std::size_t min_tile = std::min({tile.z, tile.y, tile.x});
    if (2 * overlap >= min_tile)
        fail(ErrorKind::config, "tiled_apply", "overlap must be below half the tile length");

    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::storage, "tiled_apply", "cannot create " + dir.string());

    const auto oz = tile_origins(lr.dims.z, tile.z, tile.z - 2 * overlap);
    const auto oy = tile_origins(lr.dims.y, tile.y, tile.y - 2 * overlap);
    const auto ox = tile_origins(lr.dims.x, tile.x, tile.x - 2 * overlap);

    nlohmann::ordered_json manifest;
    manifest["scale"] = s;
    manifest["tile_lr"] = {tile.z, tile.y, tile.x};
    manifest["overlap"] = overlap;
    manifest["entries"] = nlohmann::ordered_json::array();

    for (std::size_t a : oz)
        for (std::size_t b : oy)
            for (std::size_t c : ox) {
                Volume t = extract_tile(lr, a, b, c, tile);
                Volume pred = op.apply(
                    t, {static_cast<i64>(a), static_cast<i64>(b), static_cast<i64>(c)});
                const std::string name = "tile_" + std::to_string(a) + "_" + std::to_string(b) +
                                         "_" + std::to_string(c) + ".u16";
                std::ofstream out(dir / name, std::ios::binary);
                if (!out) fail(ErrorKind::storage, "tiled_apply", "cannot create " + name);
                out.write(reinterpret_cast<const char*>(pred.data.data()),
                          static_cast<std::streamsize>(pred.data.size() * sizeof(u16)));
                if (!out) fail(ErrorKind::storage, "tiled_apply", "short write to " + name);

                nlohmann::ordered_json entry;
                entry["origin"] = {a, b, c};
                entry["dims"] = {pred.dims.z, pred.dims.y, pred.dims.x};
                entry["file"] = name;
                manifest["entries"].push_back(std::move(entry));
            }

    std::ofstream mf(dir / "manifest.json");
    if (!mf) fail(ErrorKind::storage, "tiled_apply", "cannot create manifest.json");
    mf << manifest.dump(2) << "\n";
}

ReplayOperator::ReplayOperator(const std::filesystem::path& dir) : dir_(dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) fail(ErrorKind::storage, "replay", "cannot open " + (dir / "manifest.json").string());
    nlohmann::json j;
    try {
        in >> j;
        scale_ = j.at("scale").get<int>();
        tile_ = {j.at("tile_lr")[0].get<std::size_t>(), j.at("tile_lr")[1].get<std::size_t>(),
                 j.at("tile_lr")[2].get<std::size_t>()};
        overlap_ = j.at("overlap").get<std::size_t>();
        for (const auto& e : j.at("entries")) {
            std::array<i64, 3> key{e.at("origin")[0].get<i64>(), e.at("origin")[1].get<i64>(),
                                   e.at("origin")[2].get<i64>()};
            Entry entry;
            entry.dims = {e.at("dims")[0].get<std::size_t>(), e.at("dims")[1].get<std::size_t>(),
                          e.at("dims")[2].get<std::size_t>()};
            entry.file = e.at("file").get<std::string>();
            entries_[key] = std::move(entry);
        }
    } catch (const nlohmann::json::exception& ex) {
        fail(ErrorKind::invalid_input, "replay", std::string("bad manifest: ") + ex.what());
    }
    if (scale_ < 1 || tile_.total() == 0)
        fail(ErrorKind::invalid_input, "replay", "bad manifest: non-positive scale or tile");
}

Volume ReplayOperator::apply(const Volume& lr_tile, const Vec3i& lr_origin) const {
    if (!(lr_tile.dims == tile_))
        fail(ErrorKind::contract, "replay", "tile dims do not match the manifest");
    const auto it = entries_.find({lr_origin.z, lr_origin.y, lr_origin.x});
    if (it == entries_.end())
        fail(ErrorKind::storage, "replay",
             "no recorded tile at origin " + std::to_string(lr_origin.z) + "," +
                 std::to_string(lr_origin.y) + "," + std::to_string(lr_origin.x));
    const Entry& e = it->second;
    const Dims3 want{tile_.z * static_cast<std::size_t>(scale_),
                     tile_.y * static_cast<std::size_t>(scale_),
                     tile_.x * static_cast<std::size_t>(scale_)};
    if (!(e.dims == want))
        fail(ErrorKind::contract, "replay", "manifest dims mismatch for " + e.file);

    std::ifstream in(dir_ / e.file, std::ios::binary);
    if (!in) fail(ErrorKind::storage, "replay", "cannot open " + e.file);
    Volume out;
    out.dims = e.dims;
    out.spacing = {lr_tile.spacing.z / scale_, lr_tile.spacing.y / scale_,
                   lr_tile.spacing.x / scale_};
    out.data.resize(e.dims.total());
    in.read(reinterpret_cast<char*>(out.data.data()),
            static_cast<std::streamsize>(out.data.size() * sizeof(u16)));
    if (in.gcount() != static_cast<std::streamsize>(out.data.size() * sizeof(u16)) ||
        in.peek() != std::char_traits<char>::eof())
        fail(ErrorKind::storage, "replay", "blob size mismatch in " + e.file);
    return out;
}

}  // namespace voxsr
