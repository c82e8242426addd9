#include "voxsr/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "voxsr/pyramid.hpp"
#include "voxsr/rng.hpp"
#include "voxsr/volume_ops.hpp"

namespace voxsr {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void check_dims_multiple8(Dims3 dims) {
    if (dims.total() == 0 || dims.z % 8 || dims.y % 8 || dims.x % 8)
        fail(ErrorKind::invalid_input, "phantom", "dims must be positive multiples of 8");
}

double smoothstep01(double s) {
    s = std::clamp(s, 0.0, 1.0);
    return s * s * (3.0 - 2.0 * s);
}

// 1D box smoothing pass ([1,1,1]/3 with edge clamping) along one axis.
void box_pass(std::vector<float>& v, Dims3 dims, int axis) {
    std::vector<float> src = v;
    const i64 D = static_cast<i64>(dims.z), H = static_cast<i64>(dims.y),
              W = static_cast<i64>(dims.x);
    const i64 stride = axis == 0 ? H * W : axis == 1 ? W : 1;
    const i64 len = axis == 0 ? D : axis == 1 ? H : W;
#pragma omp parallel for schedule(static)
    for (i64 z = 0; z < D; ++z)
        for (i64 y = 0; y < H; ++y)
            for (i64 x = 0; x < W; ++x) {
                const i64 idx = (z * H + y) * W + x;
                const i64 pos = axis == 0 ? z : axis == 1 ? y : x;
                const i64 lo = pos > 0 ? idx - stride : idx;
                const i64 hi = pos + 1 < len ? idx + stride : idx;
                v[static_cast<std::size_t>(idx)] =
                    static_cast<float>((static_cast<double>(src[static_cast<std::size_t>(lo)]) +
                                        static_cast<double>(src[static_cast<std::size_t>(idx)]) +
                                        static_cast<double>(src[static_cast<std::size_t>(hi)])) /
                                       3.0);
            }
}

Volume finish_phantom(RawVolume&& raw) {
    Volume v = clip_normalize(raw, 0.0, 100.0);
    return v;
}

Volume generate_tubes(const PhantomSpec& spec) {
    if (spec.radius_min < 1.0 || spec.radius_max < spec.radius_min)
        fail(ErrorKind::invalid_input, "phantom", "tube radii must be >= 1 voxel");
    if (spec.canal_density <= 0.0)
        fail(ErrorKind::invalid_input, "phantom", "canal density must be positive");

    const std::size_t D = spec.dims.z, H = spec.dims.y, W = spec.dims.x;
    SplitMix64 rng(hash_combine(spec.seed, 0x7462u));  // tubes stream

    struct Canal {
        double cy, cx, r, phy, phx, fy, fx, ay, ax;
    };
    const auto n_canals = static_cast<std::size_t>(std::max<long long>(
        1, std::llround(spec.canal_density * static_cast<double>(H * W) / 1000.0)));
    std::vector<Canal> canals(n_canals);
    for (Canal& c : canals) {
        c.cy = rng.uniform(0.0, static_cast<double>(H));
        c.cx = rng.uniform(0.0, static_cast<double>(W));
        c.r = rng.uniform(spec.radius_min, spec.radius_max);
        c.phy = rng.uniform(0.0, kTwoPi);
        c.phx = rng.uniform(0.0, kTwoPi);
        c.fy = rng.uniform(0.5, 2.0);
        c.fx = rng.uniform(0.5, 2.0);
        c.ay = rng.uniform(0.5, 1.0) * spec.drift_amplitude;
        c.ax = rng.uniform(0.5, 1.0) * spec.drift_amplitude;
    }

    struct Wave {
        double kz, ky, kx, ph;
    };
    std::array<Wave, 3> texture;
    for (Wave& w : texture) {
        w.kz = kTwoPi * rng.uniform(1.0, 4.0) / static_cast<double>(D);
        w.ky = kTwoPi * rng.uniform(1.0, 4.0) / static_cast<double>(H);
        w.kx = kTwoPi * rng.uniform(1.0, 4.0) / static_cast<double>(W);
        w.ph = rng.uniform(0.0, kTwoPi);
    }

    RawVolume raw;
    raw.dims = spec.dims;
    raw.spacing = {1.0, 1.0, 1.0};
    raw.data.resize(spec.dims.total());

    constexpr double lumen = 10.0;
    constexpr double edge = 1.5;  // soft edge width in voxels
#pragma omp parallel for schedule(static)
    for (i64 z = 0; z < static_cast<i64>(D); ++z) {
        std::vector<double> cyz(n_canals), cxz(n_canals);
        for (std::size_t k = 0; k < n_canals; ++k) {
            const double t = static_cast<double>(z) / static_cast<double>(D);
            cyz[k] = canals[k].cy + canals[k].ay * std::sin(kTwoPi * canals[k].fy * t + canals[k].phy);
            cxz[k] = canals[k].cx + canals[k].ax * std::sin(kTwoPi * canals[k].fx * t + canals[k].phx);
        }
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double factor = 1.0;
                for (std::size_t k = 0; k < n_canals; ++k) {
                    const double dy = static_cast<double>(y) - cyz[k];
                    const double dx = static_cast<double>(x) - cxz[k];
                    const double d2 = dy * dy + dx * dx;
                    const double reach = canals[k].r + 0.5 * edge;
                    if (d2 >= reach * reach) continue;
                    const double d = std::sqrt(d2);
                    factor = std::min(
                        factor, smoothstep01((d - canals[k].r + 0.5 * edge) / edge));
                }
                double tex = 0.0;
                for (const Wave& w : texture)
                    tex += std::cos(w.kz * static_cast<double>(z) + w.ky * static_cast<double>(y) +
                                    w.kx * static_cast<double>(x) + w.ph);
                const double matrix = 70.0 + 6.0 * tex;
                raw.data[(static_cast<std::size_t>(z) * H + y) * W + x] =
                    static_cast<float>(lumen + (matrix - lumen) * factor);
            }
    }

    Volume v = finish_phantom(std::move(raw));
    v.mask.assign(v.dims.total(), 1);
    return v;
}

Volume generate_trabecular(const PhantomSpec& spec) {
    if (spec.cosine_count < 1)
        fail(ErrorKind::invalid_input, "phantom", "cosine count must be positive");
    if (spec.smooth_passes < 0)
        fail(ErrorKind::invalid_input, "phantom", "smooth passes must be non-negative");

    const std::size_t D = spec.dims.z, H = spec.dims.y, W = spec.dims.x;
    SplitMix64 rng(hash_combine(spec.seed, 0x7261u));  // trabecular stream

    struct Wave {
        double kz, ky, kx, ph;
    };
    std::vector<Wave> waves(static_cast<std::size_t>(spec.cosine_count));
    for (Wave& w : waves) {
        double dz = rng.normal(), dy = rng.normal(), dx = rng.normal();
        const double norm = std::sqrt(dz * dz + dy * dy + dx * dx);
        if (norm > 0) {
            dz /= norm;
            dy /= norm;
            dx /= norm;
        }
        const double lambda = rng.uniform(8.0, 32.0);
        w.kz = kTwoPi / lambda * dz;
        w.ky = kTwoPi / lambda * dy;
        w.kx = kTwoPi / lambda * dx;
        w.ph = rng.uniform(0.0, kTwoPi);
    }

    // The K-cosine sum is approximately normal with variance K/2, so the
    // threshold is taken in units of that standard deviation.
    const double cut = spec.threshold * std::sqrt(static_cast<double>(spec.cosine_count) / 2.0);
    std::vector<float> field(spec.dims.total());
#pragma omp parallel for schedule(static)
    for (i64 z = 0; z < static_cast<i64>(D); ++z)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double sum = 0.0;
                for (const Wave& w : waves)
                    sum += std::cos(w.kz * static_cast<double>(z) + w.ky * static_cast<double>(y) +
                                    w.kx * static_cast<double>(x) + w.ph);
                field[(static_cast<std::size_t>(z) * H + y) * W + x] = sum > cut ? 90.0f : 20.0f;
            }

    for (int pass = 0; pass < spec.smooth_passes; ++pass)
        for (int axis = 0; axis < 3; ++axis) box_pass(field, spec.dims, axis);

    RawVolume raw;
    raw.dims = spec.dims;
    raw.spacing = {1.0, 1.0, 1.0};
    raw.data = std::move(field);
    Volume v = finish_phantom(std::move(raw));

    // Inscribed z-cylinder sample mask; voxels outside the sample are zero.
    v.mask.assign(v.dims.total(), 0);
    const double cy = (static_cast<double>(H) - 1.0) / 2.0;
    const double cx = (static_cast<double>(W) - 1.0) / 2.0;
    const double r = static_cast<double>(std::min(H, W)) / 2.0;
    for (std::size_t z = 0; z < D; ++z)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const double dy = static_cast<double>(y) - cy;
                const double dx = static_cast<double>(x) - cx;
                const std::size_t idx = (z * H + y) * W + x;
                if (dy * dy + dx * dx <= r * r)
                    v.mask[idx] = 1;
                else
                    v.data[idx] = 0;
            }
    return v;
}

void check_degrade_scale(const Volume& hr, int scale) {
    if (scale != 2 && scale != 4 && scale != 8)
        fail(ErrorKind::invalid_input, "degrade", "scale must be 2, 4 or 8");
    const auto s = static_cast<std::size_t>(scale);
    if (hr.dims.z % s || hr.dims.y % s || hr.dims.x % s)
        fail(ErrorKind::invalid_input, "degrade", "dims must be divisible by the scale");
}

// Separable Gaussian blur with edge clamping. The per-offset neighbor pair is
// added before scaling so the result is bit-identical under axis flips.
void gaussian_pass(std::vector<float>& v, Dims3 dims, int axis, double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    if (radius < 1) return;
    std::vector<double> kern(static_cast<std::size_t>(radius) + 1);
    double norm = 1.0;
    kern[0] = 1.0;
    for (int k = 1; k <= radius; ++k) {
        kern[static_cast<std::size_t>(k)] = std::exp(-(k * k) / (2.0 * sigma * sigma));
        norm += 2.0 * kern[static_cast<std::size_t>(k)];
    }
    for (double& w : kern) w /= norm;

    std::vector<float> src = v;
    const i64 D = static_cast<i64>(dims.z), H = static_cast<i64>(dims.y),
              W = static_cast<i64>(dims.x);
    const i64 stride = axis == 0 ? H * W : axis == 1 ? W : 1;
    const i64 len = axis == 0 ? D : axis == 1 ? H : W;
#pragma omp parallel for schedule(static)
    for (i64 z = 0; z < D; ++z)
        for (i64 y = 0; y < H; ++y)
            for (i64 x = 0; x < W; ++x) {
                const i64 idx = (z * H + y) * W + x;
                const i64 pos = axis == 0 ? z : axis == 1 ? y : x;
                double acc = kern[0] * static_cast<double>(src[static_cast<std::size_t>(idx)]);
                for (i64 k = 1; k <= radius; ++k) {
                    const i64 lo = std::max<i64>(0, pos - k) - pos;
                    const i64 hi = std::min<i64>(len - 1, pos + k) - pos;
                    const double pair =
                        static_cast<double>(src[static_cast<std::size_t>(idx + lo * stride)]) +
                        static_cast<double>(src[static_cast<std::size_t>(idx + hi * stride)]);
                    acc += kern[static_cast<std::size_t>(k)] * pair;
                }
                v[static_cast<std::size_t>(idx)] = static_cast<float>(acc);
            }
}

}  // namespace

Volume generate_phantom(const PhantomSpec& spec) {
    check_dims_multiple8(spec.dims);
    return spec.kind == PhantomKind::tubes ? generate_tubes(spec) : generate_trabecular(spec);
}

Volume degrade_downsample(const Volume& hr, int scale) {
    check_degrade_scale(hr, scale);
    Volume v = hr;
    for (int s = scale; s > 1; s /= 2) v = downsample_mean2(v);
    return v;
}

Volume degrade_realistic(const Volume& hr, const DegradeSpec& spec) {
    check_degrade_scale(hr, spec.scale);
    if (spec.blur_sigma < 0 || spec.gamma <= 0 || spec.noise_sigma < 0 ||
        std::fabs(spec.drift_amplitude) >= 1.0)
        fail(ErrorKind::invalid_input, "degrade", "bad degradation parameters");
    if (spec.is_null()) return degrade_downsample(hr, spec.scale);

    const auto s = static_cast<std::size_t>(spec.scale);
    std::vector<float> buf(hr.data.begin(), hr.data.end());
    if (spec.blur_sigma > 0)
        for (int axis = 0; axis < 3; ++axis) gaussian_pass(buf, hr.dims, axis, spec.blur_sigma);

    // Local s^3 block mean. Float inputs below 2^17 summed in double are exact,
    // so the block sum does not depend on traversal order.
    const Dims3 ld{hr.dims.z / s, hr.dims.y / s, hr.dims.x / s};
    std::vector<float> lr(ld.total());
    const double inv = 1.0 / static_cast<double>(s * s * s);
#pragma omp parallel for schedule(static)
    for (i64 z = 0; z < static_cast<i64>(ld.z); ++z)
        for (std::size_t y = 0; y < ld.y; ++y)
            for (std::size_t x = 0; x < ld.x; ++x) {
                double sum = 0.0;
                for (std::size_t bz = 0; bz < s; ++bz)
                    for (std::size_t by = 0; by < s; ++by)
                        for (std::size_t bx = 0; bx < s; ++bx)
                            sum += static_cast<double>(
                                buf[((static_cast<std::size_t>(z) * s + bz) * hr.dims.y +
                                     (y * s + by)) *
                                        hr.dims.x +
                                    (x * s + bx)]);
                lr[(static_cast<std::size_t>(z) * ld.y + y) * ld.x + x] =
                    static_cast<float>(sum * inv);
            }

    // Sub-voxel misalignment: sample the LR grid at v + shift with clamping.
    if (spec.shift.z != 0.0 || spec.shift.y != 0.0 || spec.shift.x != 0.0) {
        std::vector<float> shifted(ld.total());
        auto clamp_pair = [](double c, std::size_t n, std::size_t& lo, std::size_t& hi,
                             double& t) {
            if (c <= 0.0) {
                lo = hi = 0;
                t = 0.0;
            } else if (c >= static_cast<double>(n - 1)) {
                lo = hi = n - 1;
                t = 0.0;
            } else {
                lo = static_cast<std::size_t>(c);
                hi = lo + 1;
                t = c - static_cast<double>(lo);
            }
        };
#pragma omp parallel for schedule(static)
        for (i64 z = 0; z < static_cast<i64>(ld.z); ++z) {
            std::size_t z0, z1;
            double tz;
            clamp_pair(static_cast<double>(z) + spec.shift.z, ld.z, z0, z1, tz);
            for (std::size_t y = 0; y < ld.y; ++y) {
                std::size_t y0, y1;
                double ty;
                clamp_pair(static_cast<double>(y) + spec.shift.y, ld.y, y0, y1, ty);
                for (std::size_t x = 0; x < ld.x; ++x) {
                    std::size_t x0, x1;
                    double tx;
                    clamp_pair(static_cast<double>(x) + spec.shift.x, ld.x, x0, x1, tx);
                    auto at = [&](std::size_t a, std::size_t b, std::size_t c) {
                        return static_cast<double>(lr[(a * ld.y + b) * ld.x + c]);
                    };
                    shifted[(static_cast<std::size_t>(z) * ld.y + y) * ld.x + x] =
                        static_cast<float>((1 - tz) * (1 - ty) * (1 - tx) * at(z0, y0, x0) +
                                           (1 - tz) * (1 - ty) * tx * at(z0, y0, x1) +
                                           (1 - tz) * ty * (1 - tx) * at(z0, y1, x0) +
                                           (1 - tz) * ty * tx * at(z0, y1, x1) +
                                           tz * (1 - ty) * (1 - tx) * at(z1, y0, x0) +
                                           tz * (1 - ty) * tx * at(z1, y0, x1) +
                                           tz * ty * (1 - tx) * at(z1, y1, x0) +
                                           tz * ty * tx * at(z1, y1, x1));
                }
            }
        }
        lr = std::move(shifted);
    }

    // Contrast curve and gain, then a flip-symmetric per-slice brightness
    // drift centered on the volume midplane.
#pragma omp parallel for schedule(static)
    for (i64 z = 0; z < static_cast<i64>(ld.z); ++z) {
        const double centered =
            static_cast<double>(z) - (static_cast<double>(ld.z) - 1.0) / 2.0;
        const double drift =
            1.0 + spec.drift_amplitude *
                      std::cos(kTwoPi * spec.drift_cycles * centered / static_cast<double>(ld.z));
        for (std::size_t i = static_cast<std::size_t>(z) * ld.y * ld.x;
             i < (static_cast<std::size_t>(z) + 1) * ld.y * ld.x; ++i) {
            double v = static_cast<double>(lr[i]) / 65535.0;
            v = spec.gain * 65535.0 * std::pow(std::max(0.0, v), spec.gamma);
            lr[i] = static_cast<float>(v * drift);
        }
    }

    Volume out;
    out.dims = ld;
    out.spacing = {hr.spacing.z * spec.scale, hr.spacing.y * spec.scale,
                   hr.spacing.x * spec.scale};
    out.origin = {hr.origin.z + hr.spacing.z * (spec.scale - 1) / 2.0,
                  hr.origin.y + hr.spacing.y * (spec.scale - 1) / 2.0,
                  hr.origin.x + hr.spacing.x * (spec.scale - 1) / 2.0};
    out.data.resize(ld.total());

    SplitMix64 rng(hash_combine(spec.seed, 0x6E6Fu));  // noise stream
    if (spec.noise_sigma > 0)
        for (std::size_t i = 0; i < ld.total(); ++i)
            out.data[i] = quantize_u16(static_cast<double>(lr[i]) +
                                       spec.noise_sigma * rng.normal());
    else
        for (std::size_t i = 0; i < ld.total(); ++i)
            out.data[i] = quantize_u16(static_cast<double>(lr[i]));

    if (hr.has_mask()) {
        out.mask.assign(ld.total(), 0);
        const std::size_t half = s * s * s / 2;
#pragma omp parallel for schedule(static)
        for (i64 z = 0; z < static_cast<i64>(ld.z); ++z)
            for (std::size_t y = 0; y < ld.y; ++y)
                for (std::size_t x = 0; x < ld.x; ++x) {
                    std::size_t fg = 0;
                    for (std::size_t bz = 0; bz < s; ++bz)
                        for (std::size_t by = 0; by < s; ++by)
                            for (std::size_t bx = 0; bx < s; ++bx)
                                fg += hr.mask[((static_cast<std::size_t>(z) * s + bz) * hr.dims.y +
                                               (y * s + by)) *
                                                  hr.dims.x +
                                              (x * s + bx)];
                    if (fg >= half)
                        out.mask[(static_cast<std::size_t>(z) * ld.y + y) * ld.x + x] = 1;
                }
    }
    return out;
}

}  // namespace voxsr
