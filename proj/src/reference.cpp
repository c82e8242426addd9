#include "voxsr/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace voxsr::reference {

Volume clip_normalize_sorted(const RawVolume& raw, double p_low, double p_high) {
    std::vector<float> sorted = raw.data;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();

    auto quantile = [&](double p) -> double {
        if (n == 1) return sorted[0];
        double h = static_cast<double>(n - 1) * p / 100.0;
        std::size_t i0 = static_cast<std::size_t>(h);
        if (i0 >= n - 1) i0 = n - 2;
        double frac = h - static_cast<double>(i0);
        return sorted[i0] + frac * (static_cast<double>(sorted[i0 + 1]) - sorted[i0]);
    };
    const double q_low = quantile(p_low);
    const double q_high = quantile(p_high);

    Volume out;
    out.dims = raw.dims;
    out.spacing = raw.spacing;
    out.data.assign(raw.data.size(), 0);
    if (q_low == q_high) return out;
    for (std::size_t i = 0; i < raw.data.size(); ++i) {
        double v = raw.data[i];
        if (v < q_low) v = q_low;
        if (v > q_high) v = q_high;
        out.data[i] = quantize_u16((v - q_low) * 65535.0 / (q_high - q_low));
    }
    return out;
}

Volume downsample_mean2_loop(const Volume& v) {
    Volume out;
    out.dims = {v.dims.z / 2, v.dims.y / 2, v.dims.x / 2};
    out.spacing = {v.spacing.z * 2, v.spacing.y * 2, v.spacing.x * 2};
    out.origin = {v.origin.z + v.spacing.z * 0.5, v.origin.y + v.spacing.y * 0.5,
                  v.origin.x + v.spacing.x * 0.5};
    out.data.resize(out.dims.total());
    if (v.has_mask()) out.mask.resize(out.dims.total());
    for (std::size_t oz = 0; oz < out.dims.z; ++oz)
        for (std::size_t oy = 0; oy < out.dims.y; ++oy)
            for (std::size_t ox = 0; ox < out.dims.x; ++ox) {
                u32 sum = 0;
                int fg = 0;
                for (std::size_t dz = 0; dz < 2; ++dz)
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            std::size_t idx = v.index(2 * oz + dz, 2 * oy + dy, 2 * ox + dx);
                            sum += v.data[idx];
                            if (v.has_mask() && v.mask[idx]) ++fg;
                        }
                // Integer rounding: mean = sum / 8, ties (remainder 4) to even.
                u32 q = sum >> 3;
                u32 rem = sum & 7;
                u32 r = q;
                if (rem > 4)
                    r = q + 1;
                else if (rem == 4)
                    r = q + (q & 1);
                std::size_t oidx = out.index(oz, oy, ox);
                out.data[oidx] = static_cast<u16>(r);
                if (v.has_mask()) out.mask[oidx] = fg >= 4 ? 1 : 0;
            }
    return out;
}

double ncc_loop(const Volume& fixed, const Volume& moving) {
    std::vector<double> f, m;
    for (std::size_t i = 0; i < fixed.data.size(); ++i) {
        if (fixed.mask_at(i) && moving.mask_at(i)) {
            f.push_back(fixed.data[i]);
            m.push_back(moving.data[i]);
        }
    }
    const std::size_t n = f.size();
    if (n < 2) fail(ErrorKind::invalid_input, "ncc", "fewer than two jointly masked voxels");
    double mf = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(n);
    double mm = std::accumulate(m.begin(), m.end(), 0.0) / static_cast<double>(n);
    double sff = 0, smm = 0, sfm = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double df = f[i] - mf, dm = m[i] - mm;
        sff += df * df;
        smm += dm * dm;
        sfm += df * dm;
    }
    if (sff <= 0.0 || smm <= 0.0) return 0.0;
    return sfm / std::sqrt(sff * smm);
}

Vec3i grid_search_shift(const Volume& fixed, const Volume& moving, int radius) {
    double best = -2.0;
    Vec3i best_shift{0, 0, 0};
    const i64 D = static_cast<i64>(fixed.dims.z);
    const i64 H = static_cast<i64>(fixed.dims.y);
    const i64 W = static_cast<i64>(fixed.dims.x);
    for (i64 sz = -radius; sz <= radius; ++sz)
        for (i64 sy = -radius; sy <= radius; ++sy)
            for (i64 sx = -radius; sx <= radius; ++sx) {
                std::vector<double> f, m;
                for (i64 z = std::max<i64>(0, -sz); z < std::min<i64>(D, static_cast<i64>(moving.dims.z) - sz); ++z)
                    for (i64 y = std::max<i64>(0, -sy); y < std::min<i64>(H, static_cast<i64>(moving.dims.y) - sy); ++y)
                        for (i64 x = std::max<i64>(0, -sx); x < std::min<i64>(W, static_cast<i64>(moving.dims.x) - sx); ++x) {
                            std::size_t fi = fixed.index(static_cast<std::size_t>(z),
                                                         static_cast<std::size_t>(y),
                                                         static_cast<std::size_t>(x));
                            std::size_t mi = moving.index(static_cast<std::size_t>(z + sz),
                                                          static_cast<std::size_t>(y + sy),
                                                          static_cast<std::size_t>(x + sx));
                            if (fixed.mask_at(fi) && moving.mask_at(mi)) {
                                f.push_back(fixed.data[fi]);
                                m.push_back(moving.data[mi]);
                            }
                        }
                if (f.size() < 2) continue;
                double mf = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(f.size());
                double mm = std::accumulate(m.begin(), m.end(), 0.0) / static_cast<double>(m.size());
                double sff = 0, smm = 0, sfm = 0;
                for (std::size_t i = 0; i < f.size(); ++i) {
                    double df = f[i] - mf, dm = m[i] - mm;
                    sff += df * df;
                    smm += dm * dm;
                    sfm += df * dm;
                }
                double r = (sff > 0 && smm > 0) ? sfm / std::sqrt(sff * smm) : 0.0;
                if (r > best) {
                    best = r;
                    best_shift = {sz, sy, sx};
                }
            }
    return best_shift;
}

Volume resample_affine_loop(const Volume& moving, const AffineTransform3D& transform,
                            const GridSpec& out_grid) {
    Volume out;
    out.dims = out_grid.dims;
    out.spacing = out_grid.spacing;
    out.origin = out_grid.origin;
    out.data.assign(out.dims.total(), 0);
    out.mask.assign(out.dims.total(), 0);

    const i64 D = static_cast<i64>(moving.dims.z);
    const i64 H = static_cast<i64>(moving.dims.y);
    const i64 W = static_cast<i64>(moving.dims.x);

    for (std::size_t z = 0; z < out.dims.z; ++z)
        for (std::size_t y = 0; y < out.dims.y; ++y)
            for (std::size_t x = 0; x < out.dims.x; ++x) {
                Vec3d p{out_grid.origin.z + static_cast<double>(z) * out_grid.spacing.z,
                        out_grid.origin.y + static_cast<double>(y) * out_grid.spacing.y,
                        out_grid.origin.x + static_cast<double>(x) * out_grid.spacing.x};
                Vec3d q = transform.apply(p);
                double cz = (q.z - moving.origin.z) / moving.spacing.z;
                double cy = (q.y - moving.origin.y) / moving.spacing.y;
                double cx = (q.x - moving.origin.x) / moving.spacing.x;

                double fz = std::floor(cz), fy = std::floor(cy), fx = std::floor(cx);
                i64 z0 = static_cast<i64>(fz), y0 = static_cast<i64>(fy), x0 = static_cast<i64>(fx);
                double dz = cz - fz, dy = cy - fy, dx = cx - fx;

                bool ok = true;
                double acc = 0.0;
                for (int bz = 0; bz < 2 && ok; ++bz)
                    for (int by = 0; by < 2 && ok; ++by)
                        for (int bx = 0; bx < 2 && ok; ++bx) {
                            double w = (bz ? dz : 1.0 - dz) * (by ? dy : 1.0 - dy) *
                                       (bx ? dx : 1.0 - dx);
                            if (w == 0.0) continue;
                            i64 zz = z0 + bz, yy = y0 + by, xx = x0 + bx;
                            if (zz < 0 || zz >= D || yy < 0 || yy >= H || xx < 0 || xx >= W) {
                                ok = false;
                                break;
                            }
                            std::size_t idx = moving.index(static_cast<std::size_t>(zz),
                                                           static_cast<std::size_t>(yy),
                                                           static_cast<std::size_t>(xx));
                            if (!moving.mask_at(idx)) {
                                ok = false;
                                break;
                            }
                            acc += w * static_cast<double>(moving.data[idx]);
                        }
                std::size_t oidx = out.index(z, y, x);
                if (ok) {
                    out.data[oidx] = quantize_u16(acc);
                    out.mask[oidx] = 1;
                }
            }
    return out;
}

std::vector<u16> rank_match(std::span<const u16> src, std::span<const u8> src_mask,
                            std::span<const u16> ref, std::span<const u8> ref_mask) {
    auto masked_at = [](std::span<const u8> m, std::size_t i) { return m.empty() || m[i] != 0; };

    std::vector<std::size_t> src_idx;
    for (std::size_t i = 0; i < src.size(); ++i)
        if (masked_at(src_mask, i)) src_idx.push_back(i);
    std::vector<u16> ref_sorted;
    for (std::size_t i = 0; i < ref.size(); ++i)
        if (masked_at(ref_mask, i)) ref_sorted.push_back(ref[i]);
    std::sort(ref_sorted.begin(), ref_sorted.end());

    std::sort(src_idx.begin(), src_idx.end(),
              [&](std::size_t a, std::size_t b) { return src[a] < src[b]; });

    const u64 n_src = src_idx.size();
    const u64 n_ref = ref_sorted.size();
    std::vector<u16> out(src.size(), 0);
    std::size_t i = 0;
    while (i < src_idx.size()) {
        std::size_t j = i;
        while (j + 1 < src_idx.size() && src[src_idx[j + 1]] == src[src_idx[i]]) ++j;
        // All ties share the rank of the last equal element (CDF counts <= v).
        u64 rank = static_cast<u64>(j) + 1;
        u64 target = (rank * n_ref + n_src - 1) / n_src;  // ceil(rank * n_ref / n_src)
        u16 w = ref_sorted[static_cast<std::size_t>(target - 1)];
        for (std::size_t t = i; t <= j; ++t) out[src_idx[t]] = w;
        i = j + 1;
    }
    return out;
}

double psnr_loop(std::span<const u16> pred, std::span<const u16> ref) {
    double se = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = (static_cast<double>(pred[i]) - static_cast<double>(ref[i])) / 65535.0;
        se += d * d;
    }
    double mse = se / static_cast<double>(pred.size());
    if (mse == 0.0) return 100.0;
    double v = 10.0 * std::log10(1.0 / mse);
    return v > 100.0 ? 100.0 : v;
}

namespace {

// Index reflection for symmetric padding ("abc" pads left to "a|abc").
std::size_t reflect_sym(i64 i, i64 n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -1 - i;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return static_cast<std::size_t>(i);
}

}  // namespace

double ssim_loop(std::span<const u16> pred, std::span<const u16> ref, std::size_t height,
                 std::size_t width) {
    constexpr int R = 5;  // 11x11 window
    double w[11][11];
    double wsum = 0.0;
    for (int i = -R; i <= R; ++i)
        for (int j = -R; j <= R; ++j) {
            w[i + R][j + R] = std::exp(-(i * i + j * j) / (2.0 * 1.5 * 1.5));
            wsum += w[i + R][j + R];
        }
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) w[i][j] /= wsum;

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    for (i64 y = 0; y < static_cast<i64>(height); ++y)
        for (i64 x = 0; x < static_cast<i64>(width); ++x) {
            double m1 = 0, m2 = 0, s1 = 0, s2 = 0, s12 = 0;
            for (int i = -R; i <= R; ++i)
                for (int j = -R; j <= R; ++j) {
                    std::size_t yy = reflect_sym(y + i, static_cast<i64>(height));
                    std::size_t xx = reflect_sym(x + j, static_cast<i64>(width));
                    double a = pred[yy * width + xx] / 65535.0;
                    double b = ref[yy * width + xx] / 65535.0;
                    double wij = w[i + R][j + R];
                    m1 += wij * a;
                    m2 += wij * b;
                    s1 += wij * a * a;
                    s2 += wij * b * b;
                    s12 += wij * a * b;
                }
            s1 -= m1 * m1;
            s2 -= m2 * m2;
            s12 -= m1 * m2;
            total += ((2 * m1 * m2 + c1) * (2 * s12 + c2)) /
                     ((m1 * m1 + m2 * m2 + c1) * (s1 + s2 + c2));
        }
    return total / static_cast<double>(height * width);
}

double nrmse_loop(std::span<const u16> pred, std::span<const u16> ref) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double p = pred[i] / 65535.0, r = ref[i] / 65535.0;
        num += (p - r) * (p - r);
        den += r * r;
    }
    if (den == 0.0) fail(ErrorKind::invalid_input, "nrmse", "all-zero reference slice");
    return std::sqrt(num) / std::sqrt(den);
}

double tv_loop(std::span<const u16> slice, std::size_t height, std::size_t width) {
    double sum = 0.0;
    std::size_t terms = 0;
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x + 1 < width; ++x) {
            sum += std::fabs(slice[y * width + x + 1] / 65535.0 - slice[y * width + x] / 65535.0);
            ++terms;
        }
    for (std::size_t y = 0; y + 1 < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            sum += std::fabs(slice[(y + 1) * width + x] / 65535.0 - slice[y * width + x] / 65535.0);
            ++terms;
        }
    return sum / static_cast<double>(terms);
}

std::vector<double> radial_profile_dft(std::span<const u16> slice, std::size_t side,
                                       std::size_t num_rings) {
    if (num_rings == 0) num_rings = side / 2;
    const i64 n = static_cast<i64>(side);
    const double two_pi = 6.283185307179586476925286766559;
    std::vector<double> profile(num_rings, 0.0);
    double total = 0.0;
    for (i64 u = 0; u < n; ++u)
        for (i64 v = 0; v < n; ++v) {
            double re = 0.0, im = 0.0;
            for (i64 y = 0; y < n; ++y)
                for (i64 x = 0; x < n; ++x) {
                    double ang = -two_pi *
                                 (static_cast<double>(u * y) / static_cast<double>(n) +
                                  static_cast<double>(v * x) / static_cast<double>(n));
                    double val = slice[static_cast<std::size_t>(y) * side +
                                       static_cast<std::size_t>(x)] /
                                 65535.0;
                    re += val * std::cos(ang);
                    im += val * std::sin(ang);
                }
            double power = re * re + im * im;
            total += power;
            i64 fu = u <= n / 2 ? u : u - n;
            i64 fv = v <= n / 2 ? v : v - n;
            auto ring = static_cast<std::size_t>(
                std::lround(std::sqrt(static_cast<double>(fu * fu + fv * fv))));
            if (ring < num_rings) profile[ring] += power;
        }
    if (total > 0.0)
        for (double& p : profile) p /= total;
    return profile;
}

Volume upsample_trilinear_loop(const Volume& lr, int scale) {
    Volume out;
    out.dims = {lr.dims.z * scale, lr.dims.y * scale, lr.dims.x * scale};
    out.spacing = {lr.spacing.z / scale, lr.spacing.y / scale, lr.spacing.x / scale};
    out.data.resize(out.dims.total());
    auto clamp_idx = [](double c, std::size_t n, std::size_t& lo, std::size_t& hi, double& frac) {
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
    };
    for (std::size_t z = 0; z < out.dims.z; ++z)
        for (std::size_t y = 0; y < out.dims.y; ++y)
            for (std::size_t x = 0; x < out.dims.x; ++x) {
                double cz = (static_cast<double>(z) + 0.5) / scale - 0.5;
                double cy = (static_cast<double>(y) + 0.5) / scale - 0.5;
                double cx = (static_cast<double>(x) + 0.5) / scale - 0.5;
                std::size_t z0, z1, y0, y1, x0, x1;
                double dz, dy, dx;
                clamp_idx(cz, lr.dims.z, z0, z1, dz);
                clamp_idx(cy, lr.dims.y, y0, y1, dy);
                clamp_idx(cx, lr.dims.x, x0, x1, dx);
                double acc =
                    (1 - dz) * (1 - dy) * (1 - dx) * lr.at(z0, y0, x0) +
                    (1 - dz) * (1 - dy) * dx * lr.at(z0, y0, x1) +
                    (1 - dz) * dy * (1 - dx) * lr.at(z0, y1, x0) +
                    (1 - dz) * dy * dx * lr.at(z0, y1, x1) +
                    dz * (1 - dy) * (1 - dx) * lr.at(z1, y0, x0) +
                    dz * (1 - dy) * dx * lr.at(z1, y0, x1) +
                    dz * dy * (1 - dx) * lr.at(z1, y1, x0) +
                    dz * dy * dx * lr.at(z1, y1, x1);
                out.at(z, y, x) = quantize_u16(acc);
            }
    return out;
}

std::vector<double> ridge_direct(const std::vector<std::vector<double>>& rows,
                                 const std::vector<double>& targets, double lambda) {
    const std::size_t d = rows[0].size() + 1;  // bias column appended
    std::vector<std::vector<double>> a(d, std::vector<double>(d + 1, 0.0));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::vector<double> x = rows[r];
        x.push_back(1.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) a[i][j] += x[i] * x[j];
            a[i][d] += x[i] * targets[r];
        }
    }
    // Mean-squared-error convention: normalize by the row count so lambda is
    // independent of how many rows were given; the bias stays unpenalized.
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j <= d; ++j) a[i][j] *= inv_n;
    for (std::size_t i = 0; i + 1 < d; ++i) a[i][i] += lambda;  // bias unpenalized

    // Gaussian elimination, partial pivoting.
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        if (std::fabs(a[col][col]) < 1e-12)
            fail(ErrorKind::singular, "ridge_direct", "singular normal matrix");
        for (std::size_t r = col + 1; r < d; ++r) {
            double f = a[r][col] / a[col][col];
            for (std::size_t j = col; j <= d; ++j) a[r][j] -= f * a[col][j];
        }
    }
    std::vector<double> w(d, 0.0);
    for (std::size_t i = d; i-- > 0;) {
        double s = a[i][d];
        for (std::size_t j = i + 1; j < d; ++j) s -= a[i][j] * w[j];
        w[i] = s / a[i][i];
    }
    return w;
}

}  // namespace voxsr::reference
