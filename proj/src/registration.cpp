#include "voxsr/registration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "voxsr/pyramid.hpp"

namespace voxsr {

namespace {

struct CorrSums {
    double n = 0, sf = 0, sm = 0, sff = 0, smm = 0, sfm = 0;
    void add(const CorrSums& o) {
        n += o.n;
        sf += o.sf;
        sm += o.sm;
        sff += o.sff;
        smm += o.smm;
        sfm += o.sfm;
    }
    double corr() const {
        if (n < 2) return -2.0;  // sentinel: not enough support
        double vf = sff - sf * sf / n;
        double vm = smm - sm * sm / n;
        if (vf <= 0.0 || vm <= 0.0) return 0.0;
        return (sfm - sf * sm / n) / std::sqrt(vf * vm);
    }
};

// NCC between fixed and moving shifted by integer voxels, over the overlap of
// the two index boxes intersected with both masks. Intensities are scaled to
// [0,1] so the accumulators stay well inside double precision.
double corr_at_shift(const Volume& f, const Volume& m, Vec3i s) {
    const i64 z0 = std::max<i64>(0, -s.z);
    const i64 z1 = std::min<i64>(static_cast<i64>(f.dims.z), static_cast<i64>(m.dims.z) - s.z);
    const i64 y0 = std::max<i64>(0, -s.y);
    const i64 y1 = std::min<i64>(static_cast<i64>(f.dims.y), static_cast<i64>(m.dims.y) - s.y);
    const i64 x0 = std::max<i64>(0, -s.x);
    const i64 x1 = std::min<i64>(static_cast<i64>(f.dims.x), static_cast<i64>(m.dims.x) - s.x);
    if (z0 >= z1 || y0 >= y1 || x0 >= x1) return -2.0;

    const i64 nz = z1 - z0;
    std::vector<CorrSums> partial(static_cast<std::size_t>(nz));
#pragma omp parallel for schedule(static)
    for (i64 iz = 0; iz < nz; ++iz) {
        CorrSums acc;
        const i64 z = z0 + iz;
        for (i64 y = y0; y < y1; ++y) {
            const std::size_t fi0 = f.index(static_cast<std::size_t>(z),
                                            static_cast<std::size_t>(y), 0);
            const std::size_t mi0 = m.index(static_cast<std::size_t>(z + s.z),
                                            static_cast<std::size_t>(y + s.y), 0);
            for (i64 x = x0; x < x1; ++x) {
                const std::size_t fi = fi0 + static_cast<std::size_t>(x);
                const std::size_t mi = mi0 + static_cast<std::size_t>(x + s.x);
                if (!f.mask_at(fi) || !m.mask_at(mi)) continue;
                const double a = f.data[fi] / 65535.0;
                const double b = m.data[mi] / 65535.0;
                acc.n += 1;
                acc.sf += a;
                acc.sm += b;
                acc.sff += a * a;
                acc.smm += b * b;
                acc.sfm += a * b;
            }
        }
        partial[static_cast<std::size_t>(iz)] = acc;
    }
    CorrSums total;
    for (const CorrSums& p : partial) total.add(p);  // fixed order regardless of thread count
    return total.corr();
}

// Fused resample + correlate: NCC between fixed and moving pulled through the
// transform, without materializing the resampled volume. This is the inner
// objective of the affine search, so the transform is applied incrementally
// along x.
double ncc_under_transform(const Volume& f, const Volume& m, const AffineTransform3D& T) {
    const i64 D = static_cast<i64>(m.dims.z);
    const i64 H = static_cast<i64>(m.dims.y);
    const i64 W = static_cast<i64>(m.dims.x);
    const i64 nz = static_cast<i64>(f.dims.z);
    std::vector<CorrSums> partial(static_cast<std::size_t>(nz));

    // Step of the moving-volume continuous coordinates per +1 fixed x voxel.
    const double step_cz = T.a[2] * f.spacing.x / m.spacing.z;
    const double step_cy = T.a[5] * f.spacing.x / m.spacing.y;
    const double step_cx = T.a[8] * f.spacing.x / m.spacing.x;

#pragma omp parallel for schedule(static)
    for (i64 z = 0; z < nz; ++z) {
        CorrSums acc;
        const double pz = f.origin.z + static_cast<double>(z) * f.spacing.z;
        for (std::size_t y = 0; y < f.dims.y; ++y) {
            const double py = f.origin.y + static_cast<double>(y) * f.spacing.y;
            Vec3d q = T.apply({pz, py, f.origin.x});
            double cz = (q.z - m.origin.z) / m.spacing.z;
            double cy = (q.y - m.origin.y) / m.spacing.y;
            double cx = (q.x - m.origin.x) / m.spacing.x;
            const std::size_t fi0 = f.index(static_cast<std::size_t>(z), y, 0);
            for (std::size_t x = 0; x < f.dims.x; ++x, cz += step_cz, cy += step_cy, cx += step_cx) {
                const std::size_t fi = fi0 + x;
                if (!f.mask_at(fi)) continue;

                const double fz = std::floor(cz), fy = std::floor(cy), fx = std::floor(cx);
                const i64 z0 = static_cast<i64>(fz), y0 = static_cast<i64>(fy),
                          x0 = static_cast<i64>(fx);
                const double dz = cz - fz, dy = cy - fy, dx = cx - fx;

                bool ok = true;
                double val = 0.0;
                for (int bz = 0; bz < 2 && ok; ++bz) {
                    const double wz = bz ? dz : 1.0 - dz;
                    if (wz == 0.0) continue;
                    for (int by = 0; by < 2 && ok; ++by) {
                        const double wy = by ? dy : 1.0 - dy;
                        if (wy == 0.0) continue;
                        for (int bx = 0; bx < 2 && ok; ++bx) {
                            const double w = wz * wy * (bx ? dx : 1.0 - dx);
                            if (w == 0.0) continue;
                            const i64 zz = z0 + bz, yy = y0 + by, xx = x0 + bx;
                            if (zz < 0 || zz >= D || yy < 0 || yy >= H || xx < 0 || xx >= W) {
                                ok = false;
                                break;
                            }
                            const std::size_t mi = m.index(static_cast<std::size_t>(zz),
                                                           static_cast<std::size_t>(yy),
                                                           static_cast<std::size_t>(xx));
                            if (!m.mask_at(mi)) {
                                ok = false;
                                break;
                            }
                            val += w * static_cast<double>(m.data[mi]);
                        }
                    }
                }
                if (!ok) continue;
                const double a = f.data[fi] / 65535.0;
                const double b = val / 65535.0;
                acc.n += 1;
                acc.sf += a;
                acc.sm += b;
                acc.sff += a * a;
                acc.smm += b * b;
                acc.sfm += a * b;
            }
        }
        partial[static_cast<std::size_t>(z)] = acc;
    }
    CorrSums total;
    for (const CorrSums& p : partial) total.add(p);
    return total.corr();
}

void check_matched_spacing(const Volume& fixed, const Volume& moving, const char* stage) {
    auto close = [](double a, double b) { return std::fabs(a - b) <= 1e-6 * std::max(std::fabs(a), std::fabs(b)); };
    if (!close(fixed.spacing.z, moving.spacing.z) || !close(fixed.spacing.y, moving.spacing.y) ||
        !close(fixed.spacing.x, moving.spacing.x))
        fail(ErrorKind::invalid_input, stage,
             "registration expects matched voxel size; downsample first");
}

int pyramid_depth(const Volume& a, const Volume& b) {
    int level = 0;
    std::size_t d = 16;
    while (level < 3) {
        const std::size_t f = static_cast<std::size_t>(2) << level;  // dims at level+1 need >= 16
        if (a.dims.z / f < d || a.dims.y / f < d || a.dims.x / f < d) break;
        if (b.dims.z / f < d || b.dims.y / f < d || b.dims.x / f < d) break;
        ++level;
    }
    return level;
}

std::vector<Volume> make_levels(const Volume& v, int depth) {
    std::vector<Volume> levels;
    levels.push_back(v);
    for (int i = 0; i < depth; ++i) levels.push_back(downsample_mean2(levels.back()));
    return levels;
}

}  // namespace

double ncc(const Volume& fixed, const Volume& moving) {
    if (!(fixed.dims == moving.dims))
        fail(ErrorKind::invalid_input, "ncc", "volumes must share dims");

    // Two-pass centered accumulation; per-slice partials are combined in z
    // order so the result does not depend on the thread count.
    const i64 nz = static_cast<i64>(fixed.dims.z);
    const std::size_t slice = fixed.dims.y * fixed.dims.x;
    std::vector<double> pn(nz), pf(nz), pm(nz);
#pragma omp parallel for schedule(static)
    for (i64 z = 0; z < nz; ++z) {
        double n = 0, sf = 0, sm = 0;
        for (std::size_t i = static_cast<std::size_t>(z) * slice; i < (static_cast<std::size_t>(z) + 1) * slice; ++i) {
            if (!fixed.mask_at(i) || !moving.mask_at(i)) continue;
            n += 1;
            sf += fixed.data[i];
            sm += moving.data[i];
        }
        pn[z] = n;
        pf[z] = sf;
        pm[z] = sm;
    }
    double n = 0, sf = 0, sm = 0;
    for (i64 z = 0; z < nz; ++z) {
        n += pn[z];
        sf += pf[z];
        sm += pm[z];
    }
    if (n < 2) fail(ErrorKind::invalid_input, "ncc", "fewer than two jointly masked voxels");
    const double mf = sf / n, mm = sm / n;

    std::vector<double> pff(nz), pmm(nz), pfm(nz);
#pragma omp parallel for schedule(static)
    for (i64 z = 0; z < nz; ++z) {
        double sff = 0, smm = 0, sfm = 0;
        for (std::size_t i = static_cast<std::size_t>(z) * slice; i < (static_cast<std::size_t>(z) + 1) * slice; ++i) {
            if (!fixed.mask_at(i) || !moving.mask_at(i)) continue;
            const double df = fixed.data[i] - mf;
            const double dm = moving.data[i] - mm;
            sff += df * df;
            smm += dm * dm;
            sfm += df * dm;
        }
        pff[z] = sff;
        pmm[z] = smm;
        pfm[z] = sfm;
    }
    double sff = 0, smm = 0, sfm = 0;
    for (i64 z = 0; z < nz; ++z) {
        sff += pff[z];
        smm += pmm[z];
        sfm += pfm[z];
    }
    if (sff <= 0.0 || smm <= 0.0) return 0.0;
    return sfm / std::sqrt(sff * smm);
}

Volume resample_affine(const Volume& moving, const AffineTransform3D& transform,
                       const GridSpec& out_grid) {
    if (moving.dims.total() == 0)
        fail(ErrorKind::invalid_input, "resample_affine", "empty moving volume");

    Volume out;
    out.dims = out_grid.dims;
    out.spacing = out_grid.spacing;
    out.origin = out_grid.origin;
    out.data.assign(out.dims.total(), 0);
    out.mask.assign(out.dims.total(), 0);

    const i64 D = static_cast<i64>(moving.dims.z);
    const i64 H = static_cast<i64>(moving.dims.y);
    const i64 W = static_cast<i64>(moving.dims.x);

#pragma omp parallel for schedule(static)
    for (i64 z = 0; z < static_cast<i64>(out.dims.z); ++z) {
        for (std::size_t y = 0; y < out.dims.y; ++y)
            for (std::size_t x = 0; x < out.dims.x; ++x) {
                Vec3d p{out_grid.origin.z + static_cast<double>(z) * out_grid.spacing.z,
                        out_grid.origin.y + static_cast<double>(y) * out_grid.spacing.y,
                        out_grid.origin.x + static_cast<double>(x) * out_grid.spacing.x};
                Vec3d q = transform.apply(p);
                const double cz = (q.z - moving.origin.z) / moving.spacing.z;
                const double cy = (q.y - moving.origin.y) / moving.spacing.y;
                const double cx = (q.x - moving.origin.x) / moving.spacing.x;

                const double fz = std::floor(cz), fy = std::floor(cy), fx = std::floor(cx);
                const i64 z0 = static_cast<i64>(fz), y0 = static_cast<i64>(fy),
                          x0 = static_cast<i64>(fx);
                const double dz = cz - fz, dy = cy - fy, dx = cx - fx;

                bool ok = true;
                double acc = 0.0;
                for (int bz = 0; bz < 2 && ok; ++bz)
                    for (int by = 0; by < 2 && ok; ++by)
                        for (int bx = 0; bx < 2 && ok; ++bx) {
                            const double w = (bz ? dz : 1.0 - dz) * (by ? dy : 1.0 - dy) *
                                             (bx ? dx : 1.0 - dx);
                            if (w == 0.0) continue;
                            const i64 zz = z0 + bz, yy = y0 + by, xx = x0 + bx;
                            if (zz < 0 || zz >= D || yy < 0 || yy >= H || xx < 0 || xx >= W) {
                                ok = false;
                                break;
                            }
                            const std::size_t idx = moving.index(static_cast<std::size_t>(zz),
                                                                 static_cast<std::size_t>(yy),
                                                                 static_cast<std::size_t>(xx));
                            if (!moving.mask_at(idx)) {
                                ok = false;
                                break;
                            }
                            acc += w * static_cast<double>(moving.data[idx]);
                        }
                const std::size_t oidx = out.index(static_cast<std::size_t>(z), y, x);
                if (ok) {
                    out.data[oidx] = quantize_u16(acc);
                    out.mask[oidx] = 1;
                }
            }
    }
    return out;
}

RegistrationResult register_translation(const Volume& fixed, const Volume& moving,
                                        double search_radius_vox) {
    check_matched_spacing(fixed, moving, "register_translation");
    if (search_radius_vox < 0)
        fail(ErrorKind::invalid_input, "register_translation", "negative search radius");

    const int depth = pyramid_depth(fixed, moving);
    const std::vector<Volume> fp = make_levels(fixed, depth);
    const std::vector<Volume> mp = make_levels(moving, depth);

    // Exhaustive integer search at the coarsest level.
    const double lvl_scale = static_cast<double>(1 << depth);
    const i64 r = static_cast<i64>(std::ceil(search_radius_vox / lvl_scale)) + 1;
    Vec3i best{0, 0, 0};
    double best_corr = -3.0;
    for (i64 sz = -r; sz <= r; ++sz)
        for (i64 sy = -r; sy <= r; ++sy)
            for (i64 sx = -r; sx <= r; ++sx) {
                const double c = corr_at_shift(fp[depth], mp[depth], {sz, sy, sx});
                if (c > best_corr) {
                    best_corr = c;
                    best = {sz, sy, sx};
                }
            }
    if (best_corr <= -2.0)
        fail(ErrorKind::registration, "register_translation",
             "no overlapping masked voxels within the search radius");

    // +-1 refinement per finer level.
    for (int level = depth - 1; level >= 0; --level) {
        best = {best.z * 2, best.y * 2, best.x * 2};
        Vec3i local = best;
        best_corr = -3.0;
        for (i64 dz = -1; dz <= 1; ++dz)
            for (i64 dy = -1; dy <= 1; ++dy)
                for (i64 dx = -1; dx <= 1; ++dx) {
                    const Vec3i s{local.z + dz, local.y + dy, local.x + dx};
                    const double c = corr_at_shift(fp[level], mp[level], s);
                    if (c > best_corr) {
                        best_corr = c;
                        best = s;
                    }
                }
    }

    // Per-axis parabolic sub-voxel fit over NCC at integer offsets {-1,0,+1}.
    const double f0 = corr_at_shift(fixed, moving, best);
    Vec3d sub{static_cast<double>(best.z), static_cast<double>(best.y),
              static_cast<double>(best.x)};
    for (int axis = 0; axis < 3; ++axis) {
        Vec3i lo = best, hi = best;
        (axis == 0 ? lo.z : axis == 1 ? lo.y : lo.x) -= 1;
        (axis == 0 ? hi.z : axis == 1 ? hi.y : hi.x) += 1;
        const double fm = corr_at_shift(fixed, moving, lo);
        const double fp1 = corr_at_shift(fixed, moving, hi);
        if (fm <= -2.0 || fp1 <= -2.0) continue;
        const double denom = fm - 2.0 * f0 + fp1;
        if (denom >= -1e-15) continue;  // not concave, keep the integer estimate
        double delta = 0.5 * (fm - fp1) / denom;
        delta = std::clamp(delta, -0.5, 0.5);
        (axis == 0 ? sub.z : axis == 1 ? sub.y : sub.x) += delta;
    }

    RegistrationResult result;
    result.transform = AffineTransform3D::translation(
        {sub.z * fixed.spacing.z, sub.y * fixed.spacing.y, sub.x * fixed.spacing.x});
    result.ncc = f0;
    return result;
}

RegistrationResult register_affine(const Volume& fixed, const Volume& moving,
                                   const AffineTransform3D& init) {
    check_matched_spacing(fixed, moving, "register_affine");

    const int depth = pyramid_depth(fixed, moving);
    const std::vector<Volume> fp = make_levels(fixed, depth);
    const std::vector<Volume> mp = make_levels(moving, depth);

    AffineTransform3D T = init;
    constexpr double golden = 0.6180339887498949;

    for (int level = depth; level >= 0; --level) {
        const Volume& fl = fp[level];
        const Volume& ml = mp[level];
        double cur = ncc_under_transform(fl, ml, T);

        std::array<double, 12> steps;
        for (int i = 0; i < 9; ++i) steps[i] = 0.01;
        steps[9] = fl.spacing.z;
        steps[10] = fl.spacing.y;
        steps[11] = fl.spacing.x;

        for (int cycle = 0; cycle < 100; ++cycle) {
            const double start = cur;
            for (int pi = 0; pi < 12; ++pi) {
                double* param = pi < 9 ? &T.a[pi] : &T.t[pi - 9];
                const double p0 = *param;
                auto eval = [&](double v) {
                    *param = v;
                    const double c = ncc_under_transform(fl, ml, T);
                    *param = p0;
                    return c;
                };

                // Golden-section maximization on [p0 - 2s, p0 + 2s].
                double a = p0 - 2.0 * steps[pi];
                double b = p0 + 2.0 * steps[pi];
                const double tol = 0.02 * steps[pi];
                double c = b - golden * (b - a);
                double d = a + golden * (b - a);
                double fc = eval(c), fd = eval(d);
                double bx = cur >= fc && cur >= fd ? p0 : (fc >= fd ? c : d);
                double bv = std::max({cur, fc, fd});
                while (b - a > tol) {
                    if (fc >= fd) {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - golden * (b - a);
                        fc = eval(c);
                        if (fc > bv) {
                            bv = fc;
                            bx = c;
                        }
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + golden * (b - a);
                        fd = eval(d);
                        if (fd > bv) {
                            bv = fd;
                            bx = d;
                        }
                    }
                }
                if (bv > cur) {
                    *param = bx;
                    cur = bv;
                }
            }
            if (cur - start < 1e-5) break;
        }
    }

    // Never return something worse than the init at full resolution.
    const double ncc_init = ncc_under_transform(fp[0], mp[0], init);
    double ncc_final = ncc_under_transform(fp[0], mp[0], T);
    if (ncc_final < ncc_init) {
        T = init;
        ncc_final = ncc_init;
    }

    RegistrationResult result;
    result.transform = T;
    result.ncc = ncc_final;
    result.low_confidence = ncc_final < 0.1 && ncc_final <= ncc_init + 1e-12;
    return result;
}

Volume crop_and_mask(const Volume& registered, Dims3 hr_fov) {
    if (hr_fov.z > registered.dims.z || hr_fov.y > registered.dims.y ||
        hr_fov.x > registered.dims.x)
        fail(ErrorKind::range, "crop_and_mask",
             "registered volume does not cover the requested field of view");

    Volume out;
    out.dims = hr_fov;
    out.spacing = registered.spacing;
    out.origin = registered.origin;
    out.data.resize(hr_fov.total());
    out.mask.assign(hr_fov.total(), 1);
    for (std::size_t z = 0; z < hr_fov.z; ++z)
        for (std::size_t y = 0; y < hr_fov.y; ++y) {
            const std::size_t src = registered.index(z, y, 0);
            const std::size_t dst = out.index(z, y, 0);
            std::copy_n(registered.data.data() + src, hr_fov.x, out.data.data() + dst);
            if (registered.has_mask())
                std::copy_n(registered.mask.data() + src, hr_fov.x, out.mask.data() + dst);
        }
    return out;
}

void save_transform(const std::filesystem::path& path, const RegistrationResult& result,
                    Spacing3 fixed_spacing, Spacing3 moving_spacing) {
    nlohmann::ordered_json j;
    j["a"] = result.transform.a;
    j["t_um"] = result.transform.t;
    j["fixed_spacing_um"] = {fixed_spacing.z, fixed_spacing.y, fixed_spacing.x};
    j["moving_spacing_um"] = {moving_spacing.z, moving_spacing.y, moving_spacing.x};
    j["ncc_final"] = result.ncc;
    j["low_confidence"] = result.low_confidence;
    std::ofstream out(path);
    if (!out) fail(ErrorKind::storage, "register", "cannot create " + path.string());
    out << j.dump(2) << "\n";
}

RegistrationResult load_transform(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::storage, "register", "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        RegistrationResult r;
        for (int i = 0; i < 9; ++i) r.transform.a[i] = j.at("a")[i].get<double>();
        for (int i = 0; i < 3; ++i) r.transform.t[i] = j.at("t_um")[i].get<double>();
        r.ncc = j.value("ncc_final", 0.0);
        r.low_confidence = j.value("low_confidence", false);
        return r;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::invalid_input, "register", path.string() + ": " + e.what());
    }
}

}  // namespace voxsr
