#pragma once

#include <filesystem>

#include "voxsr/types.hpp"

namespace voxsr {

// Maps physical coordinates of the fixed grid to physical coordinates of the
// moving volume: q = A * p + t. Row-major 3x3, axis order (z, y, x),
// translation in micrometers.
struct AffineTransform3D {
    std::array<double, 9> a{1, 0, 0, 0, 1, 0, 0, 0, 1};
    std::array<double, 3> t{0, 0, 0};

    static AffineTransform3D identity() { return {}; }
    static AffineTransform3D translation(Vec3d t_um) {
        AffineTransform3D m;
        m.t = {t_um.z, t_um.y, t_um.x};
        return m;
    }

    Vec3d apply(const Vec3d& p) const {
        return {a[0] * p.z + a[1] * p.y + a[2] * p.x + t[0],
                a[3] * p.z + a[4] * p.y + a[5] * p.x + t[1],
                a[6] * p.z + a[7] * p.y + a[8] * p.x + t[2]};
    }
};

struct RegistrationResult {
    AffineTransform3D transform;
    double ncc = 0.0;
    bool low_confidence = false;
};

struct GridSpec {
    Dims3 dims;
    Spacing3 spacing;
    Vec3d origin;

    static GridSpec of(const Volume& v) { return {v.dims, v.spacing, v.origin}; }
};

// Pearson correlation over jointly masked voxels. Returns 0 if either side is
// constant; fails with invalid input when fewer than two voxels remain.
double ncc(const Volume& fixed, const Volume& moving);

// Trilinear resampling of `moving` onto `out_grid` under `transform`. Output
// voxels whose 8 interpolation neighbors are not all inside and masked-in get
// intensity 0 and mask false. Neighbors with exactly zero interpolation weight
// are not required to exist, so an identity transform is a bit-exact copy.
Volume resample_affine(const Volume& moving, const AffineTransform3D& transform,
                       const GridSpec& out_grid);

// Translation-only registration: exhaustive integer search at the coarsest
// pyramid level, +-1 refinement per level, then a per-axis parabolic fit over
// NCC at integer offsets {-1, 0, +1} for the sub-voxel estimate.
RegistrationResult register_translation(const Volume& fixed, const Volume& moving,
                                        double search_radius_vox);

// Full affine refinement by coarse-to-fine cyclic coordinate descent with a
// golden-section line search per parameter. Never returns a transform whose
// level-0 NCC is below the init's.
RegistrationResult register_affine(const Volume& fixed, const Volume& moving,
                                   const AffineTransform3D& init);

// Crops a registered volume to the HR field of view (leading region per axis),
// keeping the resampling mask.
Volume crop_and_mask(const Volume& registered, Dims3 hr_fov);

void save_transform(const std::filesystem::path& path, const RegistrationResult& result,
                    Spacing3 fixed_spacing, Spacing3 moving_spacing);
RegistrationResult load_transform(const std::filesystem::path& path);

}  // namespace voxsr
