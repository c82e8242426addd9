#pragma once

#include "voxsr/types.hpp"

namespace voxsr {

enum class PhantomKind { tubes, trabecular };

struct PhantomSpec {
    PhantomKind kind = PhantomKind::tubes;
    Dims3 dims{128, 128, 128};
    u64 seed = 0;

    // tubes: z-aligned canals with sinusoidal in-plane drift, dark lumen over
    // a bright matrix with a smooth texture field.
    double canal_density = 4.0;  // canals per 1000 voxels of cross-section
    double radius_min = 1.5;
    double radius_max = 3.0;
    double drift_amplitude = 2.0;  // voxels
    // trabecular: thresholded sum of seeded 3D cosines, box smoothed.
    int cosine_count = 24;
    double threshold = 0.0;
    int smooth_passes = 2;
};

struct DegradeSpec {
    int scale = 4;
    double blur_sigma = 1.0;       // HR voxels, isotropic Gaussian before downsampling
    double gamma = 0.9;
    double gain = 1.2;
    double noise_sigma = 2000.0;   // u16 units, additive Gaussian
    Vec3d shift{0.3, -0.2, 0.4};   // LR voxels, trilinear sub-voxel misalignment
    double drift_amplitude = 0.02; // per-slice multiplicative brightness drift
    double drift_cycles = 2.0;
    u64 seed = 0;

    bool is_null() const {
        return blur_sigma == 0.0 && gamma == 1.0 && gain == 1.0 && noise_sigma == 0.0 &&
               shift.z == 0.0 && shift.y == 0.0 && shift.x == 0.0 && drift_amplitude == 0.0;
    }
};

// Deterministic in the spec (including its seed). Intensities span the full
// u16 range via clip_normalize(0, 100); the mask covers the sample region
// (full box for tubes, inscribed z-cylinder for trabecular).
Volume generate_phantom(const PhantomSpec& spec);

// Plain repeated 2x local-mean downsampling. scale must be a power of two and
// divide every dimension.
Volume degrade_downsample(const Volume& hr, int scale);

// Acquisition surrogate: Gaussian blur, local-mean downsample, trilinear
// sub-voxel shift, gamma/gain, per-slice sinusoidal brightness drift, additive
// Gaussian noise, clamp to u16. A null spec reduces to degrade_downsample
// bit-exactly.
Volume degrade_realistic(const Volume& hr, const DegradeSpec& spec);

}  // namespace voxsr
