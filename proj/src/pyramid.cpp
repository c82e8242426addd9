#include "voxsr/pyramid.hpp"

namespace voxsr {

Volume downsample_mean2(const Volume& v) {
    if (v.dims.z < 2 || v.dims.y < 2 || v.dims.x < 2)
        fail(ErrorKind::invalid_input, "downsample_mean2", "every dimension must be >= 2");

    Volume out;
    out.dims = {v.dims.z / 2, v.dims.y / 2, v.dims.x / 2};
    out.spacing = {v.spacing.z * 2, v.spacing.y * 2, v.spacing.x * 2};
    // Block centers sit half an input voxel past the input origin.
    out.origin = {v.origin.z + v.spacing.z * 0.5, v.origin.y + v.spacing.y * 0.5,
                  v.origin.x + v.spacing.x * 0.5};
    out.data.resize(out.dims.total());
    if (v.has_mask()) out.mask.resize(out.dims.total());

    const std::size_t sy = v.dims.x;
    const std::size_t sz = v.dims.y * v.dims.x;
#pragma omp parallel for schedule(static)
    for (i64 oz = 0; oz < static_cast<i64>(out.dims.z); ++oz) {
        for (std::size_t oy = 0; oy < out.dims.y; ++oy) {
            for (std::size_t ox = 0; ox < out.dims.x; ++ox) {
                const std::size_t base =
                    (2 * static_cast<std::size_t>(oz)) * sz + (2 * oy) * sy + 2 * ox;
                u32 sum = 0;
                int fg = 0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = base + static_cast<std::size_t>(dz) * sz +
                                                    static_cast<std::size_t>(dy) * sy +
                                                    static_cast<std::size_t>(dx);
                            sum += v.data[idx];
                            if (v.has_mask() && v.mask[idx]) ++fg;
                        }
                const std::size_t oidx = (static_cast<std::size_t>(oz) * out.dims.y + oy) * out.dims.x + ox;
                out.data[oidx] = quantize_u16(static_cast<double>(sum) / 8.0);
                if (v.has_mask()) out.mask[oidx] = fg >= 4 ? 1 : 0;
            }
        }
    }
    return out;
}

std::vector<Volume> build_pyramid(const Volume& v, int max_factor) {
    if (max_factor != 1 && max_factor != 2 && max_factor != 4 && max_factor != 8)
        fail(ErrorKind::config, "build_pyramid", "max_factor must be one of {1, 2, 4, 8}");
    if (v.dims.z < static_cast<std::size_t>(max_factor) ||
        v.dims.y < static_cast<std::size_t>(max_factor) ||
        v.dims.x < static_cast<std::size_t>(max_factor))
        fail(ErrorKind::invalid_input, "build_pyramid",
             "every dimension must be >= max_factor");

    std::vector<Volume> levels;
    levels.push_back(v);
    for (int f = 2; f <= max_factor; f *= 2) levels.push_back(downsample_mean2(levels.back()));
    return levels;
}

}  // namespace voxsr
