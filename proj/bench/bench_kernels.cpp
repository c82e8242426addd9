// Timing comparison of the OpenMP kernels against the serial reference
// implementations. Each row reports both runtimes and checks that the two
// sides still agree, so the benchmark doubles as a smoke test.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "voxsr/metrics.hpp"
#include "voxsr/pyramid.hpp"
#include "voxsr/reference.hpp"
#include "voxsr/registration.hpp"
#include "voxsr/rng.hpp"
#include "voxsr/tiled_infer.hpp"
#include "voxsr/types.hpp"

namespace {

using namespace voxsr;

template <typename F>
double time_ms(F&& f, int iters) {
    double best = 1e300;
    for (int i = 0; i < iters; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        f();
        auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

Volume random_volume(Dims3 dims, u64 seed) {
    Volume v;
    v.dims = dims;
    v.spacing = {2.0, 2.0, 2.0};
    v.data.resize(dims.total());
    SplitMix64 rng(seed);
    for (u16& x : v.data) x = static_cast<u16>(rng.below(65536));
    return v;
}

int failures = 0;

void report(const char* name, double par_ms, double ref_ms, bool ok) {
    std::printf("%-24s %10.2f ms %12.2f ms %8.2fx  %s\n", name, par_ms, ref_ms,
                ref_ms / (par_ms > 0 ? par_ms : 1e-9), ok ? "agree" : "MISMATCH");
    if (!ok) ++failures;
}

u64 max_abs_diff(const std::vector<u16>& a, const std::vector<u16>& b) {
    if (a.size() != b.size()) return ~0ull;
    u64 worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        u64 d = a[i] > b[i] ? a[i] - b[i] : b[i] - a[i];
        worst = std::max(worst, d);
    }
    return worst;
}

}  // namespace

int main(int argc, char** argv) {
    std::size_t side = 96;
    int iters = 3;
    if (argc > 1) side = static_cast<std::size_t>(std::atoll(argv[1]));
    if (argc > 2) iters = std::atoi(argv[2]);
    if (side < 16 || side % 8 != 0) {
        std::fprintf(stderr, "usage: bench_kernels [side>=16, multiple of 8] [iters]\n");
        return 2;
    }

#ifdef _OPENMP
    std::printf("threads: %d, volume side: %zu, iters: %d\n", omp_get_max_threads(), side,
                iters);
#else
    std::printf("threads: 1 (no OpenMP), volume side: %zu, iters: %d\n", side, iters);
#endif
    std::printf("%-24s %13s %15s %9s\n", "kernel", "parallel", "reference", "speedup");

    const Dims3 dims{side, side, side};
    Volume a = random_volume(dims, 101);
    Volume b = random_volume(dims, 202);

    {
        Volume par, ref;
        double pt = time_ms([&] { par = downsample_mean2(a); }, iters);
        double rt = time_ms([&] { ref = reference::downsample_mean2_loop(a); }, iters);
        report("downsample_mean2", pt, rt, par.data == ref.data);
    }
    {
        double par = 0, ref = 0;
        double pt = time_ms([&] { par = ncc(a, b); }, iters);
        double rt = time_ms([&] { ref = reference::ncc_loop(a, b); }, iters);
        report("ncc", pt, rt, std::fabs(par - ref) < 1e-9);
    }
    {
        Volume lr = random_volume({side / 4, side / 4, side / 4}, 303);
        Volume par, ref;
        double pt = time_ms([&] { par = upsample_volume(lr, 4, UpsampleMode::trilinear); },
                            iters);
        double rt = time_ms([&] { ref = reference::upsample_trilinear_loop(lr, 4); }, iters);
        report("upsample_trilinear x4", pt, rt, par.data == ref.data);
    }
    {
        AffineTransform3D t;
        t.a = {1.004, 0.002, 0.0, -0.001, 0.997, 0.003, 0.0, 0.002, 1.002};
        t.t = {1.5, -2.0, 0.75};
        GridSpec grid = GridSpec::of(a);
        Volume par, ref;
        double pt = time_ms([&] { par = resample_affine(b, t, grid); }, iters);
        double rt = time_ms([&] { ref = reference::resample_affine_loop(b, t, grid); }, iters);
        report("resample_affine", pt, rt, max_abs_diff(par.data, ref.data) <= 1);
    }
    {
        MetricsReport rep;
        double pt = time_ms([&] { rep = evaluate_volume(a, b, 1, EvalMode::every_slice); },
                            iters);
        double mp = 0, ms = 0;
        const std::size_t hw = dims.y * dims.x;
        double rt = time_ms(
            [&] {
                mp = ms = 0;
                for (std::size_t z = 0; z < dims.z; ++z) {
                    std::span<const u16> p{a.data.data() + z * hw, hw};
                    std::span<const u16> r{b.data.data() + z * hw, hw};
                    mp += reference::psnr_loop(p, r);
                    ms += reference::ssim_loop(p, r, dims.y, dims.x);
                }
                mp /= static_cast<double>(dims.z);
                ms /= static_cast<double>(dims.z);
            },
            iters);
        bool ok = std::fabs(rep.mean_psnr - mp) < 1e-6 && std::fabs(rep.mean_ssim - ms) < 1e-6;
        report("slice metrics", pt, rt, ok);
    }
    {
        const std::size_t hw = dims.y * dims.x;
        std::span<const u16> slice{a.data.data(), hw};
        std::vector<double> par, ref;
        double pt = time_ms([&] { par = radial_power_profile(slice, side, 0); }, iters);
        double rt = time_ms([&] { ref = reference::radial_profile_dft(slice, side, 0); }, 1);
        bool ok = par.size() == ref.size();
        for (std::size_t i = 0; ok && i < par.size(); ++i)
            ok = std::fabs(par[i] - ref[i]) < 1e-9;
        report("radial_power_profile", pt, rt, ok);
    }

    if (failures) {
        std::printf("%d kernel(s) disagree with the reference\n", failures);
        return 1;
    }
    return 0;
}
