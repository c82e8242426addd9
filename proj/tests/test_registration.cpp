#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "voxsr/reference.hpp"
#include "voxsr/registration.hpp"
#include "voxsr/types.hpp"

using namespace voxsr;
using testutil::TempDir;
using testutil::catch_kind;

namespace {

// Smooth band-limited analytic field; evaluating it at shifted/warped
// coordinates gives exactly shifted/warped volumes with no resampling error.
double field(double z, double y, double x) {
    return 30000.0 + 9000.0 * std::cos(2.0 * M_PI * z / 17.0) * std::cos(2.0 * M_PI * y / 13.0) +
           7000.0 * std::cos(2.0 * M_PI * x / 11.0 + 1.0) +
           5000.0 * std::sin(2.0 * M_PI * (x + y) / 23.0) +
           4000.0 * std::sin(2.0 * M_PI * (z + x) / 19.0);
}

Volume sample_field(Dims3 dims, const AffineTransform3D& coord_map) {
    Volume v;
    v.dims = dims;
    v.spacing = {1.0, 1.0, 1.0};
    v.data.resize(dims.total());
    for (std::size_t z = 0; z < dims.z; ++z)
        for (std::size_t y = 0; y < dims.y; ++y)
            for (std::size_t x = 0; x < dims.x; ++x) {
                Vec3d q = coord_map.apply({static_cast<double>(z), static_cast<double>(y),
                                           static_cast<double>(x)});
                v.at(z, y, x) = quantize_u16(field(q.z, q.y, q.x));
            }
    return v;
}

Volume sample_field_shift(Dims3 dims, Vec3d shift) {
    return sample_field(dims, AffineTransform3D::translation(shift));
}

}  // namespace

TEST_CASE("ncc trivial values") {
    Volume f = testutil::random_volume({4, 5, 6}, 3);

    CHECK(ncc(f, f) == doctest::Approx(1.0).epsilon(1e-12));

    Volume inv = f;
    for (auto& v : inv.data) v = static_cast<u16>(65535 - v);
    CHECK(ncc(f, inv) == doctest::Approx(-1.0).epsilon(1e-12));

    // Orthogonal +-1 patterns around mid-grey: period 2 vs period 4.
    Volume a = Volume::filled({1, 2, 4}, {1, 1, 1}, 0);
    Volume b = a;
    const int pa[8] = {1, -1, 1, -1, 1, -1, 1, -1};
    const int pb[8] = {1, 1, -1, -1, 1, 1, -1, -1};
    for (std::size_t i = 0; i < 8; ++i) {
        a.data[i] = static_cast<u16>(32768 + pa[i]);
        b.data[i] = static_cast<u16>(32768 + pb[i]);
    }
    CHECK(ncc(a, b) == doctest::Approx(0.0).epsilon(1e-12));

    Volume c = Volume::filled({2, 2, 2}, {1, 1, 1}, 1234);
    CHECK(ncc(c, f.dims == c.dims ? f : c) == 0.0);  // constant side -> 0
}

TEST_CASE("ncc agrees with the two-pass loop oracle under masks") {
    for (u64 seed : {5ull, 6ull}) {
        Volume f = testutil::random_volume({6, 7, 8}, seed);
        Volume m = testutil::random_volume({6, 7, 8}, seed + 100);
        SplitMix64 rng(seed + 200);
        f.mask.resize(f.data.size());
        m.mask.resize(m.data.size());
        for (std::size_t i = 0; i < f.data.size(); ++i) {
            f.mask[i] = rng.below(4) != 0;
            m.mask[i] = rng.below(4) != 0;
        }
        CHECK(ncc(f, m) == doctest::Approx(reference::ncc_loop(f, m)).epsilon(1e-12));
    }
}

TEST_CASE("ncc is invariant under positive affine intensity maps") {
    Volume f = testutil::random_volume({4, 4, 4}, 9);
    for (auto& v : f.data) v = static_cast<u16>(100 + v % 100);  // keep headroom
    Volume m = testutil::random_volume({4, 4, 4}, 10);

    Volume scaled = f;
    for (auto& v : scaled.data) v = static_cast<u16>(3 * v + 1000);
    CHECK(ncc(scaled, m) == doctest::Approx(ncc(f, m)).epsilon(1e-12));
}

TEST_CASE("ncc needs at least two jointly masked voxels") {
    Volume f = testutil::random_volume({2, 2, 2}, 11);
    Volume m = testutil::random_volume({2, 2, 2}, 12);
    f.mask.assign(8, 0);
    m.mask.assign(8, 0);
    f.mask[0] = 1;
    m.mask[0] = 1;  // exactly one joint voxel
    auto [threw, kind] = catch_kind([&] { ncc(f, m); });
    CHECK(threw);
    CHECK(kind == ErrorKind::invalid_input);
}

TEST_CASE("resample_affine with identity is a bit-exact copy") {
    Volume m = testutil::random_volume({5, 6, 7}, 13);
    Volume out = resample_affine(m, AffineTransform3D::identity(), GridSpec::of(m));
    CHECK(out.data == m.data);
    CHECK(std::count(out.mask.begin(), out.mask.end(), u8{1}) ==
          static_cast<std::ptrdiff_t>(m.data.size()));
}

TEST_CASE("resample_affine integer translation shifts with a masked margin") {
    Volume m = testutil::random_volume({8, 8, 8}, 17);
    AffineTransform3D t = AffineTransform3D::translation({2, -1, 3});
    Volume out = resample_affine(m, t, GridSpec::of(m));

    for (std::size_t z = 0; z < 8; ++z)
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 8; ++x) {
                i64 sz = static_cast<i64>(z) + 2;
                i64 sy = static_cast<i64>(y) - 1;
                i64 sx = static_cast<i64>(x) + 3;
                std::size_t i = out.index(z, y, x);
                if (sz >= 0 && sz < 8 && sy >= 0 && sy < 8 && sx >= 0 && sx < 8) {
                    CHECK(out.data[i] == m.at(static_cast<std::size_t>(sz),
                                              static_cast<std::size_t>(sy),
                                              static_cast<std::size_t>(sx)));
                    CHECK(out.mask[i] == 1);
                } else {
                    CHECK(out.data[i] == 0);
                    CHECK(out.mask[i] == 0);
                }
            }
}

TEST_CASE("resample_affine is exact on a linear ramp at half-voxel shift") {
    Volume ramp = Volume::filled({4, 4, 64}, {1, 1, 1}, 0);
    for (std::size_t z = 0; z < 4; ++z)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 64; ++x) ramp.at(z, y, x) = static_cast<u16>(100 * x);

    Volume out =
        resample_affine(ramp, AffineTransform3D::translation({0, 0, 0.5}), GridSpec::of(ramp));
    for (std::size_t z = 0; z < 4; ++z)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x + 1 < 64; ++x) {
                CHECK(out.at(z, y, x) == 100 * x + 50);
                CHECK(out.mask[out.index(z, y, x)] == 1);
            }
    // The last column samples half a voxel past the end: masked out.
    for (std::size_t z = 0; z < 4; ++z)
        for (std::size_t y = 0; y < 4; ++y) CHECK(out.mask[out.index(z, y, 63)] == 0);
}

TEST_CASE("resample_affine matches the naive loop oracle") {
    Volume m = testutil::random_volume({12, 13, 14}, 19);
    AffineTransform3D t;
    t.a = {1.01, 0.02, 0.0, -0.01, 0.98, 0.01, 0.0, 0.015, 1.005};
    t.t = {0.7, -1.3, 2.1};
    Volume fast = resample_affine(m, t, GridSpec::of(m));
    Volume slow = reference::resample_affine_loop(m, t, GridSpec::of(m));
    REQUIRE(fast.data.size() == slow.data.size());
    CHECK(fast.mask == slow.mask);
    for (std::size_t i = 0; i < fast.data.size(); ++i) {
        CHECK(std::abs(static_cast<int>(fast.data[i]) - static_cast<int>(slow.data[i])) <= 1);
    }
}

TEST_CASE("register_translation of a volume with itself is zero") {
    Volume f = sample_field_shift({32, 32, 32}, {0, 0, 0});
    RegistrationResult r = register_translation(f, f, 4.0);
    CHECK(std::abs(r.transform.t[0]) <= 0.1);
    CHECK(std::abs(r.transform.t[1]) <= 0.1);
    CHECK(std::abs(r.transform.t[2]) <= 0.1);
    CHECK(r.ncc == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("register_translation recovers a planted integer shift") {
    // moving[v] = field(v - d)  =>  moving[p + d] = fixed[p], so the optimum
    // of the exhaustive NCC search sits exactly at d.
    const Vec3i d{3, -2, 5};
    Volume fixed = sample_field_shift({40, 40, 40}, {0, 0, 0});
    Volume moving = sample_field_shift(
        {40, 40, 40},
        {-static_cast<double>(d.z), -static_cast<double>(d.y), -static_cast<double>(d.x)});

    Vec3i oracle = reference::grid_search_shift(fixed, moving, 6);
    CHECK(oracle == d);

    RegistrationResult r = register_translation(fixed, moving, 8.0);
    CHECK(std::abs(r.transform.t[0] - static_cast<double>(d.z)) <= 0.1);
    CHECK(std::abs(r.transform.t[1] - static_cast<double>(d.y)) <= 0.1);
    CHECK(std::abs(r.transform.t[2] - static_cast<double>(d.x)) <= 0.1);
}

TEST_CASE("register_translation resolves a half-voxel shift") {
    Volume fixed = sample_field_shift({32, 32, 32}, {0, 0, 0});
    Volume moving = sample_field_shift({32, 32, 32}, {0, 0, -0.5});

    RegistrationResult r = register_translation(fixed, moving, 4.0);
    CHECK(std::abs(r.transform.t[0]) <= 0.25);
    CHECK(std::abs(r.transform.t[1]) <= 0.25);
    CHECK(std::abs(r.transform.t[2] - 0.5) <= 0.25);

    // Dense 0.05-step scan along x as the oracle for the true optimum.
    double best_s = 0.0, best_ncc = -2.0;
    for (double s = -1.0; s <= 1.5 + 1e-9; s += 0.05) {
        Volume warped =
            resample_affine(moving, AffineTransform3D::translation({0, 0, s}), GridSpec::of(fixed));
        double r_s = ncc(fixed, warped);
        if (r_s > best_ncc) {
            best_ncc = r_s;
            best_s = s;
        }
    }
    CHECK(std::abs(best_s - 0.5) <= 0.1);
    CHECK(std::abs(r.transform.t[2] - best_s) <= 0.25);
}

TEST_CASE("register_translation is shift-equivariant") {
    Volume fixed = sample_field_shift({32, 32, 32}, {0, 0, 0});
    Volume moving = sample_field_shift({32, 32, 32}, {0, 0, -1.0});
    Volume moving2 = sample_field_shift({32, 32, 32}, {-2.0, 0, -1.0});  // extra z shift by 2

    RegistrationResult r1 = register_translation(fixed, moving, 6.0);
    RegistrationResult r2 = register_translation(fixed, moving2, 6.0);
    CHECK(std::abs((r2.transform.t[0] - r1.transform.t[0]) - 2.0) <= 0.1);
    CHECK(std::abs(r2.transform.t[1] - r1.transform.t[1]) <= 0.1);
    CHECK(std::abs(r2.transform.t[2] - r1.transform.t[2]) <= 0.1);
}

TEST_CASE("register_translation fails cleanly when masks never overlap") {
    Volume fixed = testutil::random_volume({16, 16, 16}, 23);
    Volume moving = testutil::random_volume({16, 16, 16}, 24);
    fixed.mask.assign(fixed.data.size(), 0);
    moving.mask.assign(moving.data.size(), 0);
    // Fixed foreground lives at z < 2, moving at z >= 14; radius 1 cannot join them.
    for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t i = 0; i < 256; ++i) fixed.mask[z * 256 + i] = 1;
    for (std::size_t z = 14; z < 16; ++z)
        for (std::size_t i = 0; i < 256; ++i) moving.mask[z * 256 + i] = 1;

    auto [threw, kind] = catch_kind([&] { register_translation(fixed, moving, 1.0); });
    CHECK(threw);
    CHECK(kind == ErrorKind::registration);
}

TEST_CASE("register_affine stays at identity for identical volumes") {
    Volume f = sample_field_shift({24, 24, 24}, {0, 0, 0});
    RegistrationResult r = register_affine(f, f, AffineTransform3D::identity());
    for (int i = 0; i < 9; ++i) {
        double expect = (i % 4 == 0) ? 1.0 : 0.0;
        CHECK(std::abs(r.transform.a[static_cast<std::size_t>(i)] - expect) <= 1e-3);
    }
    for (int i = 0; i < 3; ++i) CHECK(std::abs(r.transform.t[static_cast<std::size_t>(i)]) <= 1e-3);
    CHECK(r.ncc >= 1.0 - 1e-9);
}

TEST_CASE("register_affine recovers a small anisotropic warp") {
    // True map q = A p + t with 1% scales and <= 2 voxel translation.
    AffineTransform3D truth;
    truth.a = {1.01, 0.0, 0.0, 0.0, 0.99, 0.0, 0.0, 0.0, 1.005};
    truth.t = {1.5, -2.0, 1.0};

    const Dims3 dims{32, 32, 32};
    Volume fixed = sample_field(dims, truth);                             // fixed[p] = F(A p + t)
    Volume moving = sample_field(dims, AffineTransform3D::identity());    // moving[q] = F(q)

    RegistrationResult init = register_translation(fixed, moving, 4.0);
    RegistrationResult r = register_affine(fixed, moving, init.transform);

    // Compare recovered vs true mapping at the FOV corners.
    double worst = 0.0;
    for (double z : {0.0, 31.0})
        for (double y : {0.0, 31.0})
            for (double x : {0.0, 31.0}) {
                Vec3d a = r.transform.apply({z, y, x});
                Vec3d b = truth.apply({z, y, x});
                worst = std::max({worst, std::abs(a.z - b.z), std::abs(a.y - b.y),
                                  std::abs(a.x - b.x)});
            }
    CHECK(worst < 0.25);
    CHECK(r.ncc >= init.ncc - 1e-12);
}

TEST_CASE("register_affine never returns a worse transform than its init") {
    Volume fixed = sample_field_shift({16, 16, 16}, {0, 0, 0});
    Volume moving = testutil::random_volume({16, 16, 16}, 31);
    AffineTransform3D init = AffineTransform3D::identity();
    double base = ncc(fixed, resample_affine(moving, init, GridSpec::of(fixed)));
    RegistrationResult r = register_affine(fixed, moving, init);
    CHECK(r.ncc >= base - 1e-12);
}

TEST_CASE("crop_and_mask keeps the leading region and the resampling mask") {
    Volume m = testutil::random_volume({32, 24, 24}, 37);
    Volume reg =
        resample_affine(m, AffineTransform3D::translation({10, 0, 0}), GridSpec::of(m));
    Volume crop = crop_and_mask(reg, {32, 24, 24});
    CHECK(crop.dims == Dims3{32, 24, 24});

    // Sampling z+10 leaves slices z >= 22 without source voxels.
    for (std::size_t z = 0; z < 32; ++z) {
        bool expect = z < 22;
        CHECK((crop.mask[crop.index(z, 12, 12)] != 0) == expect);
    }

    Volume small = crop_and_mask(reg, {16, 20, 20});
    CHECK(small.dims == Dims3{16, 20, 20});
    for (std::size_t z = 0; z < 16; ++z)
        for (std::size_t y = 0; y < 20; ++y)
            for (std::size_t x = 0; x < 20; ++x) CHECK(small.at(z, y, x) == reg.at(z, y, x));

    auto [threw, kind] = catch_kind([&] { crop_and_mask(reg, {33, 24, 24}); });
    CHECK(threw);
    CHECK(kind == ErrorKind::range);
}

TEST_CASE("transforms round-trip through their JSON sidecar") {
    TempDir tmp("xform");
    RegistrationResult r;
    r.transform.a = {1.01, 0.001, -0.002, 0.0, 0.99, 0.003, 0.004, -0.005, 1.0};
    r.transform.t = {1.25, -2.5, 0.75};
    r.ncc = 0.987654321;
    r.low_confidence = false;

    save_transform(tmp / "t.json", r, {8.0, 4.0, 4.0}, {16.0, 16.0, 16.0});
    RegistrationResult back = load_transform(tmp / "t.json");
    for (int i = 0; i < 9; ++i)
        CHECK(back.transform.a[static_cast<std::size_t>(i)] ==
              r.transform.a[static_cast<std::size_t>(i)]);
    for (int i = 0; i < 3; ++i)
        CHECK(back.transform.t[static_cast<std::size_t>(i)] ==
              r.transform.t[static_cast<std::size_t>(i)]);
    CHECK(back.ncc == r.ncc);
    CHECK(back.low_confidence == r.low_confidence);
}
